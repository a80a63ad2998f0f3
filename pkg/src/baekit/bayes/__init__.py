"""Posterior inference for autoencoders and the posterior-averaged NLL score.

Each inference method (deterministic MAP, MC dropout, Bayes by Backprop,
anchored ensembling, VAE) lives in its own module and registers a trainer here
at import time, mirroring how the sweep looks methods up by name. Every trainer
returns a :class:`PosteriorEnsemble`, which knows how to produce its M
reconstructions of a batch; :func:`predictive_nll` averages the Gaussian NLL over
them.
"""

from __future__ import annotations

import enum
from collections.abc import Callable, Iterator
from dataclasses import dataclass, field, replace

import numpy as np

from baekit.autoencoder import (
    ArchitectureSpec,
    AutoencoderModel,
    forward,
    forward_train,
    nll_gaussian,
)
from baekit.nn.layers import ParameterError, ShapeError, as_matrix
from baekit.nn.rng import RngStream

Params = dict[str, np.ndarray]

# Stream id reserved for prediction-time sampling (masks, weight draws, latent noise).
PREDICT_STREAM = 7


class InferenceMethod(enum.StrEnum):
    AE = "ae"
    MCD = "mcd"
    BBB = "bbb"
    ENSEMBLE = "ensemble"
    VAE = "vae"
    # infinitely-wide BAE; scored by baekit.nngp, never trained by a registered trainer
    INFINITE = "infinite"


DEFAULT_SAMPLES = {
    InferenceMethod.AE: 1,
    InferenceMethod.MCD: 100,
    InferenceMethod.BBB: 100,
    InferenceMethod.ENSEMBLE: 10,
    InferenceMethod.VAE: 100,
    InferenceMethod.INFINITE: 1,
}


class DivergenceError(RuntimeError):
    """Raised when training produces a non-finite loss or runaway variances."""

    def __init__(self, epoch: int, reason: str = "loss is not finite") -> None:
        super().__init__(f"training diverged at epoch {epoch}: {reason}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    lr: float = 1e-3
    weight_decay: float = 1e-10
    batch_size: int = 64
    # posterior samples; None picks the per-method default
    M: int | None = None
    method: InferenceMethod = InferenceMethod.ENSEMBLE
    prior_variance: float = 1.0
    dropout_rate: float = 0.2
    # VAE KL weight (beta)
    kl_weight: float = 1.0
    cyclic_lr: bool = False
    cycle_epochs: int = 4
    # datasets smaller than this train full-batch
    full_batch_below: int = 256

    def __post_init__(self) -> None:
        object.__setattr__(self, "method", InferenceMethod(self.method))
        if self.epochs < 0:
            raise ParameterError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr <= 0:
            raise ParameterError(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ParameterError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.M is not None and self.M < 0:
            raise ParameterError(f"M must be >= 0, got {self.M}")
        if self.prior_variance <= 0:
            raise ParameterError(f"prior_variance must be positive, got {self.prior_variance}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ParameterError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.kl_weight < 0:
            raise ParameterError(f"kl_weight must be >= 0, got {self.kl_weight}")

    @property
    def n_samples(self) -> int:
        return DEFAULT_SAMPLES[self.method] if self.M is None else self.M

    def with_method(self, method: InferenceMethod | str) -> TrainConfig:
        return replace(self, method=InferenceMethod(method))


@dataclass
class PosteriorEnsemble:
    """Approximate posterior over autoencoder parameters.

    ``members`` holds one parameter set per ensemble member for anchored
    ensembles, and a single set otherwise: the point estimate (AE), the
    dropout network (MCD), the variational means (BBB) or the VAE weights.
    """

    method: InferenceMethod
    spec: ArchitectureSpec
    members: list[Params]
    n_samples: int
    seed: int
    log_variances: Params | None = None
    dropout_rate: float = 0.0
    variational: bool = False
    prior_variance: float = 1.0
    anchors: list[Params] | None = None
    train_losses: list[list[float]] = field(default_factory=list)

    def model(self, member: int = 0) -> AutoencoderModel:
        return AutoencoderModel(self.spec, self.members[member], self.variational)

    def sample_stream(self) -> RngStream:
        return RngStream(self.seed, PREDICT_STREAM)

    def parameter_draws(self) -> Iterator[Params]:
        """The M parameter sets {theta_m}, deterministic for a given seed.

        MC dropout and VAE posteriors share one parameter set across draws; their
        stochasticity lives in the masks and latent noise of :meth:`reconstructions`.
        """
        if self.method is InferenceMethod.BBB:
            from baekit.bayes.bbb import sample_weights

            assert self.log_variances is not None
            stream = self.sample_stream()
            for m in range(self.n_samples):
                yield sample_weights(self.members[0], self.log_variances, stream.child(m))
        elif self.method is InferenceMethod.ENSEMBLE:
            yield from self.members[: self.n_samples]
        else:
            for _ in range(self.n_samples):
                yield self.members[0]

    def reconstructions(self, x: np.ndarray) -> Iterator[np.ndarray]:
        """Yield the M reconstructions of ``x`` in member order."""
        x = as_matrix(x)
        stream = self.sample_stream()
        if self.method is InferenceMethod.MCD:
            model = self.model()
            for m in range(self.n_samples):
                yield forward_train(
                    model, x, dropout_rate=self.dropout_rate, dropout_rng=stream.child(m)
                )[0]
        elif self.method is InferenceMethod.VAE:
            model = self.model()
            for m in range(self.n_samples):
                noise = stream.child(m).generator().standard_normal((x.shape[0], self.spec.latent_dim))
                yield forward_train(model, x, latent_noise=noise)[0]
        else:
            for params in self.parameter_draws():
                yield forward(AutoencoderModel(self.spec, params, self.variational), x)


def member_nlls(ensemble: PosteriorEnsemble, x_star: np.ndarray) -> np.ndarray:
    """``(M, N)`` array of per-draw NLLs."""
    if ensemble.n_samples < 1:
        raise ParameterError("posterior needs at least one sample (M >= 1)")
    x_star = as_matrix(x_star, name="x_star")
    if x_star.shape[1] != ensemble.spec.input_dim:
        raise ShapeError(
            f"expected {ensemble.spec.input_dim} features, got {x_star.shape[1]}"
        )
    return np.stack([nll_gaussian(x_star, x_hat) for x_hat in ensemble.reconstructions(x_star)])


def predictive_nll(ensemble: PosteriorEnsemble, x_star: np.ndarray) -> np.ndarray:
    """Posterior-averaged NLL per sample, ``(1/M) sum_m NLL(x*, x_hat_m)``."""
    return member_nlls(ensemble, x_star).mean(axis=0)


# ----------------------------------------------------------------------------------------------------------------------
# Trainer registry
# ----------------------------------------------------------------------------------------------------------------------

Trainer = Callable[[ArchitectureSpec, np.ndarray, TrainConfig, RngStream], PosteriorEnsemble]

TRAINERS: dict[InferenceMethod, Trainer] = {}


def register(method: InferenceMethod, trainer: Trainer) -> None:
    TRAINERS[method] = trainer


def get(method: InferenceMethod | str) -> Trainer:
    method = InferenceMethod(method)
    if method not in TRAINERS:
        raise ValueError(f"no trainer for method {method.value!r}")
    return TRAINERS[method]


def train(
    spec: ArchitectureSpec, data: np.ndarray, cfg: TrainConfig, rng: RngStream
) -> PosteriorEnsemble:
    """Train with the method named in ``cfg``."""
    return get(cfg.method)(spec, as_matrix(data, name="data"), cfg, rng)


# Method modules register their trainers on import, so they come after TRAINERS.
from baekit.bayes import bbb as _bbb  # noqa: E402, F401
from baekit.bayes import ensemble as _ensemble  # noqa: E402, F401
from baekit.bayes import deterministic as _deterministic  # noqa: E402, F401
from baekit.bayes import mcd as _mcd  # noqa: E402, F401
from baekit.bayes import vae as _vae  # noqa: E402, F401
