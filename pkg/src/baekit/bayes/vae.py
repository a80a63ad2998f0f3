"""Variational autoencoder: deterministic weights, stochastic latent embedding.

The encoder ends in a linear mean head and a linear log-variance head. The
objective is the mean per-sample NLL plus ``kl_weight`` times the mean
per-sample KL to ``N(0, I)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from baekit.autoencoder import (
    LOG_VARIANCE_HEAD,
    ArchitectureSpec,
    AutoencoderModel,
    backward,
    build,
    forward_train,
    nll_gaussian,
    nll_gaussian_grad,
)
from baekit.bayes import DivergenceError, InferenceMethod, PosteriorEnsemble, TrainConfig, register
from baekit.bayes._fit import fit
from baekit.nn.layers import as_matrix
from baekit.nn.rng import RngStream

Params = dict[str, np.ndarray]

MAX_LOG_VARIANCE = 20.0


@dataclass
class VAEHead:
    """Latent projections at the encoder output, ``(latent, hidden)`` each."""

    latent_mean: np.ndarray
    latent_log_variance: np.ndarray

    @classmethod
    def from_model(cls, model: AutoencoderModel) -> VAEHead:
        depth = model.spec.depth
        return cls(model.params[f"encoder.{depth}.weights"], model.params[LOG_VARIANCE_HEAD])


def encode(model: AutoencoderModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Latent mean and log-variance of ``q(z | x)``."""
    _, trace = forward_train(model, as_matrix(x))
    assert trace.latent_mean is not None and trace.latent_log_variance is not None
    return trace.latent_mean, trace.latent_log_variance


def kl_standard_normal(mean: np.ndarray, log_variance: np.ndarray) -> np.ndarray:
    """Per-sample ``KL(N(mean, exp(log_variance)) || N(0, I))``."""
    mean = np.atleast_2d(mean)
    log_variance = np.atleast_2d(log_variance)
    return 0.5 * (mean**2 + np.exp(log_variance) - 1.0 - log_variance).sum(axis=1)


def train_vae(
    spec: ArchitectureSpec, data: np.ndarray, cfg: TrainConfig, rng: RngStream
) -> PosteriorEnsemble:
    model = build(spec, rng.child(0), variational=True)
    kl_scale = cfg.kl_weight

    def loss_fn(params: Params, batch: np.ndarray, step_rng: RngStream) -> tuple[float, Params]:
        current = model.with_params(params)
        noise = step_rng.generator().standard_normal((batch.shape[0], spec.latent_dim))
        x_hat, trace = forward_train(current, batch, latent_noise=noise)
        mu, lv = trace.latent_mean, trace.latent_log_variance
        assert mu is not None and lv is not None
        n = batch.shape[0]
        kl = kl_standard_normal(mu, lv)
        loss = float(nll_gaussian(batch, x_hat).mean() + kl_scale * kl.mean())
        grads = backward(
            current,
            trace,
            nll_gaussian_grad(batch, x_hat),
            grad_latent_mean=kl_scale * mu / n,
            grad_latent_log_variance=kl_scale * 0.5 * (np.exp(lv) - 1.0) / n,
        )
        return loss, grads

    def check(params: Params, epoch: int) -> None:
        _, lv = encode(model.with_params(params), data)
        worst = float(lv.max())
        if worst > MAX_LOG_VARIANCE:
            raise DivergenceError(epoch, f"latent log-variance {worst:.1f} exceeds {MAX_LOG_VARIANCE:g}")

    history = fit(
        model.params,
        loss_fn,
        data,
        cfg,
        rng.child(1),
        decay_names=frozenset(model.weight_names()),
        check=check,
    )
    return PosteriorEnsemble(
        method=InferenceMethod.VAE,
        spec=spec,
        members=[model.params],
        n_samples=cfg.n_samples,
        seed=rng.seed,
        variational=True,
        prior_variance=cfg.prior_variance,
        train_losses=[history],
    )


register(InferenceMethod.VAE, train_vae)
