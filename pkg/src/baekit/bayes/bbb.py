"""Bayes by Backprop: a factorised Gaussian posterior over every weight.

Each linear weight has a mean and a log-variance. Training draws one weight
sample per step via the reparameterisation ``w = mu + exp(lv / 2) * eps`` and
minimises the mean reconstruction NLL plus ``KL(q || prior) / N_train`` with the
closed-form Gaussian KL. Layer-norm gains and biases stay point estimates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from baekit.autoencoder import (
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
from baekit.nn.layers import ParameterError
from baekit.nn.rng import RngStream

Params = dict[str, np.ndarray]

INIT_LOG_VARIANCE = -9.0
MAX_LOG_VARIANCE = 20.0
_LV_SUFFIX = ".log_variance"


@dataclass
class VariationalLayer:
    weight_mean: np.ndarray
    weight_log_variance: np.ndarray

    def __post_init__(self) -> None:
        if self.weight_mean.shape != self.weight_log_variance.shape:
            raise ParameterError(
                f"mean {self.weight_mean.shape} and log-variance "
                f"{self.weight_log_variance.shape} shapes differ"
            )

    @property
    def variance(self) -> np.ndarray:
        return np.exp(self.weight_log_variance)


def kl_gaussian(
    mean: np.ndarray, log_variance: np.ndarray, prior_variance: float = 1.0
) -> float:
    """``KL(N(mean, exp(log_variance)) || N(0, prior_variance))`` summed over weights."""
    if prior_variance <= 0:
        raise ParameterError(f"prior_variance must be positive, got {prior_variance}")
    variance = np.exp(log_variance)
    per_weight = 0.5 * (
        np.log(prior_variance) - log_variance + (variance + mean**2) / prior_variance - 1.0
    )
    return float(per_weight.sum())


def kl_gaussian_grads(
    mean: np.ndarray, log_variance: np.ndarray, prior_variance: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    return mean / prior_variance, 0.5 * (np.exp(log_variance) / prior_variance - 1.0)


def sample_weights(means: Params, log_variances: Params, rng: RngStream) -> Params:
    """One posterior draw; parameters without a log-variance are copied as-is."""
    gen = rng.generator()
    draw: Params = {}
    for name, mu in means.items():
        lv = log_variances.get(name)
        if lv is None:
            draw[name] = mu
        else:
            draw[name] = mu + np.exp(0.5 * lv) * gen.standard_normal(mu.shape)
    return draw


def _split(state: Params) -> tuple[Params, Params]:
    means = {k: v for k, v in state.items() if not k.endswith(_LV_SUFFIX)}
    log_vars = {k[: -len(_LV_SUFFIX)]: v for k, v in state.items() if k.endswith(_LV_SUFFIX)}
    return means, log_vars


def train_bbb(
    spec: ArchitectureSpec, data: np.ndarray, cfg: TrainConfig, rng: RngStream
) -> PosteriorEnsemble:
    model = build(spec, rng.child(0))
    n_train = data.shape[0]
    prior = cfg.prior_variance
    # means and log-variances are optimised together as one flat parameter set
    state: Params = dict(model.params)
    for name in model.weight_names():
        state[name + _LV_SUFFIX] = np.full_like(model.params[name], INIT_LOG_VARIANCE)

    def loss_fn(params: Params, batch: np.ndarray, step_rng: RngStream) -> tuple[float, Params]:
        means, log_vars = _split(params)
        gen = step_rng.generator()
        eps = {name: gen.standard_normal(lv.shape) for name, lv in log_vars.items()}
        sampled = dict(means)
        for name, lv in log_vars.items():
            sampled[name] = means[name] + np.exp(0.5 * lv) * eps[name]
        current = AutoencoderModel(spec, sampled)
        x_hat, trace = forward_train(current, batch)
        grads = backward(current, trace, nll_gaussian_grad(batch, x_hat))

        kl = 0.0
        for name, lv in log_vars.items():
            mu = means[name]
            kl += kl_gaussian(mu, lv, prior)
            g_mu_kl, g_lv_kl = kl_gaussian_grads(mu, lv, prior)
            g_w = grads[name]
            grads[name] = g_w + g_mu_kl / n_train
            grads[name + _LV_SUFFIX] = g_w * eps[name] * 0.5 * np.exp(0.5 * lv) + g_lv_kl / n_train
        loss = float(nll_gaussian(batch, x_hat).mean()) + kl / n_train
        return loss, grads

    def check(params: Params, epoch: int) -> None:
        _, log_vars = _split(params)
        worst = max(float(lv.max()) for lv in log_vars.values())
        if worst > MAX_LOG_VARIANCE:
            raise DivergenceError(epoch, f"log-variance {worst:.1f} exceeds {MAX_LOG_VARIANCE:g}")

    history = fit(state, loss_fn, data, cfg, rng.child(1), weight_decay=0.0, check=check)
    means, log_vars = _split(state)
    return PosteriorEnsemble(
        method=InferenceMethod.BBB,
        spec=spec,
        members=[means],
        n_samples=cfg.n_samples,
        seed=rng.seed,
        log_variances=log_vars,
        prior_variance=prior,
        train_losses=[history],
    )


register(InferenceMethod.BBB, train_bbb)
