"""Shared minibatch training loop.

Every trainer supplies a ``loss_fn(params, batch, rng) -> (loss, grads)`` and
lets :func:`fit` handle shuffling, batching, the learning-rate schedule, Adam
and divergence checks. Random streams are split so that the epoch shuffles
(``rng.child(0)``) and the per-step noise (``rng.child(1)``) never overlap.
"""

from __future__ import annotations

import math
from collections.abc import Callable

import numpy as np

from baekit.autoencoder import (
    AutoencoderModel,
    backward,
    forward_train,
    nll_gaussian,
    nll_gaussian_grad,
)
from baekit.bayes import DivergenceError, TrainConfig
from baekit.nn.optim import OptimizerState, adam_step, triangular_lr
from baekit.nn.rng import RngStream

Params = dict[str, np.ndarray]
LossFn = Callable[[Params, np.ndarray, RngStream], tuple[float, Params]]
EpochCheck = Callable[[Params, int], None]


def batch_size_for(n: int, cfg: TrainConfig) -> int:
    return n if n < cfg.full_batch_below else min(cfg.batch_size, n)


def fit(
    params: Params,
    loss_fn: LossFn,
    data: np.ndarray,
    cfg: TrainConfig,
    rng: RngStream,
    *,
    weight_decay: float | None = None,
    anchor: Params | None = None,
    decay_names: frozenset[str] | None = None,
    check: EpochCheck | None = None,
) -> list[float]:
    """Train ``params`` in place; returns the mean training loss of every epoch.

    The reported loss includes the weight-decay penalty
    ``0.5 * wd * ||theta - anchor||^2`` over ``decay_names``.
    """
    n = data.shape[0]
    batch = batch_size_for(n, cfg)
    steps_per_epoch = math.ceil(n / batch)
    wd = cfg.weight_decay if weight_decay is None else weight_decay
    state = OptimizerState(lr=cfg.lr, weight_decay=wd)
    shuffle_rng = rng.child(0)
    noise_rng = rng.child(1)
    half_cycle = max(1, cfg.cycle_epochs * steps_per_epoch)

    history: list[float] = []
    for epoch in range(cfg.epochs):
        order = shuffle_rng.child(epoch).generator().permutation(n) if batch < n else np.arange(n)
        total = 0.0
        for b in range(steps_per_epoch):
            idx = order[b * batch : (b + 1) * batch]
            step = epoch * steps_per_epoch + b
            loss, grads = loss_fn(params, data[idx], noise_rng.child(step))
            if not math.isfinite(loss):
                raise DivergenceError(epoch)
            lr = (
                triangular_lr(step, base_lr=cfg.lr / 10, max_lr=cfg.lr, half_cycle=half_cycle)
                if cfg.cyclic_lr
                else None
            )
            adam_step(params, grads, state, anchor=anchor, decay_mask=decay_names, lr=lr)
            total += loss * len(idx)
        epoch_loss = total / n + _penalty(params, wd, anchor, decay_names)
        if not math.isfinite(epoch_loss):
            raise DivergenceError(epoch)
        history.append(epoch_loss)
        if check is not None:
            check(params, epoch)
    return history


def _penalty(
    params: Params, wd: float, anchor: Params | None, names: frozenset[str] | None
) -> float:
    if wd == 0.0:
        return 0.0
    total = 0.0
    for name, theta in params.items():
        if names is not None and name not in names:
            continue
        centre = anchor[name] if anchor is not None and name in anchor else 0.0
        total += float(((theta - centre) ** 2).sum())
    return 0.5 * wd * total


def reconstruction_loss(
    model: AutoencoderModel,
    cfg: TrainConfig,
    *,
    dropout: bool = False,
) -> LossFn:
    """Mean Gaussian NLL of a (possibly dropout-perturbed) reconstruction."""

    def loss_fn(params: Params, batch: np.ndarray, rng: RngStream) -> tuple[float, Params]:
        current = model.with_params(params)
        x_hat, trace = forward_train(
            current,
            batch,
            dropout_rate=cfg.dropout_rate if dropout else 0.0,
            dropout_rng=rng if dropout else None,
        )
        loss = float(nll_gaussian(batch, x_hat).mean())
        return loss, backward(current, trace, nll_gaussian_grad(batch, x_hat))

    return loss_fn
