"""Learning-rate range test.

Trains a fresh autoencoder for ``steps`` minibatch steps while the learning
rate grows exponentially from ``lr_min`` to ``lr_max``. The loss is smoothed
with a bias-corrected moving average. After a short warm-up the sweep stops
once the smoothed loss exceeds four times its running minimum, and the
suggested rate is one decade below that point, or the rate with the lowest
smoothed loss when that decade falls below ``lr_min``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from baekit.autoencoder import ArchitectureSpec, build
from baekit.bayes import TrainConfig
from baekit.bayes._fit import batch_size_for, reconstruction_loss
from baekit.nn.layers import ParameterError, as_matrix
from baekit.nn.optim import OptimizerState, adam_step
from baekit.nn.rng import RngStream

SMOOTHING = 0.98
DIVERGENCE_FACTOR = 4.0
# steps before the divergence stop applies; single-batch losses are too noisy to compare
WARMUP_STEPS = 5


class LRFinderError(RuntimeError):
    """Raised when the very first loss is not finite."""


@dataclass
class LRFinderResult:
    suggested_lr: float
    lrs: list[float] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    diverged_at: float | None = None


def lr_range_test(
    spec: ArchitectureSpec,
    data: np.ndarray,
    lr_min: float = 1e-6,
    lr_max: float = 1.0,
    steps: int = 100,
    *,
    rng: RngStream | None = None,
    cfg: TrainConfig | None = None,
) -> LRFinderResult:
    if not (lr_min > 0 and lr_max > 0):
        raise ParameterError(f"learning rates must be positive, got {lr_min:g} and {lr_max:g}")
    if lr_min >= lr_max:
        raise ParameterError(f"lr_min ({lr_min:g}) must be below lr_max ({lr_max:g})")
    if steps < 2:
        raise ParameterError(f"steps must be >= 2, got {steps}")
    data = as_matrix(data, name="data")
    rng = rng or RngStream(0)
    cfg = cfg or TrainConfig()

    model = build(spec, rng.child(0))
    loss_fn = reconstruction_loss(model, cfg)
    state = OptimizerState(lr=lr_min, weight_decay=cfg.weight_decay)
    decay = frozenset(model.weight_names())
    n = data.shape[0]
    batch = batch_size_for(n, cfg)
    shuffle = rng.child(1)
    order = shuffle.child(0).generator().permutation(n)

    ratio = lr_max / lr_min
    result = LRFinderResult(suggested_lr=lr_max / 10.0)
    average = 0.0
    best = math.inf
    cursor = 0
    for i in range(steps):
        lr = lr_min * ratio ** (i / (steps - 1))
        if cursor + batch > n:
            order = shuffle.child(i).generator().permutation(n)
            cursor = 0
        idx = order[cursor : cursor + batch]
        cursor += batch
        loss, grads = loss_fn(model.params, data[idx], rng.child(2).child(i))
        if not math.isfinite(loss):
            if not result.lrs:
                raise LRFinderError(f"loss is not finite at lr {lr:g}; try a smaller lr_min")
            result.diverged_at = lr
            break
        average = SMOOTHING * average + (1.0 - SMOOTHING) * loss
        smoothed = average / (1.0 - SMOOTHING ** (i + 1))
        if i >= WARMUP_STEPS and smoothed > DIVERGENCE_FACTOR * best:
            result.diverged_at = lr
            break
        if i >= WARMUP_STEPS - 1:
            best = min(best, smoothed)
        result.lrs.append(lr)
        result.losses.append(smoothed)
        adam_step(model.params, grads, state, decay_mask=decay, lr=lr)

    if result.diverged_at is None:
        suggested = lr_max / 10.0
    elif result.diverged_at / 10.0 >= lr_min:
        suggested = result.diverged_at / 10.0
    else:
        suggested = result.lrs[int(np.argmin(result.losses))]
    result.suggested_lr = float(np.clip(suggested, lr_min, lr_max))
    return result
