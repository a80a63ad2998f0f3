"""Adam with coupled L2 weight decay, and learning-rate schedules.

Parameters and gradients are dicts of arrays keyed by parameter name, so the
same optimizer serves plain autoencoders, Bayes-by-Backprop mean/log-variance
pairs and anchored ensemble members.

Weight decay is added to the gradient before the moment updates
(``g + wd * theta``). With an ``anchor`` the decay pulls towards the anchor
instead of zero: ``g + wd * (theta - anchor)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from baekit.nn.layers import ParameterError, ShapeError

Params = dict[str, np.ndarray]


@dataclass
class OptimizerState:
    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: Params = field(default_factory=dict)
    second_moment: Params = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ParameterError(f"learning rate must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ParameterError(
                f"weight decay must be non-negative, got {self.weight_decay}"
            )


def adam_step(
    params: Params,
    grads: Params,
    state: OptimizerState,
    *,
    anchor: Params | None = None,
    decay_mask: frozenset[str] | None = None,
    lr: float | None = None,
) -> tuple[Params, OptimizerState]:
    """One bias-corrected Adam update, applied in place.

    ``decay_mask`` restricts weight decay to the named parameters (default: all).
    ``lr`` overrides ``state.lr`` for this step, for schedules.
    """
    state.step_count += 1
    t = state.step_count
    step_lr = state.lr if lr is None else lr
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != theta.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {theta.shape}")
        if state.weight_decay and (decay_mask is None or name in decay_mask):
            centre = anchor[name] if anchor is not None and name in anchor else 0.0
            g = g + state.weight_decay * (theta - centre)
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None or v is None:
            m = np.zeros_like(theta)
            v = np.zeros_like(theta)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        theta -= step_lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    return params, state


def triangular_lr(step: int, *, base_lr: float, max_lr: float, half_cycle: int) -> float:
    """Triangular cyclic learning rate: linear ramp base->max->base every ``2 * half_cycle`` steps."""
    if half_cycle < 1:
        raise ParameterError(f"half cycle must be >= 1 step, got {half_cycle}")
    cycle_pos = step % (2 * half_cycle)
    frac = cycle_pos / half_cycle if cycle_pos <= half_cycle else 2.0 - cycle_pos / half_cycle
    return base_lr + (max_lr - base_lr) * frac
