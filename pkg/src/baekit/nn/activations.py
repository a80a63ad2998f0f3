"""Elementwise activation functions and their derivatives.

Each activation is registered as an :class:`ActivationDef` holding the forward
map and its derivative with respect to the pre-activation. Layers look them up
by :class:`ActivationKind`, the same way the config file names them.
"""

from __future__ import annotations

import enum
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.stats import norm

LEAKY_RELU_SLOPE = 0.01
SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805


class ActivationKind(enum.StrEnum):
    LEAKY_RELU = "leaky_relu"
    SELU = "selu"
    SIGMOID = "sigmoid"
    GELU = "gelu"
    IDENTITY = "identity"


_Fn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ActivationDef:
    kind: ActivationKind
    fn: _Fn
    # d fn / d x, evaluated at the pre-activation x
    grad: _Fn
    # Kaiming-style fan-in gain: init std = sqrt(gain / fan_in)
    init_gain: float


def _leaky_relu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, LEAKY_RELU_SLOPE * x)


def _leaky_relu_grad(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, 1.0, LEAKY_RELU_SLOPE)


def _selu(x: np.ndarray) -> np.ndarray:
    return SELU_SCALE * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))


def _selu_grad(x: np.ndarray) -> np.ndarray:
    return SELU_SCALE * np.where(x > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(x, 0.0)))


def _sigmoid_grad(x: np.ndarray) -> np.ndarray:
    s = special.expit(x)
    return s * (1.0 - s)


def _gelu(x: np.ndarray) -> np.ndarray:
    # exact form x * Phi(x)
    return x * special.ndtr(x)


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    return special.ndtr(x) + x * norm.pdf(x)


ACTIVATIONS: dict[ActivationKind, ActivationDef] = {}


def register(activation: ActivationDef) -> None:
    ACTIVATIONS[activation.kind] = activation


def get(kind: ActivationKind | str) -> ActivationDef:
    try:
        return ACTIVATIONS[ActivationKind(kind)]
    except ValueError:
        known = ", ".join(k.value for k in ActivationKind)
        raise ValueError(f"unknown activation {kind!r} (known: {known})") from None


def activation_apply(kind: ActivationKind | str, x: np.ndarray) -> np.ndarray:
    """Apply an activation elementwise."""
    return get(kind).fn(np.asarray(x, dtype=np.float64))


register(
    ActivationDef(
        ActivationKind.LEAKY_RELU,
        _leaky_relu,
        _leaky_relu_grad,
        init_gain=2.0 / (1.0 + LEAKY_RELU_SLOPE**2),
    )
)
register(ActivationDef(ActivationKind.SELU, _selu, _selu_grad, init_gain=1.0))
register(
    ActivationDef(ActivationKind.SIGMOID, special.expit, _sigmoid_grad, init_gain=1.0)
)
register(ActivationDef(ActivationKind.GELU, _gelu, _gelu_grad, init_gain=2.0))
register(
    ActivationDef(
        ActivationKind.IDENTITY,
        lambda x: x,
        np.ones_like,
        init_gain=1.0,
    )
)
