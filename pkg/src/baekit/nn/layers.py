"""Bias-free dense layers with optional layer normalisation.

A dense layer computes ``activation(layer_norm(x @ W.T))``: linear map, then
normalisation, then the nonlinearity. There is no additive bias; the layer-norm
shift is the only offset a layer can learn.

Forward functions come in two flavours: the plain one returns the output, the
``*_cached`` one also returns what :func:`dense_backward` needs. Networks
composed of plain chains can be differentiated with :func:`backprop`; the
autoencoder wires skip connections itself from the same primitives.
"""

from __future__ import annotations

import enum
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from baekit.nn import activations
from baekit.nn.activations import ActivationKind
from baekit.nn.rng import RngStream

LAYER_NORM_EPS = 1e-5


class ShapeError(ValueError):
    """Raised when array dimensions do not line up."""


class ParameterError(ValueError):
    """Raised when a numeric parameter is outside its valid range."""


def as_matrix(x: np.ndarray | Sequence, *, name: str = "input") -> np.ndarray:
    """Coerce to a finite 2-D float64 array (a single vector becomes one row)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains non-finite values")
    return arr


@dataclass
class LayerParams:
    weights: np.ndarray  # (out, in)
    norm_gain: np.ndarray | None = None
    norm_bias: np.ndarray | None = None

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def has_norm(self) -> bool:
        return self.norm_gain is not None

    @classmethod
    def init(
        cls,
        in_dim: int,
        out_dim: int,
        rng: np.random.Generator,
        *,
        gain: float = 2.0,
        use_norm: bool = False,
    ) -> LayerParams:
        """Zero-mean Gaussian weights with fan-in scaling ``std = sqrt(gain / in_dim)``."""
        if in_dim < 1 or out_dim < 1:
            raise ParameterError(f"layer widths must be >= 1, got {in_dim}->{out_dim}")
        weights = rng.normal(0.0, np.sqrt(gain / in_dim), size=(out_dim, in_dim))
        if not use_norm:
            return cls(weights)
        return cls(weights, np.ones(out_dim), np.zeros(out_dim))


@dataclass
class DenseCache:
    x: np.ndarray
    linear: np.ndarray
    normalized: np.ndarray | None
    inv_std: np.ndarray | None
    pre_activation: np.ndarray


# ----------------------------------------------------------------------------------------------------------------------
# Layer normalisation
# ----------------------------------------------------------------------------------------------------------------------


def _layer_norm(
    x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    normalized = (x - mean) * inv_std
    return normalized * gain + bias, normalized, inv_std


def layer_norm(
    x: np.ndarray,
    gain: np.ndarray | None = None,
    bias: np.ndarray | None = None,
    eps: float = LAYER_NORM_EPS,
) -> np.ndarray:
    """Normalise each row to zero mean and unit variance, then scale and shift."""
    x = as_matrix(x)
    gain = np.ones(x.shape[1]) if gain is None else np.asarray(gain, dtype=np.float64)
    bias = np.zeros(x.shape[1]) if bias is None else np.asarray(bias, dtype=np.float64)
    if gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ShapeError(
            f"gain/bias must have length {x.shape[1]}, got {gain.shape} and {bias.shape}"
        )
    return _layer_norm(x, gain, bias, eps)[0]


def _layer_norm_backward(
    grad_out: np.ndarray, normalized: np.ndarray, inv_std: np.ndarray, gain: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    grad_gain = (grad_out * normalized).sum(axis=0)
    grad_bias = grad_out.sum(axis=0)
    g = grad_out * gain
    grad_x = inv_std * (
        g
        - g.mean(axis=1, keepdims=True)
        - normalized * (g * normalized).mean(axis=1, keepdims=True)
    )
    return grad_x, grad_gain, grad_bias


# ----------------------------------------------------------------------------------------------------------------------
# Dense layer
# ----------------------------------------------------------------------------------------------------------------------


def dense_forward_cached(
    x: np.ndarray,
    layer: LayerParams,
    activation: ActivationKind | str,
    use_norm: bool,
) -> tuple[np.ndarray, DenseCache]:
    if x.shape[1] != layer.in_dim:
        raise ShapeError(
            f"layer expects {layer.in_dim} input features, got {x.shape[1]}"
        )
    if use_norm and not layer.has_norm:
        raise ShapeError("layer has no normalisation parameters")
    linear = x @ layer.weights.T
    normalized = inv_std = None
    pre = linear
    if use_norm:
        assert layer.norm_gain is not None and layer.norm_bias is not None
        pre, normalized, inv_std = _layer_norm(
            linear, layer.norm_gain, layer.norm_bias, LAYER_NORM_EPS
        )
    out = activations.get(activation).fn(pre)
    return out, DenseCache(x, linear, normalized, inv_std, pre)


def dense_forward(
    x: np.ndarray,
    layer: LayerParams,
    activation: ActivationKind | str,
    use_norm: bool = False,
) -> np.ndarray:
    """Linear map, optional layer norm, activation."""
    return dense_forward_cached(as_matrix(x), layer, activation, use_norm)[0]


def dense_backward(
    grad_out: np.ndarray,
    cache: DenseCache,
    layer: LayerParams,
    activation: ActivationKind | str,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Return ``(dL/dx, {"weights": ..., "norm_gain": ..., "norm_bias": ...})``."""
    grad_pre = grad_out * activations.get(activation).grad(cache.pre_activation)
    grads: dict[str, np.ndarray] = {}
    grad_linear = grad_pre
    if cache.normalized is not None:
        assert cache.inv_std is not None and layer.norm_gain is not None
        grad_linear, grads["norm_gain"], grads["norm_bias"] = _layer_norm_backward(
            grad_pre, cache.normalized, cache.inv_std, layer.norm_gain
        )
    grads["weights"] = grad_linear.T @ cache.x
    return grad_linear @ layer.weights, grads


def dropout_mask(shape: tuple[int, ...], rate: float, rng: RngStream) -> np.ndarray:
    """Inverted-dropout mask: entries are 0 or ``1 / (1 - rate)``."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.generator().random(shape) >= rate
    return keep / (1.0 - rate)


# ----------------------------------------------------------------------------------------------------------------------
# Plain chains
# ----------------------------------------------------------------------------------------------------------------------


class LossKind(enum.StrEnum):
    # 0.5 * sum over features of squared residual, averaged over rows
    HALF_SQUARED = "half_squared"
    # Gaussian NLL with unit variance, averaged over features and rows
    GAUSSIAN_NLL = "gaussian_nll"


@dataclass
class Dense:
    params: LayerParams
    activation: ActivationKind = ActivationKind.IDENTITY
    use_norm: bool = False


def loss_and_grad(
    kind: LossKind | str, output: np.ndarray, target: np.ndarray
) -> tuple[float, np.ndarray]:
    """Loss value and its gradient with respect to ``output``."""
    if output.shape != target.shape:
        raise ShapeError(f"output {output.shape} and target {target.shape} differ")
    n, d = output.shape
    residual = output - target
    if LossKind(kind) is LossKind.HALF_SQUARED:
        return 0.5 * float((residual**2).sum()) / n, residual / n
    return 0.5 * float((residual**2).sum()) / (n * d), residual / (n * d)


def backprop(
    network: Sequence[Dense],
    x: np.ndarray,
    loss: LossKind | str = LossKind.HALF_SQUARED,
    target: np.ndarray | None = None,
) -> tuple[float, list[dict[str, np.ndarray]]]:
    """Reverse-mode gradients of a layer chain.

    ``target`` defaults to ``x`` (reconstruction). Returns the loss and one
    gradient dict per layer, shaped like that layer's parameters.
    """
    x = as_matrix(x)
    target = x if target is None else as_matrix(target, name="target")
    h = x
    caches = []
    for layer in network:
        h, cache = dense_forward_cached(h, layer.params, layer.activation, layer.use_norm)
        caches.append(cache)
    value, grad = loss_and_grad(loss, h, target)
    grads: list[dict[str, np.ndarray]] = [{} for _ in network]
    for i in reversed(range(len(network))):
        layer = network[i]
        grad, grads[i] = dense_backward(grad, caches[i], layer.params, layer.activation)
    return value, grads
