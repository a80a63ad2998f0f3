"""Minimal dense neural-network substrate (float64, NumPy).

Bias-free dense layers with layer normalisation, the activations used by the
autoencoders, reverse-mode gradients, Adam, dropout masks and seeded streams.
"""

from __future__ import annotations

from baekit.nn.activations import ActivationKind, activation_apply
from baekit.nn.layers import (
    Dense,
    LayerParams,
    LossKind,
    ParameterError,
    ShapeError,
    as_matrix,
    backprop,
    dense_forward,
    dropout_mask,
    layer_norm,
)
from baekit.nn.optim import OptimizerState, adam_step
from baekit.nn.rng import RngStream

__all__ = [
    "ActivationKind",
    "Dense",
    "LayerParams",
    "LossKind",
    "OptimizerState",
    "ParameterError",
    "RngStream",
    "ShapeError",
    "activation_apply",
    "adam_step",
    "as_matrix",
    "backprop",
    "dense_forward",
    "dropout_mask",
    "layer_norm",
]
