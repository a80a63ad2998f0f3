"""Shared fixtures for baekit tests."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from baekit.autoencoder import ArchitectureSpec
from baekit.bayes import TrainConfig
from baekit.nn.rng import RngStream

# ------------------------------------------------------------------------------------------------------------------------
# Numeric helpers
# ------------------------------------------------------------------------------------------------------------------------


def finite_difference(fn, params: dict[str, np.ndarray], h: float = 1e-5) -> dict[str, np.ndarray]:
    """Central finite-difference gradient of scalar ``fn(params)`` for every entry of every array."""
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = fn(params)
            flat[i] = old - h
            down = fn(params)
            flat[i] = old
            g.reshape(-1)[i] = (up - down) / (2 * h)
        grads[name] = g
    return grads


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


# ------------------------------------------------------------------------------------------------------------------------
# Data and models
# ------------------------------------------------------------------------------------------------------------------------


@pytest.fixture()
def blob():
    """Eight 2-D points in a tight Gaussian blob inside [0, 1]^2."""
    gen = RngStream(123).generator()
    return np.clip(0.5 + 0.05 * gen.standard_normal((8, 2)), 0.0, 1.0)


@pytest.fixture()
def tiny_spec():
    return ArchitectureSpec(input_dim=2, hidden_widths=(8, 8), latent_factor=0.5)


@pytest.fixture()
def quick_cfg():
    """A few full-batch epochs; enough to exercise every trainer quickly."""
    return TrainConfig(epochs=5, lr=5e-3, M=3)


EXAMPLE_CONFIG = """\
schema_version = 1
seeds = [0, 1]

[dataset]
kind = "toy"
toy = "blobs"
n = 60
noise = 0.3
anomaly = "ring"
n_anomalies = 20
anomaly_radius = 2.5

[train]
epochs = 3
lr = 0.005
M = 2
hidden_widths = [8, 8]

[nngp]
depth = 3

[[runs]]
method = "ensemble"
arch_type = "A"

[[runs]]
method = "ensemble"
arch_type = "B"

[output]
format = "jsonl"
"""


@pytest.fixture()
def example_config(tmp_path: Path) -> Path:
    path = tmp_path / "experiment.toml"
    path.write_text(EXAMPLE_CONFIG.replace('format = "jsonl"', f'format = "jsonl"\ndir = "{tmp_path / "out"}"'))
    return path
