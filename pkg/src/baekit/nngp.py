"""Infinitely-wide Bayesian autoencoder via the NNGP kernel.

A bias-optional dense network whose widths all go to infinity is a Gaussian
process with a kernel given by a depth recursion::

    K^0(x, x')     = s_w * <x, x'> / d + s_b
    K^{l+1}(x, x') = s_w * E[phi(u) phi(v)] + s_b,   (u, v) ~ N(0, [[K^l(x,x), K^l(x,x')],
                                                                  [K^l(x,x'), K^l(x',x')]])

The expectation has closed forms for ReLU, leaky ReLU and erf; every other
activation (GELU, SELU) goes through a Monte-Carlo estimate. The infinite
autoencoder regresses the logits of the training inputs on the training
inputs with the exact GP posterior mean, squashes it with a sigmoid in place
of the output layer, and scores queries by the Gaussian NLL of that
reconstruction.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import linalg, special

from baekit.autoencoder import nll_gaussian
from baekit.nn.activations import LEAKY_RELU_SLOPE, ActivationKind, activation_apply
from baekit.nn.layers import ParameterError, ShapeError, as_matrix
from baekit.nn.rng import RngStream

DEFAULT_DEPTH = 7
DEFAULT_JITTER = 1e-6
DEFAULT_MC_SAMPLES = 100_000
JITTER_ESCALATIONS = 3
# GP targets are logit(x) with x clipped away from 0 and 1, so the sigmoid
# squash of the posterior mean gives back x on the training points
TARGET_CLIP = 1e-3
_MC_CHUNK = 10_000


class DomainError(ValueError):
    """Raised when kernel entries do not form a valid covariance."""


class ConditioningError(RuntimeError):
    """Raised when the GP system cannot be factorised even after adding jitter."""


class KernelActivation(enum.StrEnum):
    RELU = "relu"
    LEAKY_RELU = "leaky_relu"
    ERF = "erf"
    IDENTITY = "identity"
    # no closed form; Monte-Carlo only
    GELU = "gelu"
    SELU = "selu"


CLOSED_FORM = frozenset(
    {KernelActivation.RELU, KernelActivation.LEAKY_RELU, KernelActivation.ERF, KernelActivation.IDENTITY}
)
# without a bias these kernels are positively homogeneous
HOMOGENEOUS = frozenset({KernelActivation.RELU, KernelActivation.LEAKY_RELU, KernelActivation.IDENTITY})


def default_weight_variance(activation: KernelActivation, slope: float = LEAKY_RELU_SLOPE) -> float:
    """He-style variance that keeps the kernel diagonal stable over depth."""
    match activation:
        case KernelActivation.RELU | KernelActivation.GELU:
            return 2.0
        case KernelActivation.LEAKY_RELU:
            return 2.0 / (1.0 + slope**2)
        case _:
            return 1.0


@dataclass(frozen=True)
class NNGPConfig:
    depth: int = DEFAULT_DEPTH
    activation: KernelActivation = KernelActivation.LEAKY_RELU
    # None picks default_weight_variance(activation, slope)
    weight_variance: float | None = None
    bias_variance: float = 0.0
    slope: float = LEAKY_RELU_SLOPE
    jitter: float = DEFAULT_JITTER
    mc_samples: int = DEFAULT_MC_SAMPLES
    mc_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "activation", KernelActivation(self.activation))
        if self.depth < 1:
            raise ParameterError(f"depth must be >= 1, got {self.depth}")
        if self.jitter <= 0:
            raise ParameterError(f"jitter must be positive, got {self.jitter}")
        if self.weight_variance is not None and self.weight_variance <= 0:
            raise ParameterError(f"weight_variance must be positive, got {self.weight_variance}")
        if self.bias_variance < 0:
            raise ParameterError(f"bias_variance must be >= 0, got {self.bias_variance}")
        if self.mc_samples < 1:
            raise ParameterError(f"mc_samples must be >= 1, got {self.mc_samples}")

    @property
    def sigma_w2(self) -> float:
        if self.weight_variance is not None:
            return self.weight_variance
        return default_weight_variance(self.activation, self.slope)

    @property
    def monte_carlo(self) -> bool:
        return self.activation not in CLOSED_FORM

    def label(self) -> str:
        if self.activation is KernelActivation.LEAKY_RELU:
            return f"leaky_relu({self.slope:g})"
        if self.monte_carlo:
            return f"mc({self.activation.value}, {self.mc_samples})"
        return self.activation.value

    def to_dict(self) -> dict:
        d = asdict(self)
        d["activation"] = self.activation.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> NNGPConfig:
        return cls(**d)


@dataclass(frozen=True)
class KernelMatrix:
    entries: np.ndarray
    config: NNGPConfig
    symmetric: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape  # type: ignore[return-value]


# ----------------------------------------------------------------------------------------------------------------------
# Activation expectations
# ----------------------------------------------------------------------------------------------------------------------


def _check_covariance(k11, k12, k22) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    k11 = np.asarray(k11, dtype=np.float64)
    k12 = np.asarray(k12, dtype=np.float64)
    k22 = np.asarray(k22, dtype=np.float64)
    if np.any(k11 < -1e-12) or np.any(k22 < -1e-12):
        raise DomainError("kernel diagonal must be non-negative")
    k11 = np.maximum(k11, 0.0)
    k22 = np.maximum(k22, 0.0)
    bound = np.sqrt(k11 * k22)
    if np.any(np.abs(k12) > bound * (1.0 + 1e-12) + 1e-12):
        raise DomainError("|k12| exceeds sqrt(k11 * k22): correlation outside [-1, 1]")
    return k11, np.clip(k12, -bound, bound), k22


def _piecewise_linear(a: float, b: float, k11, k12, k22) -> np.ndarray:
    # E[phi(u) phi(v)] for phi(x) = a*x (x < 0), b*x (x >= 0)
    s = np.sqrt(np.maximum(k11 * k22 - k12**2, 0.0))
    theta = np.arctan2(s, k12)
    c = (a - b) ** 2 / (2.0 * math.pi)
    return c * s + ((a**2 + b**2) / 2.0 - c * theta) * k12


def activation_expectation(
    kind: KernelActivation | str,
    k11,
    k12,
    k22,
    *,
    slope: float = LEAKY_RELU_SLOPE,
):
    """``E[phi(u) phi(v)]`` for ``(u, v)`` zero-mean Gaussian with covariance ``[[k11, k12], [k12, k22]]``.

    Broadcasts over array arguments. Raises :class:`DomainError` for an invalid
    covariance and for activations without a closed form.
    """
    kind = KernelActivation(kind)
    k11, k12, k22 = _check_covariance(k11, k12, k22)
    match kind:
        case KernelActivation.RELU:
            out = _piecewise_linear(0.0, 1.0, k11, k12, k22)
        case KernelActivation.LEAKY_RELU:
            out = _piecewise_linear(slope, 1.0, k11, k12, k22)
        case KernelActivation.ERF:
            out = (2.0 / math.pi) * np.arcsin(
                np.clip(2.0 * k12 / np.sqrt((1.0 + 2.0 * k11) * (1.0 + 2.0 * k22)), -1.0, 1.0)
            )
        case KernelActivation.IDENTITY:
            out = k12
        case _:
            raise DomainError(f"no closed-form expectation for {kind.value}; use the Monte-Carlo path")
    return out if np.ndim(out) else float(out)


def _phi(kind: KernelActivation, x: np.ndarray, slope: float) -> np.ndarray:
    match kind:
        case KernelActivation.RELU:
            return np.maximum(x, 0.0)
        case KernelActivation.LEAKY_RELU:
            return np.where(x > 0, x, slope * x)
        case KernelActivation.ERF:
            return special.erf(x)
        case KernelActivation.GELU:
            return activation_apply(ActivationKind.GELU, x)
        case KernelActivation.SELU:
            return activation_apply(ActivationKind.SELU, x)
        case _:
            return x


@dataclass(frozen=True)
class MCEstimate:
    value: float
    stderr: float
    n_samples: int


def mc_activation_expectation(
    kind: KernelActivation | str,
    k11: float,
    k12: float,
    k22: float,
    n_samples: int,
    rng: RngStream,
    *,
    slope: float = LEAKY_RELU_SLOPE,
) -> MCEstimate:
    """Monte-Carlo estimate of :func:`activation_expectation` with its standard error."""
    if n_samples < 1:
        raise ParameterError(f"n_samples must be >= 1, got {n_samples}")
    kind = KernelActivation(kind)
    if k11 < 0 or k22 < 0 or k11 * k22 - k12**2 < -1e-12 * max(1.0, k11 * k22):
        raise DomainError(f"covariance [[{k11}, {k12}], [{k12}, {k22}]] is not positive semidefinite")
    z = rng.generator().standard_normal((2, n_samples))
    u = math.sqrt(k11) * z[0]
    if k11 > 0:
        v = (k12 / math.sqrt(k11)) * z[0] + math.sqrt(max(k22 - k12**2 / k11, 0.0)) * z[1]
    else:
        v = math.sqrt(k22) * z[1]
    prod = _phi(kind, u, slope) * _phi(kind, v, slope)
    stderr = float(prod.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else math.inf
    return MCEstimate(float(prod.mean()), stderr, n_samples)


# ----------------------------------------------------------------------------------------------------------------------
# Kernels
# ----------------------------------------------------------------------------------------------------------------------


def base_kernel(x: np.ndarray, x_prime: np.ndarray, config: NNGPConfig) -> float:
    """Layer-0 kernel ``s_w * <x, x'> / d + s_b``."""
    x = np.asarray(x, dtype=np.float64).ravel()
    x_prime = np.asarray(x_prime, dtype=np.float64).ravel()
    if x.shape != x_prime.shape:
        raise ShapeError(f"dimension mismatch: {x.shape[0]} vs {x_prime.shape[0]}")
    return config.sigma_w2 * float(x @ x_prime) / x.shape[0] + config.bias_variance


def _mc_layers(points: np.ndarray, config: NNGPConfig) -> np.ndarray:
    """Joint kernel of ``points`` after ``depth`` Monte-Carlo layers.

    Every layer draws pre-activations ``u = sqrt(K) z`` for all points jointly, so
    the estimate is a Gram matrix of sampled features and stays PSD.
    """
    d = points.shape[1]
    s_w, s_b = config.sigma_w2, config.bias_variance
    k = s_w * (points @ points.T) / d + s_b
    stream = RngStream(config.mc_seed, stream_id=3)
    for layer in range(config.depth):
        eigvals, eigvecs = np.linalg.eigh((k + k.T) / 2.0)
        root = eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))
        gen = stream.child(layer).generator()
        acc = np.zeros_like(k)
        remaining = config.mc_samples
        while remaining > 0:
            chunk = min(_MC_CHUNK, remaining)
            feats = _phi(config.activation, root @ gen.standard_normal((k.shape[0], chunk)), config.slope)
            acc += feats @ feats.T
            remaining -= chunk
        k = s_w * acc / config.mc_samples + s_b
    return (k + k.T) / 2.0


def kernel_matrix(
    x: np.ndarray, x_prime: np.ndarray | None, config: NNGPConfig
) -> KernelMatrix:
    """NNGP kernel between the rows of ``x`` and ``x_prime`` (``None`` means ``x`` itself)."""
    x = as_matrix(x, name="x")
    symmetric = x_prime is None
    y = x if x_prime is None else as_matrix(x_prime, name="x_prime")
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"feature dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    n = x.shape[0]

    if config.monte_carlo:
        joint = _mc_layers(x if symmetric else np.vstack([x, y]), config)
        entries = joint if symmetric else joint[:n, n:]
        return KernelMatrix(entries, config, symmetric)

    d = x.shape[1]
    s_w, s_b = config.sigma_w2, config.bias_variance
    k_xx = s_w * np.einsum("ij,ij->i", x, x) / d + s_b
    k_yy = k_xx if symmetric else s_w * np.einsum("ij,ij->i", y, y) / d + s_b
    k_xy = s_w * (x @ y.T) / d + s_b
    if symmetric:
        np.fill_diagonal(k_xy, k_xx)
    for _ in range(config.depth):
        k_xy = s_w * activation_expectation(
            config.activation, k_xx[:, None], k_xy, k_yy[None, :], slope=config.slope
        ) + s_b
        k_xx = s_w * activation_expectation(config.activation, k_xx, k_xx, k_xx, slope=config.slope) + s_b
        k_yy = k_xx if symmetric else (
            s_w * activation_expectation(config.activation, k_yy, k_yy, k_yy, slope=config.slope) + s_b
        )
        if symmetric:
            np.fill_diagonal(k_xy, k_xx)
    if symmetric:
        k_xy = (k_xy + k_xy.T) / 2.0
    return KernelMatrix(np.asarray(k_xy), config, symmetric)


def kernel_diagonal(x: np.ndarray, config: NNGPConfig) -> np.ndarray:
    """``K(x_i, x_i)`` for every row, without the full matrix on the closed-form path."""
    x = as_matrix(x, name="x")
    if config.monte_carlo:
        return np.diag(kernel_matrix(x, None, config).entries).copy()
    s_w, s_b = config.sigma_w2, config.bias_variance
    k = s_w * np.einsum("ij,ij->i", x, x) / x.shape[1] + s_b
    for _ in range(config.depth):
        k = s_w * activation_expectation(config.activation, k, k, k, slope=config.slope) + s_b
    return k


# ----------------------------------------------------------------------------------------------------------------------
# GP posterior
# ----------------------------------------------------------------------------------------------------------------------


@dataclass(frozen=True)
class GPPosterior:
    mean: np.ndarray  # (N*, D)
    variance: np.ndarray  # (N*,)
    jitter: float


def _entries(k: KernelMatrix | np.ndarray) -> np.ndarray:
    return k.entries if isinstance(k, KernelMatrix) else np.asarray(k, dtype=np.float64)


def gp_posterior_reconstruct(
    k_tt: KernelMatrix | np.ndarray,
    k_st: KernelMatrix | np.ndarray,
    k_ss: KernelMatrix | np.ndarray,
    targets: np.ndarray,
    jitter: float = DEFAULT_JITTER,
) -> GPPosterior:
    """Exact GP posterior mean and marginal variance at the query points.

    ``k_ss`` may be the full query kernel or just its diagonal. The Cholesky
    factorisation is retried with the jitter multiplied by 10, at most three
    times, before :class:`ConditioningError` is raised.
    """
    k_tt_arr, k_st_arr, k_ss_arr = _entries(k_tt), _entries(k_st), _entries(k_ss)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 1:
        targets = targets[:, None]
    n = k_tt_arr.shape[0]
    if n == 0:
        raise ShapeError("GP posterior needs at least one training point")
    if k_tt_arr.shape != (n, n):
        raise ShapeError(f"K_tt must be square, got {k_tt_arr.shape}")
    if k_st_arr.ndim != 2 or k_st_arr.shape[1] != n:
        raise ShapeError(f"K_st must have {n} columns, got shape {k_st_arr.shape}")
    if targets.shape[0] != n:
        raise ShapeError(f"targets have {targets.shape[0]} rows, expected {n}")
    if jitter <= 0:
        raise ParameterError(f"jitter must be positive, got {jitter}")

    eye = np.eye(n)
    current = jitter
    for attempt in range(JITTER_ESCALATIONS + 1):
        try:
            factor = linalg.cho_factor(k_tt_arr + current * eye, lower=True)
            break
        except linalg.LinAlgError:
            if attempt == JITTER_ESCALATIONS:
                raise ConditioningError(
                    f"kernel matrix is not positive definite even with jitter {current:g}"
                ) from None
            current *= 10.0
            warnings.warn(f"Cholesky failed; retrying with jitter {current:g}", RuntimeWarning, stacklevel=2)

    mean = k_st_arr @ linalg.cho_solve(factor, targets)
    prior_var = np.diag(k_ss_arr) if k_ss_arr.ndim == 2 else k_ss_arr
    solved = linalg.cho_solve(factor, k_st_arr.T)
    variance = prior_var - np.einsum("ij,ji->i", k_st_arr, solved)
    return GPPosterior(mean, variance, current)


# ----------------------------------------------------------------------------------------------------------------------
# Infinite BAE
# ----------------------------------------------------------------------------------------------------------------------


def _targets(train_x: np.ndarray) -> np.ndarray:
    return special.logit(np.clip(train_x, TARGET_CLIP, 1.0 - TARGET_CLIP))


def infbae_reconstruct(
    x_star: np.ndarray, train_x: np.ndarray, config: NNGPConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Sigmoid-squashed GP mean reconstruction of ``x_star`` and its predictive variance."""
    train_x = np.asarray(train_x, dtype=np.float64)
    if train_x.size == 0:
        raise ShapeError("infinite BAE needs a non-empty training set")
    train_x = as_matrix(train_x, name="train_x")
    x_star = as_matrix(x_star, name="x_star")
    if x_star.shape[1] != train_x.shape[1]:
        raise ShapeError(f"expected {train_x.shape[1]} features, got {x_star.shape[1]}")
    if (
        train_x.shape[1] == 1
        and config.bias_variance == 0.0
        and config.activation in HOMOGENEOUS
        and (np.all(train_x >= 0) or np.all(train_x <= 0))
    ):
        warnings.warn(
            f"the bias-free {config.activation.value} kernel has rank one on single-feature data of one sign; "
            "set bias_variance > 0",
            RuntimeWarning,
            stacklevel=2,
        )

    if config.monte_carlo:
        # one joint draw keeps train/query blocks consistent
        n = train_x.shape[0]
        joint = _mc_layers(np.vstack([train_x, x_star]), config)
        k_tt, k_st, k_ss = joint[:n, :n], joint[n:, :n], np.diag(joint)[n:]
    else:
        k_tt = kernel_matrix(train_x, None, config)
        k_st = kernel_matrix(x_star, train_x, config)
        k_ss = kernel_diagonal(x_star, config)
    post = gp_posterior_reconstruct(k_tt, k_st, k_ss, _targets(train_x), config.jitter)
    return special.expit(post.mean), post.variance


def infbae_score(x_star: np.ndarray, train_x: np.ndarray, config: NNGPConfig) -> np.ndarray:
    """Per-sample Gaussian NLL of the infinite-BAE reconstruction (sigma^2 = 1)."""
    x_hat, _ = infbae_reconstruct(x_star, train_x, config)
    return nll_gaussian(x_star, x_hat)


def export_kernel(kernel: KernelMatrix, path: Path) -> None:
    """Write a kernel as row-major text with a ``# N=..., depth=..., activation=...`` header."""
    n_rows, n_cols = kernel.shape
    size = str(n_rows) if n_rows == n_cols else f"{n_rows}x{n_cols}"
    header = f"N={size}, depth={kernel.config.depth}, activation={kernel.config.label()}"
    np.savetxt(path, kernel.entries, fmt="%.17g", header=header)
