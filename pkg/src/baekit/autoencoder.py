"""Dense autoencoders with and without a bottleneck.

Layout for ``hidden_widths = (h1, ..., hk)`` and latent size ``L``::

    encoder   D -> h1 -> ... -> hk -> L
    decoder   L -> hk -> ... -> h1 -> D   (sigmoid output)

With ``skip=True`` the output of encoder layer ``hk`` is forwarded to the input of
the first decoder layer after the latent one, ``h(k-1)`` to the next, and so on
down to ``h1`` feeding the output layer, like a U-Net. The default skip mode
concatenates the forwarded activations onto the decoder input; ``"add"`` sums
them instead (same widths, no extra weights).

Whether a model still has a bottleneck is a function of the latent size and the
skip flag only, see :func:`classify_architecture`.

Parameters live in a flat ``{name: array}`` dict (``encoder.0.weights``,
``decoder.2.norm_gain``, ...), which is what the optimizers and model files
work with.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from baekit.nn import activations
from baekit.nn.activations import ActivationKind
from baekit.nn.layers import (
    DenseCache,
    LayerParams,
    ParameterError,
    ShapeError,
    as_matrix,
    dense_backward,
    dense_forward_cached,
    dropout_mask,
)
from baekit.nn.rng import RngStream

Params = dict[str, np.ndarray]


class ArchitectureType(enum.StrEnum):
    A = "A"  # undercomplete, no skip: bottlenecked
    B = "B"  # undercomplete, skip
    C = "C"  # overcomplete, no skip
    D = "D"  # overcomplete, skip


class SkipMode(enum.StrEnum):
    CONCAT = "concat"
    ADD = "add"


@dataclass(frozen=True)
class ArchitectureSpec:
    input_dim: int
    hidden_widths: tuple[int, ...] = (50, 50, 50)
    latent_factor: float = 0.5
    skip: bool = False
    activation: ActivationKind = ActivationKind.LEAKY_RELU
    use_layer_norm: bool = True
    skip_mode: SkipMode = SkipMode.CONCAT
    final_activation: ActivationKind = ActivationKind.SIGMOID

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        object.__setattr__(self, "activation", ActivationKind(self.activation))
        object.__setattr__(self, "skip_mode", SkipMode(self.skip_mode))
        if self.input_dim < 1:
            raise ParameterError(f"input_dim must be >= 1, got {self.input_dim}")
        if any(w < 1 for w in self.hidden_widths):
            raise ParameterError(f"hidden widths must be >= 1, got {self.hidden_widths}")
        if not self.latent_factor > 0:
            raise ParameterError(
                f"latent_factor must be positive (latent size would be 0), got {self.latent_factor}"
            )
        if ActivationKind(self.final_activation) is not ActivationKind.SIGMOID:
            raise ParameterError("the decoder output layer is always sigmoid")
        if self.skip and not self.hidden_widths:
            raise ParameterError("skip connections need at least one hidden layer")

    @property
    def latent_dim(self) -> int:
        # round half up, never below one unit
        return max(1, math.floor(self.latent_factor * self.input_dim + 0.5))

    @property
    def depth(self) -> int:
        return len(self.hidden_widths)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_widths"] = list(self.hidden_widths)
        d["activation"] = self.activation.value
        d["skip_mode"] = self.skip_mode.value
        d["final_activation"] = ActivationKind(self.final_activation).value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ArchitectureSpec:
        return cls(
            input_dim=int(d["input_dim"]),
            hidden_widths=tuple(d.get("hidden_widths", (50, 50, 50))),
            latent_factor=float(d.get("latent_factor", 0.5)),
            skip=bool(d.get("skip", False)),
            activation=ActivationKind(d.get("activation", "leaky_relu")),
            use_layer_norm=bool(d.get("use_layer_norm", True)),
            skip_mode=SkipMode(d.get("skip_mode", "concat")),
        )


def classify_architecture(spec: ArchitectureSpec) -> ArchitectureType:
    """Map a spec onto the A/B/C/D taxonomy (``latent_dim >= D`` is overcomplete)."""
    overcomplete = spec.latent_dim >= spec.input_dim
    if overcomplete:
        return ArchitectureType.D if spec.skip else ArchitectureType.C
    return ArchitectureType.B if spec.skip else ArchitectureType.A


# ----------------------------------------------------------------------------------------------------------------------
# Model
# ----------------------------------------------------------------------------------------------------------------------


def _name(part: str, index: int, field_name: str) -> str:
    return f"{part}.{index}.{field_name}"


LOG_VARIANCE_HEAD = "latent.log_variance.weights"


@dataclass
class AutoencoderModel:
    spec: ArchitectureSpec
    params: Params
    # VAE: the latent layer is a linear mean head and a log-variance head sits next to it
    variational: bool = False

    @property
    def n_layers(self) -> int:
        return self.spec.depth + 1

    def layer(self, part: str, index: int) -> LayerParams:
        return LayerParams(
            self.params[_name(part, index, "weights")],
            self.params.get(_name(part, index, "norm_gain")),
            self.params.get(_name(part, index, "norm_bias")),
        )

    def encoder_layers(self) -> list[LayerParams]:
        return [self.layer("encoder", i) for i in range(self.n_layers)]

    def decoder_layers(self) -> list[LayerParams]:
        return [self.layer("decoder", i) for i in range(self.n_layers)]

    def weight_names(self) -> list[str]:
        """Names of the linear weight matrices (the parameters a weight prior covers)."""
        return [name for name in self.params if name.endswith(".weights")]

    def with_params(self, params: Params) -> AutoencoderModel:
        return AutoencoderModel(self.spec, params, self.variational)

    def copy(self) -> AutoencoderModel:
        return self.with_params({k: v.copy() for k, v in self.params.items()})

    def n_parameters(self) -> int:
        return sum(v.size for v in self.params.values())


def _decoder_in_widths(spec: ArchitectureSpec) -> list[int]:
    dec_widths = [spec.latent_dim, *reversed(spec.hidden_widths)]
    in_widths = []
    for j, width in enumerate(dec_widths):
        if spec.skip and spec.skip_mode is SkipMode.CONCAT and j >= 1:
            width *= 2
        in_widths.append(width)
    return in_widths


def init_params(
    spec: ArchitectureSpec, rng: RngStream, *, variational: bool = False
) -> Params:
    """Fresh parameters, reproducible for a given stream."""
    gen = rng.generator()
    gain = activations.get(spec.activation).init_gain
    norm = spec.use_layer_norm
    params: Params = {}

    enc_widths = [spec.input_dim, *spec.hidden_widths, spec.latent_dim]
    for i in range(spec.depth + 1):
        is_latent = i == spec.depth
        linear_head = is_latent and variational
        layer = LayerParams.init(
            enc_widths[i],
            enc_widths[i + 1],
            gen,
            gain=1.0 if linear_head else gain,
            use_norm=norm and not linear_head,
        )
        params.update(_flatten("encoder", i, layer))
    if variational:
        log_var = LayerParams.init(enc_widths[-2], spec.latent_dim, gen, gain=1.0)
        # start close to unit variance
        params[LOG_VARIANCE_HEAD] = log_var.weights * 0.01

    dec_out = [*reversed(spec.hidden_widths), spec.input_dim]
    for j, in_width in enumerate(_decoder_in_widths(spec)):
        is_output = j == spec.depth
        layer = LayerParams.init(
            in_width,
            dec_out[j],
            gen,
            gain=1.0 if is_output else gain,
            use_norm=norm and not is_output,
        )
        params.update(_flatten("decoder", j, layer))
    return params


def _flatten(part: str, index: int, layer: LayerParams) -> Params:
    out = {_name(part, index, "weights"): layer.weights}
    if layer.norm_gain is not None and layer.norm_bias is not None:
        out[_name(part, index, "norm_gain")] = layer.norm_gain
        out[_name(part, index, "norm_bias")] = layer.norm_bias
    return out


def build(
    spec: ArchitectureSpec, rng: RngStream, *, variational: bool = False
) -> AutoencoderModel:
    """Initialise an autoencoder for ``spec``."""
    return AutoencoderModel(spec, init_params(spec, rng, variational=variational), variational)


# ----------------------------------------------------------------------------------------------------------------------
# Forward / backward
# ----------------------------------------------------------------------------------------------------------------------


@dataclass
class Trace:
    """Everything the backward pass needs from one forward pass."""

    encoder: list[DenseCache] = field(default_factory=list)
    decoder: list[DenseCache] = field(default_factory=list)
    encoder_masks: list[np.ndarray | None] = field(default_factory=list)
    decoder_masks: list[np.ndarray | None] = field(default_factory=list)
    latent_mean: np.ndarray | None = None
    latent_log_variance: np.ndarray | None = None
    latent_noise: np.ndarray | None = None
    log_variance_input: np.ndarray | None = None


def _encoder_activation(model: AutoencoderModel, i: int) -> ActivationKind:
    if model.variational and i == model.spec.depth:
        return ActivationKind.IDENTITY
    return model.spec.activation


def _decoder_activation(model: AutoencoderModel, j: int) -> ActivationKind:
    if j == model.spec.depth:
        return ActivationKind.SIGMOID
    return model.spec.activation


def _join_skip(spec: ArchitectureSpec, h: np.ndarray, skip: np.ndarray) -> np.ndarray:
    if spec.skip_mode is SkipMode.CONCAT:
        return np.concatenate([h, skip], axis=1)
    return h + skip


def forward_train(
    model: AutoencoderModel,
    x: np.ndarray,
    *,
    dropout_rate: float = 0.0,
    dropout_rng: RngStream | None = None,
    latent_noise: np.ndarray | None = None,
) -> tuple[np.ndarray, Trace]:
    """Forward pass that records a :class:`Trace`.

    Dropout (when ``dropout_rate > 0``) is applied to every hidden and latent
    activation; the sigmoid output is never dropped. For variational models,
    ``latent_noise`` is the standard-normal draw of the reparameterisation; without
    it the latent mean is decoded.
    """
    spec = model.spec
    if x.shape[1] != spec.input_dim:
        raise ShapeError(f"model expects {spec.input_dim} features, got {x.shape[1]}")
    if dropout_rate > 0 and dropout_rng is None:
        raise ParameterError("dropout needs a random stream")
    trace = Trace()
    n = x.shape[0]

    def mask_for(part_offset: int, width: int) -> np.ndarray | None:
        if dropout_rate <= 0:
            return None
        assert dropout_rng is not None
        return dropout_mask((n, width), dropout_rate, dropout_rng.child(part_offset))

    h = x
    enc_outputs = []
    for i, layer in enumerate(model.encoder_layers()):
        use_norm = layer.has_norm
        if model.variational and i == spec.depth:
            trace.log_variance_input = h
        h, cache = dense_forward_cached(h, layer, _encoder_activation(model, i), use_norm)
        trace.encoder.append(cache)
        mask = None if (model.variational and i == spec.depth) else mask_for(i, h.shape[1])
        trace.encoder_masks.append(mask)
        if mask is not None:
            h = h * mask
        enc_outputs.append(h)

    if model.variational:
        assert trace.log_variance_input is not None
        trace.latent_mean = h
        trace.latent_log_variance = trace.log_variance_input @ model.params[LOG_VARIANCE_HEAD].T
        if latent_noise is not None:
            if latent_noise.shape != h.shape:
                raise ShapeError(f"latent noise must have shape {h.shape}, got {latent_noise.shape}")
            trace.latent_noise = latent_noise
            h = h + np.exp(0.5 * trace.latent_log_variance) * latent_noise

    for j, layer in enumerate(model.decoder_layers()):
        if spec.skip and j >= 1:
            h = _join_skip(spec, h, enc_outputs[spec.depth - j])
        h, cache = dense_forward_cached(h, layer, _decoder_activation(model, j), layer.has_norm)
        trace.decoder.append(cache)
        mask = mask_for(spec.depth + 1 + j, h.shape[1]) if j < spec.depth else None
        trace.decoder_masks.append(mask)
        if mask is not None:
            h = h * mask
    return h, trace


def forward(model: AutoencoderModel, x: np.ndarray) -> np.ndarray:
    """Deterministic reconstruction ``x_hat = f_decoder(f_encoder(x))``."""
    return forward_train(model, as_matrix(x))[0]


def backward(
    model: AutoencoderModel,
    trace: Trace,
    grad_output: np.ndarray,
    *,
    grad_latent_mean: np.ndarray | None = None,
    grad_latent_log_variance: np.ndarray | None = None,
) -> Params:
    """Gradients of a loss with respect to every parameter.

    ``grad_output`` is dL/dx_hat. The optional latent gradients carry extra
    terms that act on the VAE latent distribution directly (the KL term).
    """
    spec = model.spec
    grads: Params = {}
    skip_grads: list[np.ndarray | None] = [None] * (spec.depth + 1)

    g = grad_output
    for j in reversed(range(spec.depth + 1)):
        mask = trace.decoder_masks[j]
        if mask is not None:
            g = g * mask
        layer = model.layer("decoder", j)
        g, layer_grads = dense_backward(g, trace.decoder[j], layer, _decoder_activation(model, j))
        grads.update(_prefixed("decoder", j, layer_grads))
        if spec.skip and j >= 1:
            src = spec.depth - j
            if spec.skip_mode is SkipMode.CONCAT:
                width = g.shape[1] // 2
                g, g_skip = g[:, :width], g[:, width:]
            else:
                g_skip = g
            skip_grads[src] = g_skip

    extra_input_grad = None
    if model.variational:
        assert trace.latent_log_variance is not None and trace.log_variance_input is not None
        g_mean = g if grad_latent_mean is None else g + grad_latent_mean
        g_log_var = np.zeros_like(trace.latent_log_variance)
        if trace.latent_noise is not None:
            g_log_var = g * trace.latent_noise * 0.5 * np.exp(0.5 * trace.latent_log_variance)
        if grad_latent_log_variance is not None:
            g_log_var = g_log_var + grad_latent_log_variance
        grads[LOG_VARIANCE_HEAD] = g_log_var.T @ trace.log_variance_input
        extra_input_grad = g_log_var @ model.params[LOG_VARIANCE_HEAD]
        g = g_mean

    for i in reversed(range(spec.depth + 1)):
        if skip_grads[i] is not None:
            g = g + skip_grads[i]
        mask = trace.encoder_masks[i]
        if mask is not None:
            g = g * mask
        layer = model.layer("encoder", i)
        g, layer_grads = dense_backward(g, trace.encoder[i], layer, _encoder_activation(model, i))
        grads.update(_prefixed("encoder", i, layer_grads))
        if extra_input_grad is not None and i == spec.depth:
            g = g + extra_input_grad
    return grads


def _prefixed(part: str, index: int, layer_grads: dict[str, np.ndarray]) -> Params:
    return {_name(part, index, k): v for k, v in layer_grads.items()}


# ----------------------------------------------------------------------------------------------------------------------
# Likelihood
# ----------------------------------------------------------------------------------------------------------------------


def nll_gaussian(x: np.ndarray, x_hat: np.ndarray, sigma2: float = 1.0) -> np.ndarray:
    """Per-sample diagonal-Gaussian negative log-likelihood, averaged over features.

    ``(1/D) * sum_i [(x_i - x_hat_i)^2 / (2 sigma2) + 0.5 * log(sigma2)]``, the
    constant ``0.5 * log(2 pi)`` dropped. With ``sigma2 = 1`` this is half the MSE.
    """
    if sigma2 <= 0:
        raise ParameterError(f"sigma2 must be positive, got {sigma2}")
    x = as_matrix(x, name="x")
    x_hat = as_matrix(x_hat, name="x_hat")
    if x.shape != x_hat.shape:
        raise ShapeError(f"x {x.shape} and x_hat {x_hat.shape} differ")
    per_feature = (x - x_hat) ** 2 / (2.0 * sigma2) + 0.5 * math.log(sigma2)
    return per_feature.mean(axis=1)


def nll_gaussian_grad(x: np.ndarray, x_hat: np.ndarray, sigma2: float = 1.0) -> np.ndarray:
    """Gradient of the batch-mean NLL with respect to ``x_hat``."""
    n, d = x.shape
    return (x_hat - x) / (sigma2 * n * d)
