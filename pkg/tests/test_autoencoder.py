"""Tests for autoencoder construction, the A/B/C/D taxonomy, forward/backward passes and the NLL."""

from __future__ import annotations

import numpy as np
import pytest

from baekit.autoencoder import (
    ArchitectureSpec,
    ArchitectureType,
    SkipMode,
    backward,
    build,
    classify_architecture,
    forward,
    forward_train,
    nll_gaussian,
    nll_gaussian_grad,
)
from baekit.nn.layers import ParameterError, ShapeError
from baekit.nn.rng import RngStream
from tests.conftest import finite_difference, relative_error


class TestClassifyArchitecture:
    @pytest.mark.parametrize(
        "factor, skip, expected",
        [
            (0.5, False, ArchitectureType.A),
            (0.5, True, ArchitectureType.B),
            (1.0, False, ArchitectureType.C),
            (2.0, False, ArchitectureType.C),
            (2.0, True, ArchitectureType.D),
        ],
        ids=["A", "B", "C-equal", "C", "D"],
    )
    def test_taxonomy(self, factor, skip, expected):
        spec = ArchitectureSpec(input_dim=10, latent_factor=factor, skip=skip)
        assert classify_architecture(spec) is expected


class TestArchitectureSpec:
    @pytest.mark.parametrize(
        "input_dim, factor, latent",
        [(2, 0.5, 1), (2, 50.0, 100), (20, 0.1, 2), (3, 0.5, 2), (1, 0.1, 1)],
        ids=["undercomplete-2d", "overcomplete-2d", "tenth", "round-half-up", "floor-one"],
    )
    def test_latent_dim(self, input_dim, factor, latent):
        assert ArchitectureSpec(input_dim=input_dim, latent_factor=factor).latent_dim == latent

    def test_zero_factor(self):
        with pytest.raises(ParameterError, match="latent"):
            ArchitectureSpec(input_dim=2, latent_factor=0.0)

    def test_final_activation_is_sigmoid(self):
        with pytest.raises(ParameterError):
            ArchitectureSpec(input_dim=2, final_activation="identity")

    def test_dict_round_trip(self):
        spec = ArchitectureSpec(input_dim=4, hidden_widths=(6, 5), latent_factor=2.0, skip=True, skip_mode="add")
        assert ArchitectureSpec.from_dict(spec.to_dict()) == spec


# ------------------------------------------------------------------------------------------------------------------------
# Build / forward
# ------------------------------------------------------------------------------------------------------------------------


class TestBuild:
    def test_reproducible(self, tiny_spec):
        a = build(tiny_spec, RngStream(0))
        b = build(tiny_spec, RngStream(0))
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])

    def test_decoder_mirrors_encoder(self):
        spec = ArchitectureSpec(input_dim=2, hidden_widths=(50, 50, 50), latent_factor=50.0)
        model = build(spec, RngStream(0))
        enc = [layer.out_dim for layer in model.encoder_layers()]
        dec = [layer.out_dim for layer in model.decoder_layers()]
        assert enc == [50, 50, 50, 100]
        assert dec == [50, 50, 50, 2]

    def test_concat_skip_doubles_decoder_inputs(self):
        spec = ArchitectureSpec(input_dim=2, hidden_widths=(6, 4), latent_factor=0.5, skip=True)
        model = build(spec, RngStream(0))
        assert [layer.in_dim for layer in model.decoder_layers()] == [1, 8, 12]

    def test_weight_names(self, tiny_spec):
        model = build(tiny_spec, RngStream(0))
        names = model.weight_names()
        assert names
        assert all(n.endswith(".weights") for n in names)
        assert any("norm_gain" in n for n in model.params)


class TestForward:
    def test_zero_weights_give_half(self, tiny_spec):
        model = build(tiny_spec, RngStream(0))
        for name in model.weight_names():
            model.params[name][:] = 0.0
        np.testing.assert_allclose(forward(model, np.random.default_rng(0).random((5, 2))), 0.5)

    def test_output_range(self):
        spec = ArchitectureSpec(input_dim=4, hidden_widths=(10, 10), latent_factor=2.0, skip=True)
        x = RngStream(1).generator().random((50, 4))
        out = forward(build(spec, RngStream(2)), x)
        assert out.shape == (50, 4)
        assert np.all((out > 0) & (out < 1))

    def test_skip_changes_output(self):
        x = RngStream(1).generator().random((5, 3))
        plain = forward(build(ArchitectureSpec(input_dim=3, hidden_widths=(6,)), RngStream(0)), x)
        skipped = forward(build(ArchitectureSpec(input_dim=3, hidden_widths=(6,), skip=True), RngStream(0)), x)
        assert not np.allclose(plain, skipped)

    def test_shape_error(self, tiny_spec):
        with pytest.raises(ShapeError, match="expects 2"):
            forward(build(tiny_spec, RngStream(0)), np.zeros((3, 5)))

    def test_hidden_permutation_symmetry(self):
        spec = ArchitectureSpec(input_dim=3, hidden_widths=(5,), latent_factor=1.0, use_layer_norm=False)
        model = build(spec, RngStream(3))
        x = RngStream(4).generator().random((6, 3))
        perm = np.array([3, 0, 4, 1, 2])
        permuted = model.copy()
        permuted.params["encoder.0.weights"] = model.params["encoder.0.weights"][perm]
        permuted.params["encoder.1.weights"] = model.params["encoder.1.weights"][:, perm]
        np.testing.assert_allclose(forward(model, x), forward(permuted, x), atol=1e-12)


class TestBackward:
    @pytest.mark.parametrize(
        "skip, skip_mode, activation",
        [
            (False, SkipMode.CONCAT, "gelu"),
            (True, SkipMode.CONCAT, "gelu"),
            (True, SkipMode.ADD, "selu"),
        ],
        ids=["plain", "concat", "add"],
    )
    def test_matches_finite_differences(self, skip, skip_mode, activation):
        spec = ArchitectureSpec(
            input_dim=3, hidden_widths=(4, 4), latent_factor=1.0, skip=skip, skip_mode=skip_mode, activation=activation
        )
        model = build(spec, RngStream(5))
        x = RngStream(6).generator().random((5, 3))

        def loss(_params):
            return float(nll_gaussian(x, forward(model, x)).mean())

        x_hat, trace = forward_train(model, x)
        grads = backward(model, trace, nll_gaussian_grad(x, x_hat))
        numeric = finite_difference(loss, model.params)
        for name in model.params:
            assert relative_error(grads[name], numeric[name]) <= 1e-4, name

    def test_variational_with_latent_terms(self):
        spec = ArchitectureSpec(input_dim=3, hidden_widths=(4,), latent_factor=1.0, activation="gelu")
        model = build(spec, RngStream(7), variational=True)
        x = RngStream(8).generator().random((4, 3))
        noise = RngStream(9).generator().standard_normal((4, spec.latent_dim))

        def loss(_params):
            x_hat, trace = forward_train(model, x, latent_noise=noise)
            kl = 0.5 * (trace.latent_mean**2 + np.exp(trace.latent_log_variance) - 1 - trace.latent_log_variance)
            return float(nll_gaussian(x, x_hat).mean() + kl.sum(axis=1).mean())

        x_hat, trace = forward_train(model, x, latent_noise=noise)
        n = x.shape[0]
        grads = backward(
            model,
            trace,
            nll_gaussian_grad(x, x_hat),
            grad_latent_mean=trace.latent_mean / n,
            grad_latent_log_variance=0.5 * (np.exp(trace.latent_log_variance) - 1) / n,
        )
        numeric = finite_difference(loss, model.params)
        for name in model.params:
            assert relative_error(grads[name], numeric[name]) <= 1e-4, name


# ------------------------------------------------------------------------------------------------------------------------
# NLL
# ------------------------------------------------------------------------------------------------------------------------


class TestNLLGaussian:
    @pytest.mark.parametrize(
        "x, x_hat, expected",
        [
            ([[0.3, 0.7]], [[0.3, 0.7]], 0.0),
            ([[1.0, 0.0]], [[0.0, 0.0]], 0.25),
            ([[0.5]], [[0.0]], 0.125),
        ],
        ids=["exact", "one-off", "half"],
    )
    def test_values(self, x, x_hat, expected):
        assert nll_gaussian(np.array(x), np.array(x_hat))[0] == pytest.approx(expected, abs=1e-12)

    def test_sigma2(self):
        # (1/1) * [0.25 / 4 + 0.5 * log 2]
        value = nll_gaussian(np.array([[0.5]]), np.array([[0.0]]), sigma2=2.0)[0]
        assert value == pytest.approx(0.0625 + 0.5 * np.log(2.0), abs=1e-12)

    def test_non_negative(self):
        gen = RngStream(0).generator()
        assert np.all(nll_gaussian(gen.random((20, 3)), gen.random((20, 3))) >= 0)

    @pytest.mark.parametrize("sigma2", [0.0, -1.0], ids=["zero", "negative"])
    def test_invalid_sigma2(self, sigma2):
        with pytest.raises(ParameterError):
            nll_gaussian(np.zeros((1, 1)), np.zeros((1, 1)), sigma2)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            nll_gaussian(np.zeros((2, 2)), np.zeros((2, 3)))
