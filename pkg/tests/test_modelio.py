"""Tests for saving and loading trained posteriors and infinite-BAE setups."""

from __future__ import annotations

import json

import numpy as np
import pyarrow as pa
import pytest

from baekit.autoencoder import forward, nll_gaussian
from baekit.bayes import InferenceMethod, TrainConfig, predictive_nll, train
from baekit.data import scaler_fit, scaler_transform
from baekit.modelio import (
    METADATA_KEY,
    ModelFileError,
    ensemble_table,
    from_table,
    infinite_table,
    load_model,
    to_bytes,
    write_model,
)
from baekit.nn.rng import RngStream
from baekit.nngp import NNGPConfig, infbae_score
from baekit.writers import OutputExistsError


@pytest.fixture(params=["ae", "mcd", "bbb", "ensemble", "vae"])
def trained(request, tiny_spec, blob):
    cfg = TrainConfig(epochs=2, lr=5e-3, M=3, method=request.param)
    return train(tiny_spec, blob, cfg, RngStream(0))


class TestEnsembleFiles:
    def test_scores_survive_round_trip(self, trained, blob, tmp_path):
        path = write_model(tmp_path / "model.baemodel", ensemble_table(trained))
        model = load_model(path)
        assert model.method is trained.method
        assert model.input_dim == 2
        np.testing.assert_allclose(model.scorer(scaled=True)(blob), predictive_nll(trained, blob), rtol=1e-12)

    def test_header_is_self_describing(self, trained):
        header = json.loads(ensemble_table(trained).schema.metadata[METADATA_KEY])
        assert header["method"] == trained.method.value
        assert header["M"] == trained.n_samples
        assert header["spec"]["input_dim"] == 2

    def test_scaler_applied_to_raw_inputs(self, tiny_spec, blob):
        raw = blob * 10.0 + 3.0
        scaler = scaler_fit(raw)
        ensemble = train(tiny_spec, scaler_transform(scaler, raw), TrainConfig(epochs=1, M=2), RngStream(1))
        model = from_table(ensemble_table(ensemble, scaler))
        np.testing.assert_allclose(
            model.scorer()(raw), model.scorer(scaled=True)(scaler_transform(scaler, raw)), rtol=1e-12
        )

    def test_deterministic_model_scores_are_plain_nll(self, tiny_spec, blob):
        ensemble = train(tiny_spec, blob, TrainConfig(epochs=2, method="ae"), RngStream(2))
        model = from_table(ensemble_table(ensemble))
        expected = nll_gaussian(blob, forward(ensemble.model(), blob))
        np.testing.assert_allclose(model.scorer(scaled=True)(blob), expected, rtol=1e-12)


class TestInfiniteFiles:
    def test_scores_survive_round_trip(self, blob):
        cfg = NNGPConfig(depth=3)
        model = from_table(pa.ipc.open_stream(to_bytes(infinite_table(blob, cfg))).read_all())
        assert model.method is InferenceMethod.INFINITE
        assert model.nngp == cfg
        assert model.input_dim == 2
        np.testing.assert_allclose(model.scorer(scaled=True)(blob), infbae_score(blob, blob, cfg))


class TestErrors:
    def test_refuses_to_overwrite(self, blob, tmp_path):
        path = tmp_path / "model.baemodel"
        write_model(path, infinite_table(blob, NNGPConfig()))
        with pytest.raises(OutputExistsError, match="--overwrite"):
            write_model(path, infinite_table(blob, NNGPConfig()))
        write_model(path, infinite_table(blob, NNGPConfig()), overwrite=True)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ModelFileError, match="cannot read"):
            load_model(tmp_path / "missing.baemodel")

    def test_not_arrow(self, tmp_path):
        path = tmp_path / "junk.baemodel"
        path.write_bytes(b"definitely not arrow")
        with pytest.raises(ModelFileError, match="Arrow IPC"):
            load_model(path)

    def test_no_header(self):
        with pytest.raises(ModelFileError, match="no header"):
            from_table(pa.table({"a": [1]}))

    def test_unknown_version(self, blob):
        table = infinite_table(blob, NNGPConfig())
        header = json.loads(table.schema.metadata[METADATA_KEY])
        header["format_version"] = 99
        table = table.replace_schema_metadata({METADATA_KEY: json.dumps(header).encode()})
        with pytest.raises(ModelFileError, match="version 99"):
            from_table(table)
