"""Tests for the CLI: commands end to end, and tracebacks must never leak to users."""

from __future__ import annotations

import json
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pyarrow.csv as pv
import pytest
from typer.testing import CliRunner

from baekit.bayes import TrainConfig, train
from baekit.cli import app
from baekit.modelio import ensemble_table, infinite_table, write_model
from baekit.nn.rng import RngStream
from baekit.nngp import NNGPConfig

runner = CliRunner()


def _csv(tmp_path: Path, rows: int = 12, name: str = "points.csv") -> Path:
    gen = np.random.default_rng(0)
    path = tmp_path / name
    lines = ["a,b,label"] + [f"{x:.4f},{y:.4f},{int(i % 4 == 0)}" for i, (x, y) in enumerate(gen.random((rows, 2)))]
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture()
def infinite_model(tmp_path, blob) -> Path:
    return write_model(tmp_path / "inf.baemodel", infinite_table(blob, NNGPConfig(depth=3)))


class TestVersion:
    def test_version(self):
        result = runner.invoke(app, ["--version"])
        assert result.exit_code == 0
        assert result.output.startswith("baekit ")

    def test_no_args_shows_help(self):
        result = runner.invoke(app, [])
        assert "run" in result.output
        assert "grid" in result.output


# ------------------------------------------------------------------------------------------------------------------------
# run
# ------------------------------------------------------------------------------------------------------------------------


class TestRun:
    def test_sweep(self, example_config, tmp_path):
        result = runner.invoke(app, ["run", "-c", str(example_config), "--no-progress", "--workers", "1", "-v"])
        assert result.exit_code == 0, result.output
        assert "ATE" in result.output
        assert (tmp_path / "out" / "runs.jsonl").exists()
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["seeds"] == [0, 1]

    def test_seed_and_out_overrides(self, example_config, tmp_path):
        out = tmp_path / "elsewhere"
        result = runner.invoke(
            app, ["run", "-c", str(example_config), "--seed", "7", "-o", str(out), "--no-progress", "--workers", "1"]
        )
        assert result.exit_code == 0, result.output
        assert json.loads((out / "summary.json").read_text())["seeds"] == [7]

    def test_existing_output(self, example_config):
        args = ["run", "-c", str(example_config), "--no-progress", "--workers", "1"]
        assert runner.invoke(app, args).exit_code == 0
        result = runner.invoke(app, args)
        assert result.exit_code == 1
        assert "--overwrite" in result.output
        assert runner.invoke(app, [*args, "--overwrite"]).exit_code == 0

    def test_missing_config(self, tmp_path):
        result = runner.invoke(app, ["run", "-c", str(tmp_path / "nope.toml")])
        assert result.exit_code == 1
        assert "not found" in result.output
        assert "Traceback" not in result.output

    def test_invalid_config(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("schema_version = 2\n")
        result = runner.invoke(app, ["run", "-c", str(path)])
        assert result.exit_code == 1
        assert "schema_version" in result.output

    def test_all_runs_failed(self, example_config):
        with patch("baekit.experiment.bayes.train", side_effect=RuntimeError("boom")):
            result = runner.invoke(app, ["run", "-c", str(example_config), "--no-progress", "--workers", "1"])
        assert result.exit_code == 1
        assert "every run failed" in result.output


# ------------------------------------------------------------------------------------------------------------------------
# score / grid / kernel / lr-find
# ------------------------------------------------------------------------------------------------------------------------


class TestScore:
    def test_scores_every_row(self, tmp_path, infinite_model):
        data = _csv(tmp_path)
        out = tmp_path / "scores.csv"
        result = runner.invoke(app, ["score", str(infinite_model), str(data), "-o", str(out), "--label-column", "label"])
        assert result.exit_code == 0, result.output
        table = pv.read_csv(out)
        assert table.column_names == ["score"]
        assert table.num_rows == 12

    def test_feature_mismatch(self, tmp_path, infinite_model):
        data = _csv(tmp_path)
        result = runner.invoke(app, ["score", str(infinite_model), str(data), "-o", str(tmp_path / "s.csv")])
        assert result.exit_code == 1
        assert "expects 2 features" in result.output

    def test_missing_model(self, tmp_path):
        data = _csv(tmp_path)
        result = runner.invoke(app, ["score", str(tmp_path / "none.baemodel"), str(data), "-o", str(tmp_path / "s.csv")])
        assert result.exit_code == 1
        assert "Traceback" not in result.output

    def test_ensemble_model(self, tmp_path, tiny_spec, blob):
        ensemble = train(tiny_spec, blob, TrainConfig(epochs=1, M=2), RngStream(0))
        model = write_model(tmp_path / "ens.baemodel", ensemble_table(ensemble))
        out = tmp_path / "scores.csv"
        result = runner.invoke(app, ["score", str(model), str(_csv(tmp_path)), "-o", str(out), "--label-column", "label"])
        assert result.exit_code == 0, result.output
        assert pv.read_csv(out).num_rows == 12


class TestGrid:
    def test_model_grid(self, tmp_path, infinite_model):
        out = tmp_path / "grid.csv"
        result = runner.invoke(app, ["grid", "-m", str(infinite_model), "--resolution", "5", "-o", str(out)])
        assert result.exit_code == 0, result.output
        table = pv.read_csv(out)
        assert table.column_names == ["x", "y", "score"]
        assert table.num_rows == 25

    def test_variance_column(self, tmp_path, infinite_model):
        out = tmp_path / "grid.csv"
        result = runner.invoke(
            app, ["grid", "-m", str(infinite_model), "--resolution", "3", "--variance", "--log", "-o", str(out)]
        )
        assert result.exit_code == 0, result.output
        assert pv.read_csv(out).column_names == ["x", "y", "score", "variance"]

    def test_config_grid(self, tmp_path, example_config):
        out = tmp_path / "grid.csv"
        result = runner.invoke(
            app,
            ["grid", "-c", str(example_config), "--bounds", "-0.5,1.5", "--bounds", "0,1", "--resolution", "4",
             "-o", str(out)],
        )
        assert result.exit_code == 0, result.output
        table = pv.read_csv(out)
        assert table.num_rows == 16
        assert table.column("x").to_pylist()[0] == pytest.approx(-0.5)

    def test_needs_exactly_one_source(self, tmp_path, infinite_model, example_config):
        assert runner.invoke(app, ["grid"]).exit_code == 1
        result = runner.invoke(app, ["grid", "-m", str(infinite_model), "-c", str(example_config)])
        assert result.exit_code == 1
        assert "exactly one" in result.output

    @pytest.mark.parametrize(
        "bounds, message",
        [(["0,1"], "2 input features"), (["zero,one", "0,1"], "lo,hi"), (["1,0", "0,1"], "degenerate")],
        ids=["too-few", "unparsable", "degenerate"],
    )
    def test_bad_bounds(self, tmp_path, infinite_model, bounds, message):
        args = ["grid", "-m", str(infinite_model), "-o", str(tmp_path / "g.csv")]
        for b in bounds:
            args += ["--bounds", b]
        result = runner.invoke(app, args)
        assert result.exit_code == 1
        assert message in result.output
        assert "Traceback" not in result.output

    def test_refuses_existing_output(self, tmp_path, infinite_model):
        out = tmp_path / "grid.csv"
        out.write_text("")
        result = runner.invoke(app, ["grid", "-m", str(infinite_model), "-o", str(out)])
        assert result.exit_code == 1
        assert "--overwrite" in result.output


class TestKernel:
    def test_export(self, tmp_path):
        out = tmp_path / "k.txt"
        result = runner.invoke(
            app, ["kernel", str(_csv(tmp_path, rows=5)), "--label-column", "label", "--depth", "2", "-o", str(out)]
        )
        assert result.exit_code == 0, result.output
        assert "min eigenvalue" in result.output
        assert np.loadtxt(out).shape == (5, 5)
        assert out.read_text().startswith("# N=5, depth=2")

    def test_unknown_activation(self, tmp_path):
        result = runner.invoke(app, ["kernel", str(_csv(tmp_path)), "--activation", "tanh", "-o", str(tmp_path / "k")])
        assert result.exit_code == 1
        assert "Traceback" not in result.output


class TestLRFind:
    def test_sweep(self, example_config):
        result = runner.invoke(
            app, ["lr-find", "-c", str(example_config), "--lr-min", "1e-5", "--lr-max", "1e-1", "--steps", "20"]
        )
        assert result.exit_code == 0, result.output
        assert "Suggested" in result.output

    def test_bad_run_index(self, example_config):
        result = runner.invoke(app, ["lr-find", "-c", str(example_config), "--run-index", "5"])
        assert result.exit_code == 1
        assert "--run-index" in result.output


# ------------------------------------------------------------------------------------------------------------------------
# Error handling
# ------------------------------------------------------------------------------------------------------------------------


class TestNoTracebacks:
    """Every unhandled exception from a command must produce a clean error message."""

    @pytest.mark.parametrize(
        "exc",
        [
            RuntimeError("something broke"),
            TypeError("bad type"),
            ValueError("bad value"),
        ],
        ids=["RuntimeError", "TypeError", "ValueError"],
    )
    def test_run_unexpected_exception(self, example_config: Path, exc: Exception) -> None:
        with patch("baekit.cli.experiment.run_experiment", side_effect=exc):
            result = runner.invoke(app, ["run", "-c", str(example_config), "--no-progress"])
        assert result.exit_code != 0
        assert "Traceback" not in result.output

    @pytest.mark.parametrize(
        "exc",
        [
            RuntimeError("something broke"),
            TypeError("bad type"),
            ValueError("bad value"),
        ],
        ids=["RuntimeError", "TypeError", "ValueError"],
    )
    def test_score_unexpected_exception(self, tmp_path: Path, infinite_model: Path, exc: Exception) -> None:
        with patch("baekit.cli.modelio.load_model", side_effect=exc):
            result = runner.invoke(app, ["score", str(infinite_model), str(_csv(tmp_path)), "-o", str(tmp_path / "s")])
        assert result.exit_code != 0
        assert "Traceback" not in result.output

    def test_run_shows_error_message(self, example_config: Path) -> None:
        with patch("baekit.cli.experiment.run_experiment", side_effect=RuntimeError("disk full")):
            result = runner.invoke(app, ["run", "-c", str(example_config), "--no-progress"])
        assert "disk full" in result.output

    def test_run_interrupted(self, example_config: Path) -> None:
        with patch("baekit.cli.experiment.run_experiment", side_effect=KeyboardInterrupt):
            result = runner.invoke(app, ["run", "-c", str(example_config), "--no-progress"])
        assert result.exit_code == 130
        assert "Interrupted" in result.output

    def test_lr_find_interrupted(self, example_config: Path) -> None:
        with patch("baekit.cli.lr_range_test", side_effect=KeyboardInterrupt):
            result = runner.invoke(app, ["lr-find", "-c", str(example_config)])
        assert result.exit_code == 130
        assert "Traceback" not in result.output
