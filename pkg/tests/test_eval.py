"""Tests for AUROC, summaries, the result table, ATE and score grids."""

from __future__ import annotations

import itertools

import numpy as np
import pyarrow.csv as pv
import pytest

from baekit.eval import (
    MissingBaselineError,
    ResultTable,
    ScoreReport,
    UndefinedMetricError,
    ate,
    auroc,
    export_grid,
    score_grid,
    summary,
)
from baekit.nn.layers import ParameterError, ShapeError
from baekit.nn.rng import RngStream
from baekit.nngp import NNGPConfig, infbae_score


def _brute_force_auroc(scores, labels) -> float:
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return total / (len(pos) * len(neg))


# ------------------------------------------------------------------------------------------------------------------------
# AUROC
# ------------------------------------------------------------------------------------------------------------------------


class TestAUROC:
    @pytest.mark.parametrize(
        "scores, labels, expected",
        [
            ([1, 2, 3, 4], [0, 1, 0, 1], 0.75),
            ([1, 2, 3, 4], [0, 0, 1, 1], 1.0),
            ([1, 2, 3, 4], [1, 1, 0, 0], 0.0),
            ([5, 5, 5, 5], [0, 1, 0, 1], 0.5),
        ],
        ids=["mixed", "perfect", "inverted", "all-tied"],
    )
    def test_examples(self, scores, labels, expected):
        assert auroc(scores, labels) == pytest.approx(expected)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_pairwise_count_with_ties(self, seed):
        gen = RngStream(seed).generator()
        scores = gen.integers(0, 6, 40).astype(float)
        labels = np.concatenate([np.zeros(25, int), np.ones(15, int)])
        gen.shuffle(labels)
        assert auroc(scores, labels) == pytest.approx(_brute_force_auroc(scores, labels), abs=1e-12)

    def test_matches_pairwise_count_on_random_instances(self):
        gen = RngStream(10).generator()
        for _ in range(1000):
            n = int(gen.integers(2, 51))
            labels = np.zeros(n, int)
            labels[gen.choice(n, int(gen.integers(1, n)), replace=False)] = 1
            scores = gen.integers(0, 8, n).astype(float)
            assert auroc(scores, labels) == pytest.approx(_brute_force_auroc(scores, labels), abs=1e-12)

    def test_invariant_under_monotone_transform(self):
        gen = RngStream(9).generator()
        scores = gen.random(30)
        labels = np.arange(30) % 2
        assert auroc(np.exp(3 * scores) + 1, labels) == pytest.approx(auroc(scores, labels))

    def test_single_class(self):
        with pytest.raises(UndefinedMetricError):
            auroc([0.1, 0.2], [0, 0])

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            auroc([0.1, 0.2, 0.3], [0, 1])

    def test_bad_labels(self):
        with pytest.raises(ParameterError):
            auroc([0.1, 0.2], [0, 2])

    def test_score_report(self):
        report = ScoreReport.from_scores(np.array([1.0, 2.0]), np.array([0, 1]), model="ae", arch_type="A")
        assert report.auroc == 1.0
        assert report.model == "ae"


class TestSummary:
    def test_two_values(self):
        mean, se = summary([0.8, 0.9])
        assert mean == pytest.approx(0.85)
        assert se == pytest.approx(0.05)

    def test_single_value(self):
        assert summary([0.7]) == (0.7, 0.0)

    def test_empty(self):
        with pytest.raises(ParameterError):
            summary([])


# ------------------------------------------------------------------------------------------------------------------------
# Result table and ATE
# ------------------------------------------------------------------------------------------------------------------------


class TestResultTable:
    def test_from_runs_groups_cells(self):
        runs = [
            (("blobs", "ae", "A", 0.5), 0.8),
            (("blobs", "ae", "A", 0.5), 0.9),
            (("blobs", "ae", "B", 0.5), 0.95),
        ]
        table = ResultTable.from_runs(runs)
        cell = table.cells[("blobs", "ae", "A", 0.5)]
        assert cell.mean == pytest.approx(0.85)
        assert cell.stderr == pytest.approx(0.05)
        assert cell.runs == 2
        assert table.cells[("blobs", "ae", "B", 0.5)].runs == 1

    def test_to_dict_is_sorted(self):
        table = ResultTable.from_means({("z", "ae", "A", 0.5): 0.5, ("a", "ae", "A", 0.5): 0.6})
        rows = table.to_dict()
        assert [r["dataset"] for r in rows] == ["a", "z"]
        assert set(rows[0]) == {"dataset", "method", "arch_type", "latent_factor", "mean", "stderr", "runs"}


class TestATE:
    def test_example(self):
        table = ResultTable.from_means(
            {
                ("d", "ens", "A", 0.5): 0.825,
                ("d", "ens", "B", 0.5): 0.866,
                ("d", "ens", "C", 2.0): 0.835,
                ("d", "ens", "D", 2.0): 0.867,
            }
        )
        effects = ate(table)
        assert effects["B"] == pytest.approx(0.041, abs=1e-3)
        assert effects["C"] == pytest.approx(0.010, abs=1e-3)
        assert effects["D"] == pytest.approx(0.042, abs=1e-3)

    def test_averages_over_dataset_method_pairs(self):
        table = ResultTable.from_means(
            {
                ("d1", "ae", "A", 0.5): 0.5,
                ("d1", "ae", "B", 0.5): 0.7,
                ("d2", "vae", "A", 0.5): 0.8,
                ("d2", "vae", "B", 0.5): 0.7,
            }
        )
        assert ate(table) == {"B": pytest.approx(0.05)}

    def test_baseline_averages_over_latent_factors(self):
        table = ResultTable.from_means(
            {
                ("d", "ae", "A", 0.25): 0.6,
                ("d", "ae", "A", 0.5): 0.8,
                ("d", "ae", "C", 2.0): 0.75,
                ("d", "ae", "C", 10.0): 0.85,
            }
        )
        assert ate(table) == {"C": pytest.approx(0.1)}

    def test_infinite_and_baseline_cells_are_ignored(self):
        table = ResultTable.from_means({("d", "infinite", "inf", 0.0): 0.9, ("d", "ae", "A", 0.5): 0.5})
        assert ate(table) == {}

    def test_missing_baseline(self):
        table = ResultTable.from_means({("d", "ae", "B", 0.5): 0.7})
        with pytest.raises(MissingBaselineError, match="type-A"):
            ate(table)


# ------------------------------------------------------------------------------------------------------------------------
# Score grids
# ------------------------------------------------------------------------------------------------------------------------


class TestScoreGrid:
    def test_two_dimensional_lattice(self):
        grid = score_grid(lambda p: p.sum(axis=1), [(0.0, 1.0), (0.0, 2.0)], 3)
        assert grid.points.shape == (9, 2)
        np.testing.assert_allclose(grid.points[1], [0.0, 1.0])
        np.testing.assert_allclose(grid.scores, grid.points.sum(axis=1))
        assert grid.to_table().column_names == ["x", "y", "score"]

    def test_one_dimensional(self):
        grid = score_grid(lambda p: p[:, 0] ** 2, [(-1.0, 1.0)], 5)
        assert grid.dim == 1
        assert grid.to_table().column_names == ["x", "score"]

    def test_log_scores(self):
        grid = score_grid(lambda p: np.ones(len(p)), [(0.0, 1.0)], 2, log=True)
        np.testing.assert_allclose(grid.scores, np.log(1.0 + 1e-12))

    @pytest.mark.parametrize(
        "bounds, resolution",
        [([(0, 1)] * 3, 10), ([(0, 1)], 1), ([(1, 1)], 10), ([(0, float("inf"))], 10)],
        ids=["three-axes", "resolution", "degenerate", "infinite"],
    )
    def test_invalid(self, bounds, resolution):
        with pytest.raises(ParameterError):
            score_grid(lambda p: np.zeros(len(p)), bounds, resolution)

    def test_scorer_shape_checked(self):
        with pytest.raises(ShapeError):
            score_grid(lambda p: np.zeros(3), [(0.0, 1.0)], 10)

    def test_export(self, tmp_path):
        grid = score_grid(lambda p: p.sum(axis=1), [(0.0, 1.0), (0.0, 1.0)], 4)
        path = tmp_path / "grid.csv"
        export_grid(grid, path)
        table = pv.read_csv(path)
        assert table.column_names == ["x", "y", "score"]
        assert table.num_rows == 16

    def test_minimum_of_fitted_model_lies_near_training_data(self):
        # training points sit on lattice nodes with distinct angles from the origin
        train = np.array([[0.2, 0.3], [0.7, 0.6], [0.4, 0.8], [0.8, 0.2]])
        cfg = NNGPConfig(bias_variance=0.1)
        grid = score_grid(lambda p: infbae_score(p, train, cfg), [(0.0, 1.0), (0.0, 1.0)], 11)
        best = grid.points[np.argmin(grid.scores)]
        assert np.linalg.norm(train - best, axis=1).min() <= 0.1 + 1e-9
