"""Metrics and summaries: AUROC, mean +/- standard error, ATE, score grids."""

from __future__ import annotations

import math
from collections import defaultdict
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pyarrow as pa
import pyarrow.csv as pv
from scipy.stats import rankdata, sem

from baekit.nn.layers import ParameterError, ShapeError

BASELINE_TYPE = "A"
COMPARED_TYPES = ("B", "C", "D")
LOG_OFFSET = 1e-12


class UndefinedMetricError(ValueError):
    """Raised when a metric is not defined for the given input (e.g. one class only)."""


class MissingBaselineError(KeyError):
    """Raised when an ATE comparison has no type-A cell to compare against."""

    def __str__(self) -> str:
        return str(self.args[0])


def auroc(scores: Sequence[float] | np.ndarray, labels: Sequence[int] | np.ndarray) -> float:
    """Mann-Whitney AUROC with midranks; label 1 (anomaly) is the positive class.

    Equals ``P(s_anomaly > s_inlier) + 0.5 * P(s_anomaly == s_inlier)``.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ShapeError(f"{scores.size} scores but {labels.size} labels")
    if not np.isin(labels, (0, 1)).all():
        raise ParameterError("labels must be 0 (inlier) or 1 (anomaly)")
    positive = labels == 1
    n_pos = int(positive.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both inliers and anomalies")
    ranks = rankdata(scores, method="average")
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def summary(values: Iterable[float]) -> tuple[float, float]:
    """Mean and standard error (sample sd / sqrt(n)); SE is 0 for a single value."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ParameterError("summary of an empty sequence")
    mean = float(arr.mean())
    if arr.size == 1:
        return mean, 0.0
    return mean, float(sem(arr, ddof=1))


@dataclass
class ScoreReport:
    scores: np.ndarray
    labels: np.ndarray
    auroc: float
    model: str = ""
    arch_type: str = ""
    seed: int = 0

    @classmethod
    def from_scores(
        cls, scores: np.ndarray, labels: np.ndarray, *, model: str = "", arch_type: str = "", seed: int = 0
    ) -> ScoreReport:
        return cls(np.asarray(scores), np.asarray(labels), auroc(scores, labels), model, arch_type, seed)


CellKey = tuple[str, str, str, float]  # (dataset, method, arch_type, latent_factor)


@dataclass(frozen=True)
class Cell:
    mean: float
    stderr: float
    runs: int


@dataclass
class ResultTable:
    cells: dict[CellKey, Cell] = field(default_factory=dict)

    @classmethod
    def from_runs(cls, runs: Iterable[tuple[CellKey, float]]) -> ResultTable:
        """Group per-run AUROCs by cell and summarise each group."""
        grouped: dict[CellKey, list[float]] = defaultdict(list)
        for key, value in runs:
            grouped[key].append(value)
        table = cls()
        for key in sorted(grouped):
            mean, stderr = summary(grouped[key])
            table.cells[key] = Cell(mean, stderr, len(grouped[key]))
        return table

    @classmethod
    def from_means(cls, means: dict[CellKey, float]) -> ResultTable:
        return cls({key: Cell(value, 0.0, 1) for key, value in means.items()})

    def to_dict(self) -> list[dict]:
        return [
            {
                "dataset": d, "method": m, "arch_type": t, "latent_factor": f,
                "mean": c.mean, "stderr": c.stderr, "runs": c.runs,
            }
            for (d, m, t, f), c in sorted(self.cells.items())
        ]


def ate(table: ResultTable) -> dict[str, float]:
    """Average treatment effect of types B, C and D against the bottlenecked type A.

    For each type, the mean over cells of ``mean AUROC(cell) - baseline``, where
    the baseline is the mean over the type-A cells sharing the cell's dataset and
    method. Types with no cells are omitted.
    """
    baselines: dict[tuple[str, str], list[float]] = defaultdict(list)
    for (dataset, method, arch_type, _), cell in table.cells.items():
        if arch_type == BASELINE_TYPE:
            baselines[(dataset, method)].append(cell.mean)
    effects: dict[str, list[float]] = defaultdict(list)
    for (dataset, method, arch_type, _), cell in sorted(table.cells.items()):
        if arch_type not in COMPARED_TYPES:
            continue
        baseline = baselines.get((dataset, method))
        if not baseline:
            raise MissingBaselineError(
                f"no type-{BASELINE_TYPE} result for dataset {dataset!r}, method {method!r}"
            )
        effects[arch_type].append(cell.mean - float(np.mean(baseline)))
    return {t: float(np.mean(effects[t])) for t in COMPARED_TYPES if effects[t]}


# ----------------------------------------------------------------------------------------------------------------------
# Score grids
# ----------------------------------------------------------------------------------------------------------------------

Scorer = Callable[[np.ndarray], np.ndarray]


@dataclass
class ScoreGrid:
    points: np.ndarray  # (P, d), row-major over the lattice
    scores: np.ndarray  # (P,)
    resolution: int
    log: bool = False

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def to_table(self) -> pa.Table:
        names = ["x", "y"][: self.dim]
        columns = {name: self.points[:, i] for i, name in enumerate(names)}
        columns["score"] = self.scores
        return pa.table(columns)


def score_grid(
    scorer: Scorer,
    bounds: Sequence[tuple[float, float]],
    resolution: int,
    *,
    log: bool = False,
) -> ScoreGrid:
    """Evaluate ``scorer`` on a regular lattice; the last axis varies fastest."""
    if len(bounds) not in (1, 2):
        raise ParameterError(f"score grids are 1-D or 2-D, got {len(bounds)} axes")
    if resolution < 2:
        raise ParameterError(f"resolution must be >= 2, got {resolution}")
    axes = []
    for lo, hi in bounds:
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
            raise ParameterError(f"degenerate bounds [{lo}, {hi}]")
        axes.append(np.linspace(lo, hi, resolution))
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.column_stack([m.ravel() for m in mesh])
    scores = np.asarray(scorer(points), dtype=np.float64).ravel()
    if scores.shape != (points.shape[0],):
        raise ShapeError(f"scorer returned {scores.size} scores for {points.shape[0]} points")
    if log:
        scores = np.log(scores + LOG_OFFSET)
    return ScoreGrid(points, scores, resolution, log)


def export_grid(grid: ScoreGrid, path: Path) -> None:
    """Write ``x[,y],score`` CSV."""
    pv.write_csv(grid.to_table(), path)
