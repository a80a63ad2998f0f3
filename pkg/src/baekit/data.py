"""Datasets: synthetic toys, CSV ingestion and anomaly-detection preprocessing.

Preprocessing follows one fixed recipe: inliers are shuffled and split 70:30,
every anomaly goes to the test set, and a min-max scaler fitted on the training
split is applied to both sides without clamping.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pyarrow as pa
import pyarrow.compute as pc
import pyarrow.csv as pv
from scipy.stats import truncnorm
from sklearn.datasets import make_blobs, make_moons

from baekit.nn.layers import ParameterError, ShapeError
from baekit.nn.rng import RngStream

TRAIN_FRACTION = 0.7
TUKEY_K = 1.5
BLOB_CENTERS = ((0.0, 0.0), (3.0, 3.0))
RING_RADIUS = 1.0


class CSVParseError(ValueError):
    """Raised when a CSV cell is not numeric; ``row`` is 1-based over data rows."""

    def __init__(self, path: Path, row: int, column: str, value: str) -> None:
        super().__init__(f"{path}: row {row}, column {column!r}: {value!r} is not numeric")
        self.path = path
        self.row = row
        self.column = column


class MissingColumnError(KeyError):
    """Raised when a named label or deviation column is absent from the header."""

    def __str__(self) -> str:
        return str(self.args[0])


class NotFittedError(RuntimeError):
    """Raised when a scaler is used before it has been fitted."""


@dataclass
class Dataset:
    X: np.ndarray
    labels: np.ndarray | None = None
    name: str = ""

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        if self.X.ndim != 2 or self.X.shape[0] < 1:
            raise ShapeError(f"dataset {self.name!r} must be a non-empty 2-D matrix, got shape {self.X.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int8)
            if self.labels.shape != (self.X.shape[0],):
                raise ShapeError(
                    f"dataset {self.name!r} has {self.X.shape[0]} rows but {self.labels.size} labels"
                )

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def inliers(self) -> Dataset:
        if self.labels is None:
            return self
        return Dataset(self.X[self.labels == 0], None, self.name)

    def anomalies(self) -> np.ndarray:
        if self.labels is None:
            return np.empty((0, self.n_features))
        return self.X[self.labels == 1]


@dataclass
class SplitDataset:
    train: Dataset
    test: Dataset


# ----------------------------------------------------------------------------------------------------------------------
# Toy generators
# ----------------------------------------------------------------------------------------------------------------------


class ToyKind(enum.StrEnum):
    BLOBS = "blobs"
    TWO_MOONS = "two_moons"
    RING = "ring"
    SPIRAL = "spiral"
    BIMODAL_1D = "bimodal_1d"
    TRIMODAL_1D = "trimodal_1d"


def _sklearn_seed(gen: np.random.Generator) -> int:
    return int(gen.integers(2**31 - 1))


def _modes_1d(centers: tuple[float, ...], n: int, noise: float, gen: np.random.Generator) -> np.ndarray:
    which = np.arange(n) % len(centers)
    gen.shuffle(which)
    return (np.asarray(centers)[which] + noise * gen.standard_normal(n))[:, None]


def gen_toy(
    kind: ToyKind | str,
    n: int,
    noise: float,
    rng: RngStream,
    *,
    radius: float = RING_RADIUS,
    center: tuple[float, float] = (0.0, 0.0),
) -> Dataset:
    """Generate ``n`` unscaled points of a toy distribution.

    ``radius`` and ``center`` apply to ``ring`` only; ring radii are drawn from
    a normal truncated at three standard deviations.
    """
    try:
        kind = ToyKind(kind)
    except ValueError:
        known = ", ".join(k.value for k in ToyKind)
        raise ParameterError(f"unknown toy kind {kind!r} (known: {known})") from None
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if noise < 0:
        raise ParameterError(f"noise must be >= 0, got {noise}")
    gen = rng.generator()

    match kind:
        case ToyKind.BLOBS:
            X, _ = make_blobs(
                n_samples=n, centers=np.asarray(BLOB_CENTERS), cluster_std=noise,
                random_state=_sklearn_seed(gen),
            )
        case ToyKind.TWO_MOONS:
            X, _ = make_moons(n_samples=n, noise=noise or None, random_state=_sklearn_seed(gen))
        case ToyKind.RING:
            angle = gen.uniform(0.0, 2.0 * math.pi, n)
            r = radius + noise * truncnorm.rvs(-3.0, 3.0, size=n, random_state=gen)
            X = np.column_stack([center[0] + r * np.cos(angle), center[1] + r * np.sin(angle)])
        case ToyKind.SPIRAL:
            t = np.sqrt(gen.uniform(0.0, 1.0, n)) * 3.0 * math.pi
            X = np.column_stack([t * np.cos(t), t * np.sin(t)]) / (3.0 * math.pi)
            X = X + noise * gen.standard_normal(X.shape)
        case ToyKind.BIMODAL_1D:
            X = _modes_1d((-1.0, 1.0), n, noise, gen)
        case ToyKind.TRIMODAL_1D:
            X = _modes_1d((-2.0, 0.0, 2.0), n, noise, gen)
    return Dataset(np.asarray(X, dtype=np.float64), None, kind.value)


# ----------------------------------------------------------------------------------------------------------------------
# CSV
# ----------------------------------------------------------------------------------------------------------------------


def _first_bad_cell(table: pa.Table) -> tuple[int, str, str] | None:
    for name in table.column_names:
        column = table[name]
        if pa.types.is_integer(column.type) or pa.types.is_floating(column.type):
            if column.null_count:
                row = pc.index(pc.is_null(column), True).as_py()
                return row + 1, name, ""
            continue
        for row, value in enumerate(column.cast(pa.string()).to_pylist(), start=1):
            try:
                float(value)
            except (TypeError, ValueError):
                return row, name, "" if value is None else value
    return None


def load_csv(
    path: Path,
    label_column: str | None = None,
    *,
    deviation_column: str | None = None,
) -> Dataset:
    """Read a header-first, comma-delimited numeric CSV.

    ``label_column`` (0 inlier / 1 anomaly) is moved into ``labels``. A
    ``deviation_column`` holding signed measured-minus-nominal values is turned
    into labels with :func:`tukey_fences_label` on its absolute values.
    """
    path = Path(path)
    try:
        table = pv.read_csv(
            path,
            read_options=pv.ReadOptions(encoding="utf8"),
            parse_options=pv.ParseOptions(delimiter=","),
            convert_options=pv.ConvertOptions(strings_can_be_null=False, quoted_strings_can_be_null=False),
        )
    except pa.ArrowInvalid as e:
        raise CSVParseError(path, 0, "", str(e)) from None
    if table.num_rows == 0:
        raise ShapeError(f"{path}: no data rows")

    bad = _first_bad_cell(table)
    if bad is not None:
        raise CSVParseError(path, *bad)

    for wanted in (label_column, deviation_column):
        if wanted is not None and wanted not in table.column_names:
            raise MissingColumnError(f"{path}: no column named {wanted!r} (have {', '.join(table.column_names)})")

    labels = None
    if label_column is not None:
        labels = table[label_column].to_numpy().astype(np.int8)
        if not np.isin(labels, (0, 1)).all():
            raise ParameterError(f"{path}: label column {label_column!r} must hold only 0 and 1")
    if deviation_column is not None:
        deviations = np.abs(table[deviation_column].to_numpy().astype(np.float64))
        labels = tukey_fences_label(deviations)
    features = [c for c in table.column_names if c not in (label_column, deviation_column)]
    if not features:
        raise ShapeError(f"{path}: no feature columns")
    X = np.column_stack([table[c].to_numpy().astype(np.float64) for c in features])
    return Dataset(X, labels, path.stem)


# ----------------------------------------------------------------------------------------------------------------------
# Preprocessing
# ----------------------------------------------------------------------------------------------------------------------


def split_70_30(inliers: np.ndarray, anomalies: np.ndarray | None, seed: int) -> SplitDataset:
    """Shuffle inliers into ``floor(0.7 N)`` train rows; the rest plus every anomaly is test."""
    inliers = np.asarray(inliers, dtype=np.float64)
    if inliers.ndim == 1:
        inliers = inliers[:, None]
    if inliers.shape[0] < 1:
        raise ShapeError("split needs at least one inlier")
    # a single inlier goes to train
    n_train = max(1, math.floor(TRAIN_FRACTION * inliers.shape[0]))
    order = RngStream(seed, stream_id=2).generator().permutation(inliers.shape[0])
    train_x = inliers[order[:n_train]]
    test_inliers = inliers[order[n_train:]]
    if anomalies is None:
        anomalies = np.empty((0, inliers.shape[1]))
    anomalies = np.asarray(anomalies, dtype=np.float64).reshape(-1, inliers.shape[1])
    test_x = np.vstack([test_inliers, anomalies])
    test_labels = np.concatenate(
        [np.zeros(test_inliers.shape[0], np.int8), np.ones(anomalies.shape[0], np.int8)]
    )
    return SplitDataset(Dataset(train_x, None, "train"), Dataset(test_x, test_labels, "test"))


@dataclass
class MinMaxScaler:
    data_min: np.ndarray | None = None
    data_max: np.ndarray | None = None

    @property
    def fitted(self) -> bool:
        return self.data_min is not None and self.data_max is not None

    def to_dict(self) -> dict:
        if not self.fitted:
            raise NotFittedError("scaler has not been fitted")
        assert self.data_min is not None and self.data_max is not None
        return {"min": self.data_min.tolist(), "max": self.data_max.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> MinMaxScaler:
        return cls(np.asarray(d["min"], dtype=np.float64), np.asarray(d["max"], dtype=np.float64))


def scaler_fit(train: np.ndarray) -> MinMaxScaler:
    train = np.asarray(train, dtype=np.float64)
    if train.ndim == 1:
        train = train[:, None]
    if train.shape[0] < 1:
        raise ShapeError("cannot fit a scaler on an empty matrix")
    return MinMaxScaler(train.min(axis=0), train.max(axis=0))


def scaler_transform(scaler: MinMaxScaler, X: np.ndarray) -> np.ndarray:
    """``(X - min) / (max - min)`` per feature, unclamped; constant features map to 0."""
    if not scaler.fitted:
        raise NotFittedError("scaler_transform called before scaler_fit")
    assert scaler.data_min is not None and scaler.data_max is not None
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] != scaler.data_min.shape[0]:
        raise ShapeError(f"scaler was fitted on {scaler.data_min.shape[0]} features, got {X.shape[1]}")
    span = scaler.data_max - scaler.data_min
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (X - scaler.data_min) / safe, 0.0)


def tukey_fences_label(deviations: np.ndarray, k: float = TUKEY_K) -> np.ndarray:
    """Flag values strictly above the upper fence ``Q3 + k * IQR``."""
    deviations = np.asarray(deviations, dtype=np.float64).ravel()
    if deviations.size == 0:
        raise ShapeError("tukey_fences_label needs at least one value")
    q1, q3 = np.percentile(deviations, [25.0, 75.0], method="linear")
    return (deviations > q3 + k * (q3 - q1)).astype(np.int8)


def downsample(series: np.ndarray, factor: int) -> np.ndarray:
    """Keep every ``factor``-th row, starting with the first."""
    if factor < 1:
        raise ParameterError(f"downsample factor must be >= 1, got {factor}")
    return np.asarray(series)[::factor]


def segment(series: np.ndarray, start: int, end: int) -> np.ndarray:
    """Rows ``[start, end)``."""
    series = np.asarray(series)
    if not 0 <= start < end <= series.shape[0]:
        raise ParameterError(f"segment [{start}, {end}) is outside 0..{series.shape[0]}")
    return series[start:end]
