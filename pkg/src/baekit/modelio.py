"""Model files: trained posteriors and infinite-BAE setups as Arrow IPC streams.

A model file is one Arrow IPC stream holding a single record batch::

    member:int32  kind:utf8  name:utf8  shape:list<int32>  values:list<float64>

with one row per tensor. ``kind`` is ``param`` (ensemble member parameters or
BBB means), ``log_variance`` (BBB) or ``train_x`` (infinite BAE, the scaled
training set the GP conditions on). The schema metadata key ``baekit`` holds a
JSON header with the format version, method, architecture, M, seed and the
fitted scaler, so a file is self-describing.
"""

from __future__ import annotations

import json
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pyarrow as pa

from baekit.autoencoder import ArchitectureSpec
from baekit.bayes import InferenceMethod, PosteriorEnsemble, predictive_nll
from baekit.data import MinMaxScaler, scaler_transform
from baekit.nn.layers import as_matrix
from baekit.nngp import NNGPConfig, infbae_score
from baekit.writers import OutputExistsError
from baekit.writers._ipc import deserialize_table, serialize_table

FORMAT_VERSION = 1
METADATA_KEY = b"baekit"
SUFFIX = ".baemodel"

TENSOR_SCHEMA = pa.schema(
    [
        ("member", pa.int32()),
        ("kind", pa.utf8()),
        ("name", pa.utf8()),
        ("shape", pa.list_(pa.int32())),
        ("values", pa.list_(pa.float64())),
    ]
)


class ModelFileError(OSError):
    """Raised when a model file is missing, unreadable or of an unknown version."""


@dataclass
class ModelFile:
    header: dict
    ensemble: PosteriorEnsemble | None = None
    train_x: np.ndarray | None = None
    nngp: NNGPConfig | None = None
    scaler: MinMaxScaler | None = None

    @property
    def method(self) -> InferenceMethod:
        return InferenceMethod(self.header["method"])

    @property
    def input_dim(self) -> int:
        if self.ensemble is not None:
            return self.ensemble.spec.input_dim
        assert self.train_x is not None
        return self.train_x.shape[1]

    def scorer(self, *, scaled: bool = False) -> Callable[[np.ndarray], np.ndarray]:
        """E[NLL] per row; raw inputs are min-max scaled first unless ``scaled``."""

        def score(x: np.ndarray) -> np.ndarray:
            x = as_matrix(x, name="x")
            if not scaled and self.scaler is not None:
                x = scaler_transform(self.scaler, x)
            if self.ensemble is not None:
                return predictive_nll(self.ensemble, x)
            assert self.train_x is not None and self.nngp is not None
            return infbae_score(x, self.train_x, self.nngp)

        return score


def _rows(member: int, kind: str, tensors: dict[str, np.ndarray]) -> list[dict]:
    return [
        {
            "member": member,
            "kind": kind,
            "name": name,
            "shape": list(arr.shape),
            "values": np.asarray(arr, dtype=np.float64).ravel().tolist(),
        }
        for name, arr in tensors.items()
    ]


def _with_header(rows: list[dict], header: dict) -> pa.Table:
    schema = TENSOR_SCHEMA.with_metadata({METADATA_KEY: json.dumps(header).encode()})
    return pa.Table.from_pylist(rows, schema=schema)


def ensemble_table(ensemble: PosteriorEnsemble, scaler: MinMaxScaler | None = None) -> pa.Table:
    header = {
        "format_version": FORMAT_VERSION,
        "method": ensemble.method.value,
        "spec": ensemble.spec.to_dict(),
        "M": ensemble.n_samples,
        "seed": ensemble.seed,
        "dropout_rate": ensemble.dropout_rate,
        "prior_variance": ensemble.prior_variance,
        "variational": ensemble.variational,
        "scaler": scaler.to_dict() if scaler is not None else None,
        "nngp": None,
    }
    rows: list[dict] = []
    for m, params in enumerate(ensemble.members):
        rows.extend(_rows(m, "param", params))
    if ensemble.log_variances is not None:
        rows.extend(_rows(0, "log_variance", ensemble.log_variances))
    return _with_header(rows, header)


def infinite_table(train_x: np.ndarray, config: NNGPConfig, scaler: MinMaxScaler | None = None) -> pa.Table:
    header = {
        "format_version": FORMAT_VERSION,
        "method": InferenceMethod.INFINITE.value,
        "spec": None,
        "M": 1,
        "seed": config.mc_seed,
        "scaler": scaler.to_dict() if scaler is not None else None,
        "nngp": config.to_dict(),
    }
    return _with_header(_rows(0, "train_x", {"train_x": as_matrix(train_x)}), header)


def to_bytes(table: pa.Table) -> bytes:
    return serialize_table(table)


def write_model(path: Path, payload: pa.Table | bytes, *, overwrite: bool = False) -> Path:
    path = Path(path)
    if not overwrite and path.exists():
        raise OutputExistsError(f"Model file {path} already exists. Use --overwrite to replace it.")
    path.parent.mkdir(parents=True, exist_ok=True)
    data = payload if isinstance(payload, bytes) else serialize_table(payload)
    path.write_bytes(data)
    return path


def from_table(table: pa.Table, source: str = "<memory>") -> ModelFile:
    meta = table.schema.metadata or {}
    if METADATA_KEY not in meta:
        raise ModelFileError(f"{source}: not a baekit model file (no header)")
    header = json.loads(meta[METADATA_KEY])
    if header.get("format_version") != FORMAT_VERSION:
        raise ModelFileError(f"{source}: unsupported model format version {header.get('format_version')!r}")
    scaler = MinMaxScaler.from_dict(header["scaler"]) if header.get("scaler") else None

    tensors: dict[tuple[str, int], dict[str, np.ndarray]] = {}
    for row in table.to_pylist():
        arr = np.asarray(row["values"], dtype=np.float64).reshape(row["shape"])
        tensors.setdefault((row["kind"], row["member"]), {})[row["name"]] = arr

    method = InferenceMethod(header["method"])
    if method is InferenceMethod.INFINITE:
        train_x = tensors[("train_x", 0)]["train_x"]
        return ModelFile(header, train_x=train_x, nngp=NNGPConfig.from_dict(header["nngp"]), scaler=scaler)

    members = [tensors[key] for key in sorted(k for k in tensors if k[0] == "param")]
    ensemble = PosteriorEnsemble(
        method=method,
        spec=ArchitectureSpec.from_dict(header["spec"]),
        members=members,
        n_samples=int(header["M"]),
        seed=int(header["seed"]),
        log_variances=tensors.get(("log_variance", 0)),
        dropout_rate=float(header.get("dropout_rate", 0.0)),
        variational=bool(header.get("variational", False)),
        prior_variance=float(header.get("prior_variance", 1.0)),
    )
    return ModelFile(header, ensemble=ensemble, scaler=scaler)


def load_model(path: Path) -> ModelFile:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise ModelFileError(f"cannot read model file {path}: {e.strerror or e}") from None
    try:
        table = deserialize_table(data)
    except (pa.ArrowInvalid, OSError) as e:
        raise ModelFileError(f"{path}: not an Arrow IPC stream ({e})") from None
    return from_table(table, str(path))
