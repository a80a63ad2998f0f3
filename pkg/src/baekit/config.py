"""Experiment configuration files.

An experiment is a TOML document (``schema_version = 1``)::

    seeds = [0, 1, 2, 3, 4]

    [dataset]            # toy or csv source
    kind = "toy"
    toy = "two_moons"
    n = 500
    noise = 0.1
    anomaly = "ring"
    n_anomalies = 100
    anomaly_noise = 0.1
    anomaly_radius = 2.5
    anomaly_center = [0.5, 0.25]

    [preprocess]
    downsample = 1
    segment = [0, 1000]  # optional half-open row range

    [train]              # TrainConfig fields plus the shared architecture
    epochs = 300
    hidden_widths = [50, 50, 50]

    [nngp]               # only used by "infinite" runs
    depth = 7

    [[runs]]
    method = "ensemble"
    arch_type = "B"      # or latent_factor + skip

    [output]
    dir = "results"
    format = "parquet"

Parsing is strict: unknown keys and wrongly typed values raise
:class:`ConfigError` naming the offending key.
"""

from __future__ import annotations

import hashlib
import json
import os
import tomllib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from baekit.autoencoder import ArchitectureType, SkipMode
from baekit.bayes import InferenceMethod, TrainConfig
from baekit.data import ToyKind
from baekit.nn.activations import ActivationKind
from baekit.nngp import KernelActivation, NNGPConfig

SCHEMA_VERSION = 1
INFINITE_ARCH = "inf"

# arch type -> (latent factor, skip)
ARCH_DEFAULTS: dict[ArchitectureType, tuple[float, bool]] = {
    ArchitectureType.A: (0.5, False),
    ArchitectureType.B: (0.5, True),
    ArchitectureType.C: (2.0, False),
    ArchitectureType.D: (2.0, True),
}


class ConfigError(ValueError):
    """Raised for an invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "toy"
    # toy source
    toy: str = ToyKind.TWO_MOONS.value
    n: int = 500
    noise: float = 0.1
    anomaly: str | None = ToyKind.RING.value
    n_anomalies: int = 100
    anomaly_noise: float = 0.1
    anomaly_radius: float = 2.5
    anomaly_center: tuple[float, float] = (0.5, 0.25)
    # csv source
    path: str | None = None
    label_column: str | None = None
    deviation_column: str | None = None

    @property
    def name(self) -> str:
        if self.kind == "csv":
            return Path(self.path or "").stem
        return self.toy if self.anomaly is None else f"{self.toy}-vs-{self.anomaly}"


@dataclass(frozen=True)
class PreprocessConfig:
    downsample: int = 1
    segment: tuple[int, int] | None = None
    scale: bool = True


@dataclass(frozen=True)
class ArchitectureConfig:
    hidden_widths: tuple[int, ...] = (50, 50, 50)
    activation: str = ActivationKind.LEAKY_RELU.value
    use_layer_norm: bool = True
    skip_mode: str = SkipMode.CONCAT.value


@dataclass(frozen=True)
class RunSpec:
    method: InferenceMethod
    arch_type: str
    latent_factor: float
    skip: bool

    @property
    def key(self) -> str:
        return f"{self.method.value}:{self.arch_type}:{self.latent_factor:g}:{int(self.skip)}"


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "results"
    format: str = "parquet"
    compression: str = ""
    workers: int = 1
    save_models: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    runs: tuple[RunSpec, ...]
    seeds: tuple[int, ...] = (0,)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    architecture: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    nngp: NNGPConfig = field(default_factory=NNGPConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    schema_version: int = SCHEMA_VERSION

    def fingerprint(self) -> str:
        """SHA-256 of the canonical JSON form, ignoring where results are written."""
        payload = _jsonable(self)
        payload.pop("output", None)
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    def with_overrides(
        self,
        *,
        seeds: list[int] | None = None,
        out: Path | None = None,
        workers: int | None = None,
    ) -> ExperimentConfig:
        cfg = self
        if seeds:
            cfg = replace(cfg, seeds=tuple(seeds))
        output = cfg.output
        if out is not None:
            output = replace(output, dir=str(out))
        if workers is not None:
            if workers < 1:
                raise ConfigError(f"workers must be >= 1, got {workers}")
            output = replace(output, workers=workers)
        return replace(cfg, output=output)


def _jsonable(obj: Any) -> Any:
    if hasattr(obj, "__dataclass_fields__"):
        return {k: _jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


# ----------------------------------------------------------------------------------------------------------------------
# Parsing
# ----------------------------------------------------------------------------------------------------------------------

_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"method"}
_ARCH_KEYS = {f.name for f in fields(ArchitectureConfig)}


def _check_keys(section: str, raw: dict, allowed: set[str]) -> None:
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown key {section}.{unknown[0]} (allowed: {', '.join(sorted(allowed))})")


def _typed(section: str, key: str, value: Any, expected: type | tuple[type, ...]) -> Any:
    # bool is an int subclass; never accept it for numeric keys
    if isinstance(value, bool) and bool not in (expected if isinstance(expected, tuple) else (expected,)):
        raise ConfigError(f"{section}.{key} must be {_type_name(expected)}, got a boolean")
    if not isinstance(value, expected):
        raise ConfigError(f"{section}.{key} must be {_type_name(expected)}, got {type(value).__name__}")
    return value


def _type_name(expected: type | tuple[type, ...]) -> str:
    types = expected if isinstance(expected, tuple) else (expected,)
    return " or ".join(t.__name__ for t in types)


_NUM = (int, float)


def _section(raw: dict, name: str) -> dict:
    value = raw.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"[{name}] must be a table")
    return value


def _parse_dataset(raw: dict) -> DatasetConfig:
    allowed = {f.name for f in fields(DatasetConfig)}
    _check_keys("dataset", raw, allowed)
    kind = _typed("dataset", "kind", raw.get("kind", "toy"), str)
    if kind not in ("toy", "csv"):
        raise ConfigError(f"dataset.kind must be 'toy' or 'csv', got {kind!r}")
    types: dict[str, Any] = {
        "toy": str, "n": int, "noise": _NUM, "anomaly": str, "n_anomalies": int,
        "anomaly_noise": _NUM, "anomaly_radius": _NUM, "anomaly_center": list,
        "path": str, "label_column": str, "deviation_column": str,
    }
    values = {k: _typed("dataset", k, v, types[k]) for k, v in raw.items() if k != "kind"}
    if kind == "csv" and "path" not in values:
        raise ConfigError("dataset.path is required when dataset.kind = 'csv'")
    if kind == "toy":
        for key in ("toy", "anomaly"):
            if key in values and values[key] not in ToyKind.__members__.values():
                known = ", ".join(k.value for k in ToyKind)
                raise ConfigError(f"dataset.{key}: unknown toy kind {values[key]!r} (known: {known})")
    if "anomaly_center" in values:
        center = values["anomaly_center"]
        if len(center) != 2 or not all(isinstance(c, _NUM) for c in center):
            raise ConfigError("dataset.anomaly_center must be two numbers")
        values["anomaly_center"] = (float(center[0]), float(center[1]))
    if raw.get("anomaly") == "":
        values["anomaly"] = None
    return DatasetConfig(kind=kind, **values)


def _parse_preprocess(raw: dict) -> PreprocessConfig:
    _check_keys("preprocess", raw, {"downsample", "segment", "scale"})
    factor = _typed("preprocess", "downsample", raw.get("downsample", 1), int)
    if factor < 1:
        raise ConfigError(f"preprocess.downsample must be >= 1, got {factor}")
    segment = raw.get("segment")
    if segment is not None:
        _typed("preprocess", "segment", segment, list)
        if len(segment) != 2 or not all(isinstance(s, int) for s in segment) or not 0 <= segment[0] < segment[1]:
            raise ConfigError("preprocess.segment must be [start, end] with 0 <= start < end")
        segment = (segment[0], segment[1])
    scale = _typed("preprocess", "scale", raw.get("scale", True), bool)
    return PreprocessConfig(factor, segment, scale)


def _parse_train(raw: dict) -> tuple[TrainConfig, ArchitectureConfig]:
    _check_keys("train", raw, _TRAIN_KEYS | _ARCH_KEYS)
    train_types: dict[str, Any] = {
        "epochs": int, "lr": _NUM, "weight_decay": _NUM, "batch_size": int, "M": int,
        "prior_variance": _NUM, "dropout_rate": _NUM, "kl_weight": _NUM, "cyclic_lr": bool, "cycle_epochs": int,
        "full_batch_below": int,
    }
    train_values = {k: _typed("train", k, raw[k], train_types[k]) for k in raw if k in _TRAIN_KEYS}
    arch_values: dict[str, Any] = {}
    if "hidden_widths" in raw:
        widths = _typed("train", "hidden_widths", raw["hidden_widths"], list)
        if not all(isinstance(w, int) and not isinstance(w, bool) and w >= 1 for w in widths):
            raise ConfigError("train.hidden_widths must be a list of positive integers")
        arch_values["hidden_widths"] = tuple(widths)
    if "activation" in raw:
        activation = _typed("train", "activation", raw["activation"], str)
        if activation not in ActivationKind.__members__.values() or activation in ("sigmoid", "identity"):
            raise ConfigError(f"train.activation: unsupported hidden activation {activation!r}")
        arch_values["activation"] = activation
    if "use_layer_norm" in raw:
        arch_values["use_layer_norm"] = _typed("train", "use_layer_norm", raw["use_layer_norm"], bool)
    if "skip_mode" in raw:
        mode = _typed("train", "skip_mode", raw["skip_mode"], str)
        if mode not in SkipMode.__members__.values():
            raise ConfigError(f"train.skip_mode must be 'concat' or 'add', got {mode!r}")
        arch_values["skip_mode"] = mode
    try:
        train = TrainConfig(**train_values)
    except ValueError as e:
        raise ConfigError(f"[train] {e}") from None
    return train, ArchitectureConfig(**arch_values)


def _parse_nngp(raw: dict) -> NNGPConfig:
    allowed = {f.name for f in fields(NNGPConfig)}
    _check_keys("nngp", raw, allowed)
    types: dict[str, Any] = {
        "depth": int, "activation": str, "weight_variance": _NUM, "bias_variance": _NUM,
        "slope": _NUM, "jitter": _NUM, "mc_samples": int, "mc_seed": int,
    }
    values = {k: _typed("nngp", k, v, types[k]) for k, v in raw.items()}
    if "activation" in values and values["activation"] not in KernelActivation.__members__.values():
        known = ", ".join(k.value for k in KernelActivation)
        raise ConfigError(f"nngp.activation: unknown {values['activation']!r} (known: {known})")
    try:
        return NNGPConfig(**values)
    except ValueError as e:
        raise ConfigError(f"[nngp] {e}") from None


def _parse_run(index: int, raw: Any) -> RunSpec:
    where = f"runs[{index}]"
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be a table")
    _check_keys(where, raw, {"method", "arch_type", "latent_factor", "skip"})
    if "method" not in raw:
        raise ConfigError(f"{where}.method is required")
    method_name = _typed(where, "method", raw["method"], str)
    try:
        method = InferenceMethod(method_name)
    except ValueError:
        known = ", ".join(m.value for m in InferenceMethod)
        raise ConfigError(f"{where}.method: unknown method {method_name!r} (known: {known})") from None

    if method is InferenceMethod.INFINITE:
        if set(raw) - {"method", "arch_type"} or raw.get("arch_type", INFINITE_ARCH) != INFINITE_ARCH:
            raise ConfigError(f"{where}: infinite runs take no architecture keys")
        return RunSpec(method, INFINITE_ARCH, 0.0, False)

    arch = raw.get("arch_type")
    factor = raw.get("latent_factor")
    skip = raw.get("skip")
    if arch is not None:
        arch = _typed(where, "arch_type", arch, str)
        if arch not in ArchitectureType.__members__:
            raise ConfigError(f"{where}.arch_type must be one of A, B, C, D, got {arch!r}")
        default_factor, default_skip = ARCH_DEFAULTS[ArchitectureType(arch)]
        factor = default_factor if factor is None else float(_typed(where, "latent_factor", factor, _NUM))
        skip = default_skip if skip is None else _typed(where, "skip", skip, bool)
        expected = _arch_for(factor, skip)
        if expected.value != arch:
            raise ConfigError(
                f"{where}: arch_type {arch} is inconsistent with latent_factor={factor:g}, skip={skip} "
                f"(that is type {expected.value})"
            )
    else:
        if factor is None or skip is None:
            raise ConfigError(f"{where}: give arch_type, or both latent_factor and skip")
        factor = float(_typed(where, "latent_factor", factor, _NUM))
        skip = _typed(where, "skip", skip, bool)
        arch = _arch_for(factor, skip).value
    if factor <= 0:
        raise ConfigError(f"{where}.latent_factor must be positive, got {factor:g}")
    return RunSpec(method, arch, factor, skip)


def _arch_for(factor: float, skip: bool) -> ArchitectureType:
    if factor >= 1.0:
        return ArchitectureType.D if skip else ArchitectureType.C
    return ArchitectureType.B if skip else ArchitectureType.A


def _parse_output(raw: dict) -> OutputConfig:
    _check_keys("output", raw, {f.name for f in fields(OutputConfig)})
    types: dict[str, Any] = {"dir": str, "format": str, "compression": str, "workers": int, "save_models": bool}
    values = {k: _typed("output", k, v, types[k]) for k, v in raw.items()}
    if "workers" not in values and (env := os.environ.get("BAEKIT_WORKERS")):
        try:
            values["workers"] = int(env)
        except ValueError:
            raise ConfigError(f"BAEKIT_WORKERS must be an integer, got {env!r}") from None
    if values.get("workers", 1) < 1:
        raise ConfigError(f"output.workers must be >= 1, got {values['workers']}")
    if values.get("format", "parquet") not in ("parquet", "jsonl"):
        raise ConfigError(f"output.format must be 'parquet' or 'jsonl', got {values['format']!r}")
    return OutputConfig(**values)


def parse_config(raw: dict) -> ExperimentConfig:
    _check_keys(
        "config", raw,
        {"schema_version", "seeds", "dataset", "preprocess", "runs", "train", "nngp", "output"},
    )
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    seeds = raw.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(
        isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds
    ):
        raise ConfigError("seeds must be a non-empty list of non-negative integers")
    runs_raw = raw.get("runs", [])
    if not isinstance(runs_raw, list) or not runs_raw:
        raise ConfigError("runs must list at least one [[runs]] entry")
    train, architecture = _parse_train(_section(raw, "train"))
    return ExperimentConfig(
        runs=tuple(_parse_run(i, r) for i, r in enumerate(runs_raw)),
        seeds=tuple(seeds),
        dataset=_parse_dataset(_section(raw, "dataset")),
        preprocess=_parse_preprocess(_section(raw, "preprocess")),
        train=train,
        architecture=architecture,
        nngp=_parse_nngp(_section(raw, "nngp")),
        output=_parse_output(_section(raw, "output")),
    )


def load_config(path: Path) -> ExperimentConfig:
    """Read and validate an experiment TOML file."""
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    return parse_config(raw)
