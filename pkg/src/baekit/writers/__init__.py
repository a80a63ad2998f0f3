"""Writer protocol and factory for run-record output."""

from __future__ import annotations

from pathlib import Path
from typing import Protocol

import pyarrow as pa

RUN_RECORD_SCHEMA = pa.schema(
    [
        ("fingerprint", pa.utf8()),
        ("dataset", pa.utf8()),
        ("method", pa.utf8()),
        ("arch_type", pa.utf8()),
        ("latent_factor", pa.float64()),
        ("skip", pa.bool_()),
        ("seed", pa.int64()),
        ("auroc", pa.float64()),
        ("train_nll", pa.float64()),
        ("wall_time_ms", pa.float64()),
        ("error", pa.utf8()),
    ]
)

VALID_CODECS = {
    "parquet": {"zstd", "snappy", "gzip", "none"},
    "jsonl": {"gzip", "bzip2", "none"},
}
DEFAULT_CODEC = {"parquet": "zstd", "jsonl": "none"}


class OutputExistsError(Exception):
    """Raised when output already exists and overwrite is not enabled."""


class Writer(Protocol):
    @property
    def path(self) -> Path:
        """File the records end up in."""
        ...

    def setup(self) -> None:
        """Create the output directory and open the records file."""
        ...

    def write_batch(self, batch: pa.RecordBatch) -> int:
        """Append one batch of run records. Returns the number of records written."""
        ...

    def finalize(self) -> None:
        """Flush and close the records file."""
        ...

    def close(self) -> None:
        """Release resources. Must be safe to call even after errors."""
        ...


def check_not_exists(path: Path, overwrite: bool) -> None:
    if not overwrite and path.exists():
        raise OutputExistsError(f"Output file {path} already exists. Use --overwrite to replace it.")


def get_writer(fmt: str, output_dir: Path, *, compression: str = "", overwrite: bool = False) -> Writer:
    """Construct the run-record writer for ``fmt`` (``parquet`` or ``jsonl``)."""
    fmt = fmt.lower()
    if fmt not in VALID_CODECS:
        raise ValueError(f"unsupported format {fmt!r}. Use 'parquet' or 'jsonl'.")
    compression = compression or DEFAULT_CODEC[fmt]
    if compression not in VALID_CODECS[fmt]:
        valid = ", ".join(sorted(VALID_CODECS[fmt] - {"none"}) + ["none"])
        raise ValueError(f"unsupported compression {compression!r} for {fmt}. Valid: {valid}.")

    if fmt == "parquet":
        from baekit.writers.parquet import ParquetWriter

        return ParquetWriter(output_dir, compression=compression, overwrite=overwrite)

    from baekit.writers.jsonl import JSONLWriter

    return JSONLWriter(output_dir, compression=compression, overwrite=overwrite)
