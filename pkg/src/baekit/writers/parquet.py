"""Parquet writer: each batch of run records becomes a row group of ``runs.parquet``."""

from __future__ import annotations

from pathlib import Path

import pyarrow as pa
import pyarrow.parquet as pq

from baekit._console import status
from baekit.writers import RUN_RECORD_SCHEMA, check_not_exists


class ParquetWriter:
    def __init__(self, output_dir: Path, *, compression: str = "zstd", overwrite: bool = False) -> None:
        self._output_dir = Path(output_dir)
        self._compression = compression
        self._overwrite = overwrite
        self._writer: pq.ParquetWriter | None = None
        self._count = 0

    @property
    def path(self) -> Path:
        return self._output_dir / "runs.parquet"

    def setup(self) -> None:
        check_not_exists(self.path, self._overwrite)
        self._output_dir.mkdir(parents=True, exist_ok=True)
        self._writer = pq.ParquetWriter(str(self.path), RUN_RECORD_SCHEMA, compression=self._compression)

    def write_batch(self, batch: pa.RecordBatch) -> int:
        assert self._writer is not None, "setup() must be called first"
        self._writer.write_batch(batch)
        self._count += batch.num_rows
        return batch.num_rows

    def finalize(self) -> None:
        if self._writer is None:
            return
        self._writer.close()
        self._writer = None
        size_kb = self.path.stat().st_size / 1024
        status("Records", f"{self._count} runs -> {self.path.name}, {self._compression}, {size_kb:,.1f} KB")

    def close(self) -> None:
        if self._writer is not None:
            self._writer.close()
            self._writer = None
