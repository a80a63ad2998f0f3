"""JSONL writer: one JSON object per run record.

Optional gzip or bzip2 compression produces ``runs.jsonl.gz`` / ``runs.jsonl.bz2``.
"""

from __future__ import annotations

import bz2
import gzip
import json
import math
from pathlib import Path
from typing import IO

import pyarrow as pa

from baekit._console import status
from baekit.writers import check_not_exists

_COMPRESSED_EXT = {"bzip2": ".jsonl.bz2", "gzip": ".jsonl.gz"}


def _clean(value: object) -> object:
    # JSON has no NaN; failed runs carry null metrics instead
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


class JSONLWriter:
    """Writer implementation that appends records to ``runs.jsonl``."""

    def __init__(self, output_dir: Path, *, compression: str = "none", overwrite: bool = False) -> None:
        self._output_dir = Path(output_dir)
        self._compression = compression
        self._overwrite = overwrite
        self._file: IO | None = None
        self._count = 0

    @property
    def path(self) -> Path:
        return self._output_dir / f"runs{_COMPRESSED_EXT.get(self._compression, '.jsonl')}"

    def setup(self) -> None:
        check_not_exists(self.path, self._overwrite)
        self._output_dir.mkdir(parents=True, exist_ok=True)
        if self._compression == "gzip":
            self._file = gzip.open(self.path, "wt", encoding="utf-8")
        elif self._compression == "bzip2":
            self._file = bz2.open(self.path, "wt", encoding="utf-8")
        else:
            self._file = open(self.path, "w", encoding="utf-8")  # noqa: SIM115

    def write_batch(self, batch: pa.RecordBatch) -> int:
        assert self._file is not None, "setup() must be called first"
        for row in batch.to_pylist():
            self._file.write(json.dumps({k: _clean(v) for k, v in row.items()}, ensure_ascii=False))
            self._file.write("\n")
        self._count += batch.num_rows
        return batch.num_rows

    def finalize(self) -> None:
        if self._file is None:
            return
        self._file.flush()
        self._file.close()
        self._file = None
        size_kb = self.path.stat().st_size / 1024
        codec = f", {self._compression}" if self._compression != "none" else ""
        status("Records", f"{self._count} runs -> {self.path.name}{codec}, {size_kb:,.1f} KB")

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None
