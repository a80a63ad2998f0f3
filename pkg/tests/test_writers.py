"""Tests for the run-record writers and the get_writer() factory."""

from __future__ import annotations

import bz2
import gzip
import json
import math

import pyarrow as pa
import pyarrow.parquet as pq
import pytest

from baekit.writers import RUN_RECORD_SCHEMA, OutputExistsError, get_writer
from baekit.writers._ipc import deserialize_table, serialize_table
from baekit.writers.jsonl import JSONLWriter
from baekit.writers.parquet import ParquetWriter


def _batch(n: int = 2, *, failed: bool = False) -> pa.RecordBatch:
    rows = [
        {
            "fingerprint": "abc",
            "dataset": "blobs-vs-ring",
            "method": "ensemble",
            "arch_type": "B",
            "latent_factor": 0.5,
            "skip": True,
            "seed": i,
            "auroc": math.nan if failed else 0.9 + i / 100,
            "train_nll": 0.1,
            "wall_time_ms": 12.5,
            "error": "boom" if failed else None,
        }
        for i in range(n)
    ]
    return pa.RecordBatch.from_pylist(rows, schema=RUN_RECORD_SCHEMA)


class TestGetWriter:
    def test_parquet(self, tmp_path):
        assert isinstance(get_writer("parquet", tmp_path), ParquetWriter)

    def test_jsonl_case_insensitive(self, tmp_path):
        assert isinstance(get_writer("JSONL", tmp_path), JSONLWriter)

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValueError, match="unsupported format"):
            get_writer("csv", tmp_path)

    @pytest.mark.parametrize("fmt, codec", [("parquet", "bzip2"), ("jsonl", "zstd")])
    def test_unknown_compression(self, tmp_path, fmt, codec):
        with pytest.raises(ValueError, match="unsupported compression"):
            get_writer(fmt, tmp_path, compression=codec)


# ------------------------------------------------------------------------------------------------------------------------
# JSONL
# ------------------------------------------------------------------------------------------------------------------------


class TestJSONLWriter:
    def test_full_lifecycle(self, tmp_path):
        writer = JSONLWriter(tmp_path / "out")
        try:
            writer.setup()
            count = writer.write_batch(_batch())
            writer.finalize()
        finally:
            writer.close()

        assert count == 2
        lines = (tmp_path / "out" / "runs.jsonl").read_text().strip().split("\n")
        assert len(lines) == 2
        row = json.loads(lines[1])
        assert row["seed"] == 1
        assert row["auroc"] == pytest.approx(0.91)
        assert row["error"] is None

    def test_nan_becomes_null(self, tmp_path):
        writer = JSONLWriter(tmp_path)
        writer.setup()
        writer.write_batch(_batch(1, failed=True))
        writer.finalize()
        row = json.loads((tmp_path / "runs.jsonl").read_text())
        assert row["auroc"] is None
        assert row["error"] == "boom"

    @pytest.mark.parametrize("codec, opener, suffix", [("gzip", gzip.open, ".gz"), ("bzip2", bz2.open, ".bz2")])
    def test_compressed(self, tmp_path, codec, opener, suffix):
        writer = JSONLWriter(tmp_path, compression=codec)
        writer.setup()
        writer.write_batch(_batch(3))
        writer.finalize()
        assert writer.path.name == f"runs.jsonl{suffix}"
        with opener(writer.path, "rt", encoding="utf-8") as f:
            assert len(f.read().strip().split("\n")) == 3

    def test_refuses_to_overwrite(self, tmp_path):
        (tmp_path / "runs.jsonl").write_text("old\n")
        with pytest.raises(OutputExistsError, match="--overwrite"):
            JSONLWriter(tmp_path).setup()

    def test_overwrite(self, tmp_path):
        (tmp_path / "runs.jsonl").write_text("old\n")
        writer = JSONLWriter(tmp_path, overwrite=True)
        writer.setup()
        writer.write_batch(_batch(1))
        writer.finalize()
        assert "old" not in (tmp_path / "runs.jsonl").read_text()

    def test_close_is_idempotent(self, tmp_path):
        writer = JSONLWriter(tmp_path)
        writer.close()
        writer.setup()
        writer.close()
        writer.close()

    def test_write_before_setup(self, tmp_path):
        with pytest.raises(AssertionError, match="setup"):
            JSONLWriter(tmp_path).write_batch(_batch())


# ------------------------------------------------------------------------------------------------------------------------
# Parquet
# ------------------------------------------------------------------------------------------------------------------------


class TestParquetWriter:
    def test_full_lifecycle(self, tmp_path):
        writer = ParquetWriter(tmp_path)
        try:
            writer.setup()
            writer.write_batch(_batch(2))
            writer.write_batch(_batch(1, failed=True))
            writer.finalize()
        finally:
            writer.close()

        table = pq.read_table(tmp_path / "runs.parquet")
        assert table.schema.equals(RUN_RECORD_SCHEMA)
        assert table.num_rows == 3
        assert pq.ParquetFile(tmp_path / "runs.parquet").metadata.num_row_groups == 2
        assert table.column("error").to_pylist() == [None, None, "boom"]

    @pytest.mark.parametrize("codec", ["snappy", "gzip", "none"])
    def test_codecs(self, tmp_path, codec):
        writer = ParquetWriter(tmp_path, compression=codec)
        writer.setup()
        writer.write_batch(_batch())
        writer.finalize()
        assert pq.read_table(writer.path).num_rows == 2

    def test_refuses_to_overwrite(self, tmp_path):
        (tmp_path / "runs.parquet").write_bytes(b"")
        with pytest.raises(OutputExistsError):
            ParquetWriter(tmp_path).setup()


class TestIPC:
    def test_round_trip_keeps_metadata(self):
        table = pa.Table.from_batches([_batch(3)]).replace_schema_metadata({b"k": b"v"})
        restored = deserialize_table(serialize_table(table))
        assert restored.equals(table)
        assert restored.schema.metadata == {b"k": b"v"}
