"""Arrow IPC stream (de)serialization shared by model files and sweep workers."""

from __future__ import annotations

import pyarrow as pa
import pyarrow.ipc as ipc


def serialize_table(table: pa.Table) -> bytes:
    sink = pa.BufferOutputStream()
    with ipc.new_stream(sink, table.schema) as writer:
        writer.write_table(table)
    return sink.getvalue().to_pybytes()


def deserialize_table(ipc_bytes: bytes) -> pa.Table:
    reader = ipc.open_stream(pa.BufferReader(ipc_bytes))
    return reader.read_all()
