"""Binary checkpoint format.

Layout::

    b"MDDIM1\\n"                      magic
    uint32 little-endian L            length of the JSON header
    L bytes UTF-8 JSON                metadata (architecture, schedule, schema, ...)
    float64 little-endian tensors     concatenated in the order of meta["tensors"]

The first tensor is always ``params`` (model parameters in declaration order).
Optimizer moments may follow so that training can resume exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import SchemaError

MAGIC = b"MDDIM1\n"


def write_checkpoint(path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    """Write ``tensors`` (insertion order kept) with ``meta`` as header."""
    if next(iter(tensors)) != "params":
        raise ValueError("first tensor must be 'params'")
    meta = dict(meta)
    meta["tensors"] = [{"name": k, "size": int(np.asarray(v).size)} for k, v in tensors.items()]
    header = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for v in tensors.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise SchemaError(f"{path}: not a checkpoint (bad magic)")
    pos = len(MAGIC)
    if len(data) < pos + 4:
        raise SchemaError(f"{path}: truncated header")
    (length,) = struct.unpack("<I", data[pos:pos + 4])
    pos += 4
    if pos + length > len(data):
        raise SchemaError(f"{path}: truncated header")
    try:
        meta = json.loads(data[pos:pos + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{path}: unreadable header ({exc})") from None
    pos += length
    tensors = {}
    for spec in meta["tensors"]:
        nbytes = 8 * spec["size"]
        if pos + nbytes > len(data):
            raise SchemaError(f"{path}: truncated tensor {spec['name']!r}")
        tensors[spec["name"]] = np.frombuffer(data[pos:pos + nbytes], dtype="<f8").astype(np.float64)
        pos += nbytes
    if pos != len(data):
        raise SchemaError(f"{path}: {len(data) - pos} trailing bytes")
    return meta, tensors
