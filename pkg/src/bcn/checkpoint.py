"""Checkpoint container.

Layout: 8-byte magic ``BCNCKPT1``, little-endian uint32 header length, a
UTF-8 JSON header listing every array (name, shape, dtype) plus free-form
metadata, then the raw little-endian float32 payloads in header order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"BCNCKPT1"


class CheckpointError(IOError):
    pass


def save_checkpoint(path, arrays: list[tuple[str, np.ndarray]], meta: dict | None = None):
    entries = []
    payloads = []
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "float32"})
        payloads.append(arr.tobytes())
    header = json.dumps({"entries": entries, "meta": meta or {}}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for p in payloads:
            f.write(p)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:8]!r}, expected {MAGIC!r}")
    (hlen,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
    offset = 12 + hlen
    arrays: dict[str, np.ndarray] = {}
    for entry in header["entries"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        if offset + nbytes > len(blob):
            raise CheckpointError(
                f"{path}: truncated payload for {entry['name']} at offset {offset}"
            )
        arrays[entry["name"]] = np.frombuffer(
            blob, dtype="<f4", count=nbytes // 4, offset=offset
        ).reshape(shape).copy()
        offset += nbytes
    return arrays, header.get("meta", {})
