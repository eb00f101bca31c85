"""Binary parameter container.

Layout (all integers little-endian)::

    8 bytes   magic  b"PONNCKPT"
    uint32    format version (currently 1)
    uint32    header length in bytes
    header    UTF-8 JSON, sorted keys:
              {"kind": str, "meta": {...},
               "arrays": [{"name": str, "dtype": "<f8", "shape": [...]}, ...]}
    payload   each array's raw C-order bytes, in header order

Arrays are stored as little-endian float64, so a save/load round trip is
bit-exact. Nothing time- or host-dependent is written.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PONNCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(arrays: dict[str, np.ndarray], kind: str, meta: dict | None = None) -> bytes:
    entries = []
    chunks = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "dtype": "<f8", "shape": list(a.shape)})
        chunks.append(a.tobytes())
    header = json.dumps({"kind": kind, "meta": meta or {}, "arrays": entries}, sort_keys=True).encode()
    return MAGIC + struct.pack("<II", VERSION, len(header)) + header + b"".join(chunks)


def loads(blob: bytes) -> tuple[str, dict, dict[str, np.ndarray]]:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(blob[16 : 16 + hlen].decode())
    offset = 16 + hlen
    arrays = {}
    for e in header["arrays"]:
        shape = tuple(e["shape"])
        n = int(np.prod(shape, dtype=np.int64)) * 8
        if offset + n > len(blob):
            raise CheckpointError(f"truncated payload for {e['name']}")
        arrays[e["name"]] = np.frombuffer(blob, dtype=e["dtype"], count=n // 8, offset=offset).reshape(shape).astype(np.float64)
        offset += n
    if offset != len(blob):
        raise CheckpointError("trailing bytes after payload")
    return header["kind"], header["meta"], arrays


def save_checkpoint(path, arrays: dict[str, np.ndarray], kind: str, meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(arrays, kind, meta))


def load_checkpoint(path) -> tuple[str, dict, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())
