"""Flat binary checkpoints for named float64 arrays.

Layout::

    b"ROAPCKPT"             8-byte magic
    uint32 LE               format version
    uint64 LE               manifest length in bytes
    manifest                UTF-8 JSON list of {"name", "shape", "offset"}
    data                    little-endian float64 arrays, offsets relative to data start
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"ROAPCKPT"
VERSION = 1
_HEADER = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: Mapping[str, np.ndarray]) -> None:
    manifest, chunks, offset = [], [], 0
    for name in sorted(arrays):
        a = np.asarray(arrays[name], dtype="<f8")
        manifest.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes(order="C"))
        offset += a.nbytes
    blob = json.dumps(manifest, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, mlen = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    start = _HEADER.size + mlen
    try:
        manifest = json.loads(raw[_HEADER.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest") from exc
    out = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        lo = start + entry["offset"]
        if lo + 8 * count > len(raw):
            raise CheckpointError(f"{path}: array {entry['name']!r} runs past end of file")
        out[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=lo).reshape(shape).astype(np.float64)
    return out
