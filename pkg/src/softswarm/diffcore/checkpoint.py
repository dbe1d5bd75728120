"""Flat binary checkpoint container for named parameter tensors.

Layout (little-endian):

    bytes 0..3    magic ``SSW1``
    bytes 4..7    header length ``H`` as uint32
    bytes 8..8+H  UTF-8 JSON header
    remainder     concatenated row-major float64 tensor payloads

The JSON header carries ``format_version``, ``group_count``, a ``meta``
object for arbitrary run metadata, and a ``tensors`` list of
``{name, shape, offset}`` entries where ``offset`` indexes float64 elements
into the payload.  Round-trips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

__all__ = ["save_checkpoint", "load_checkpoint", "CheckpointError"]

_MAGIC = b"SSW1"
_FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, tensors: dict[str, np.ndarray], *,
                    group_count: int, meta: dict | None = None) -> None:
    """Write named float64 arrays to ``path``; names are sorted for determinism."""
    names = sorted(tensors)
    entries = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.asarray(tensors[name], dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        blobs.append(arr.tobytes(order="C"))
    header = {
        "format_version": _FORMAT_VERSION,
        "group_count": int(group_count),
        "meta": meta or {},
        "tensors": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(np.uint32(len(header_bytes)).tobytes())
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint; returns (name -> array, header dict)."""
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint container")
    header_len = int(np.frombuffer(raw[4:8], dtype=np.uint32)[0])
    header = json.loads(raw[8:8 + header_len].decode("utf-8"))
    if header.get("format_version") != _FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {header.get('format_version')}")
    payload = np.frombuffer(raw[8 + header_len:], dtype="<f8")
    tensors = {}
    for entry in header["tensors"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        chunk = payload[entry["offset"]:entry["offset"] + size]
        if chunk.size != size:
            raise CheckpointError(f"{path}: truncated payload for {entry['name']!r}")
        tensors[entry["name"]] = chunk.reshape(entry["shape"]).copy()
    return tensors, header
