"""Writer for the CIEM embedding file format consumed by the scoring pipeline.

Layout, little-endian throughout: magic "CIEM", version u8 (1), dimension u32,
record count u64, then per record a u16 id byte length, the UTF-8 id bytes and
dimension x f32 vector components.
"""
from __future__ import annotations

import struct
from typing import Sequence

import numpy as np

MAGIC = b"CIEM"
VERSION = 1
_HEADER = struct.Struct("<4sBIQ")


def write_ciem(path, ids: Sequence[str], vectors: np.ndarray) -> int:
    """Write (ids, n x d float32 matrix) as a CIEM file; returns bytes written."""
    matrix = np.ascontiguousarray(vectors, dtype="<f4")
    if matrix.ndim != 2 or matrix.shape[0] != len(ids):
        raise ValueError(f"need one vector per id, got {matrix.shape} for {len(ids)} ids")
    if matrix.shape[1] == 0:
        raise ValueError("vectors must have at least one dimension")
    if not np.all(np.isfinite(matrix)):
        raise ValueError("vectors contain non-finite values")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate image ids")

    written = 0
    with open(path, "wb") as sink:
        written += sink.write(_HEADER.pack(MAGIC, VERSION, matrix.shape[1], len(ids)))
        for image_id, row in zip(ids, matrix):
            id_bytes = image_id.encode("utf-8")
            if not 0 < len(id_bytes) <= 0xFFFF:
                raise ValueError(f"image id length out of range: {image_id!r}")
            written += sink.write(struct.pack("<H", len(id_bytes)))
            written += sink.write(id_bytes)
            written += sink.write(row.tobytes())
    return written
