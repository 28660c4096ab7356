"""Writer for the engine's FDEM embedding format.

Layout: magic ``FDEM``, u32 LE version 1, u32 LE dtype 0 (float32),
u64 rows, u64 dim, then row-major little-endian float32 with no padding
or footer. Rows are expected unit-norm; ``write_fdem`` renormalizes after
the float32 cast so the engine's validation holds exactly in f32.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FDEM"
VERSION = 1
DTYPE_F32 = 0
_HEADER = struct.Struct("<4sIIQQ")


def unit_f32(rows: np.ndarray) -> np.ndarray:
    """Cast to float32 and renormalize post-cast."""
    arr = np.ascontiguousarray(rows, dtype=np.float32)
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot normalize a zero row")
    return (arr / norms).astype(np.float32)


def write_fdem(path: str | Path, rows: np.ndarray, renormalize: bool = True) -> None:
    arr = unit_f32(rows) if renormalize else np.ascontiguousarray(rows, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"need a non-empty 2-D matrix, got shape {arr.shape}")
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, arr.shape[0], arr.shape[1])
    payload = arr.astype("<f4", copy=False).tobytes(order="C")
    Path(path).write_bytes(header + payload)
