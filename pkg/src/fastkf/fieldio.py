"""On-disk formats: FKF1 binary fields and observation CSV files.

An FKF1 file is the 4-byte magic ``FKF1``, two little-endian uint32 sizes
``nx, ny`` and then ``nx * ny`` little-endian float64 values in row-major
order (cell ``(ix, iy)`` at flat index ``ix * ny + iy``).
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FKF1"
_HEADER = struct.Struct("<4sII")


def write_field(path, values, shape: tuple[int, int]) -> None:
    nx, ny = shape
    arr = np.ascontiguousarray(values, dtype="<f8").reshape(-1)
    if arr.size != nx * ny:
        raise ValueError(f"field has {arr.size} values, shape {nx}x{ny} needs {nx * ny}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, nx, ny))
        fh.write(arr.tobytes())


def read_field(path) -> np.ndarray:
    """Return the stored field as an ``(nx, ny)`` float64 array."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, nx, ny = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 8 * nx * ny
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for a {nx}x{ny} field, found {len(data)}")
    return np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(nx, ny).astype(float)


def write_observations(path, obs: np.ndarray) -> None:
    """``obs[k, i]`` is measurement ``i`` of step ``k + 1``; rows are ``step,index,value``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "index", "value"])
        for k, row in enumerate(obs, start=1):
            for i, v in enumerate(row):
                w.writerow([k, i, repr(float(v))])


def read_observations(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no observations")
    steps = np.array([int(r["step"]) for r in rows])
    idx = np.array([int(r["index"]) for r in rows])
    vals = np.array([float(r["value"]) for r in rows])
    n_steps, n_m = steps.max(), idx.max() + 1
    if steps.min() < 1 or len(rows) != n_steps * n_m:
        raise ValueError(f"{path}: expected a full {n_steps}x{n_m} table of observations")
    out = np.full((n_steps, n_m), np.nan)
    out[steps - 1, idx] = vals
    if np.isnan(out).any():
        raise ValueError(f"{path}: duplicate or missing (step, index) entries")
    return out
