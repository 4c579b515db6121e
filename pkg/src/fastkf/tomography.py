"""Straight-ray cross-well travel-time tomography.

Rays run from sources on the left boundary (``x = 0``) to receivers on the
right boundary (``x = lx``). Each source-receiver pair contributes one row of
the measurement operator whose entries are the lengths of the ray inside each
cell, so ``H @ slowness`` is the travel time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import erf

from .covariance import Grid
from .errors import DegenerateRayError
from .rng import as_rng

# parameter values closer than this (relative to the unit ray parameter) are merged
T_MERGE = 1e-12


@dataclass(frozen=True)
class SourceReceiverLayout:
    sources: np.ndarray
    receivers: np.ndarray

    @property
    def n_sou(self) -> int:
        return len(self.sources)

    @property
    def n_rec(self) -> int:
        return len(self.receivers)

    @property
    def n_m(self) -> int:
        return self.n_sou * self.n_rec

    def check(self, grid: Grid):
        pts = np.vstack([self.sources, self.receivers])
        eps = 1e-12 * max(grid.lx, grid.ly)
        inside = (
            (pts[:, 0] >= -eps) & (pts[:, 0] <= grid.lx + eps) & (pts[:, 1] >= -eps) & (pts[:, 1] <= grid.ly + eps)
        )
        if not inside.all():
            bad = int(np.flatnonzero(~inside)[0])
            raise ValueError(f"layout point {pts[bad]} lies outside the grid domain")


def crosswell_layout(grid: Grid, n_sou: int = 6, n_rec: int = 48) -> SourceReceiverLayout:
    """Equispaced sources on the left boundary and receivers on the right."""
    ys = (np.arange(n_sou) + 0.5) * grid.ly / n_sou
    yr = (np.arange(n_rec) + 0.5) * grid.ly / n_rec
    sources = np.column_stack([np.zeros(n_sou), ys])
    receivers = np.column_stack([np.full(n_rec, grid.lx), yr])
    return SourceReceiverLayout(sources, receivers)


def trace_ray(grid: Grid, src, rec) -> list[tuple[int, float]]:
    """Cells crossed by the segment ``src -> rec`` with the length inside each.

    Crossing parameters with every vertical and horizontal grid line are
    merged into one sorted list; a crossing through a grid corner appears
    once. Each sub-segment is assigned to the cell containing its midpoint.
    Cells are returned in order along the ray.
    """
    src = np.asarray(src, dtype=float)
    rec = np.asarray(rec, dtype=float)
    d = rec - src
    length = float(np.hypot(d[0], d[1]))
    if length == 0.0:
        raise DegenerateRayError(f"source and receiver coincide at {tuple(src)}")

    ts = [np.array([0.0, 1.0])]
    for axis, (n_cells, h) in enumerate(((grid.nx, grid.dx), (grid.ny, grid.dy))):
        if d[axis] != 0.0:
            lines = np.arange(n_cells + 1) * h
            t = (lines - src[axis]) / d[axis]
            ts.append(t[(t > 0.0) & (t < 1.0)])
    t = np.sort(np.concatenate(ts))
    keep = np.concatenate([[True], np.diff(t) > T_MERGE])
    t = t[keep]
    t[-1] = 1.0

    mid = 0.5 * (t[:-1] + t[1:])
    px = src[0] + mid * d[0]
    py = src[1] + mid * d[1]
    ix = np.clip(np.floor(px / grid.dx).astype(int), 0, grid.nx - 1)
    iy = np.clip(np.floor(py / grid.dy).astype(int), 0, grid.ny - 1)
    seg = np.diff(t) * length
    cells = ix * grid.ny + iy
    return [(int(c), float(s)) for c, s in zip(cells, seg)]


def build_H(grid: Grid, layout: SourceReceiverLayout) -> sp.csr_matrix:
    """Sparse ``(n_m, n_s)`` ray-length matrix; rows are source-major."""
    layout.check(grid)
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for s in layout.sources:
        for r in layout.receivers:
            entries = trace_ray(grid, s, r)
            indices.extend(c for c, _ in entries)
            data.extend(v for _, v in entries)
            indptr.append(len(indices))
    H = sp.csr_matrix(
        (np.asarray(data), np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
        shape=(layout.n_m, grid.n),
    )
    H.sum_duplicates()
    return H


def ray_lengths(layout: SourceReceiverLayout) -> np.ndarray:
    """Euclidean source-receiver distances in row order."""
    diff = layout.receivers[None, :, :] - layout.sources[:, None, :]
    return np.hypot(diff[..., 0], diff[..., 1]).ravel()


@dataclass(frozen=True)
class Blob:
    """Gaussian blob with linearly growing, capped amplitude and linear drift."""

    center: tuple[float, float]
    widths: tuple[float, float]
    rate: float  # slowness perturbation per hour
    drift: tuple[float, float] = (0.0, 0.0)  # length per hour

    def amplitude(self, t: float, cap: float) -> float:
        return min(self.rate * t, cap)

    def center_at(self, t: float) -> tuple[float, float]:
        return (self.center[0] + self.drift[0] * t, self.center[1] + self.drift[1] * t)


def _default_blobs() -> tuple[Blob, ...]:
    return (
        Blob(center=(0.45, 0.62), widths=(0.09, 0.05), rate=4e-4, drift=(0.0005, -0.0005)),
        Blob(center=(0.55, 0.40), widths=(0.06, 0.04), rate=2e-4, drift=(0.001, 0.0)),
    )


@dataclass(frozen=True)
class PlumeModel:
    """Analytic stand-in for a growing injection plume (at most three blobs)."""

    blobs: tuple[Blob, ...] = field(default_factory=_default_blobs)
    max_amplitude: float = 0.05

    def __post_init__(self):
        if not 1 <= len(self.blobs) <= 3:
            raise ValueError(f"plume model takes 1 to 3 blobs, got {len(self.blobs)}")
        if self.max_amplitude <= 0:
            raise ValueError("max_amplitude must be positive")
        for b in self.blobs:
            if b.rate < 0 or min(b.widths) <= 0:
                raise ValueError(f"invalid blob {b}")

    def mass(self, grid: Grid, t: float) -> float:
        """Closed-form integral of the field over the grid domain."""
        total = 0.0
        for b in self.blobs:
            cx, cy = b.center_at(t)
            sx, sy = b.widths
            ix = 0.5 * (erf((grid.lx - cx) / (np.sqrt(2) * sx)) - erf(-cx / (np.sqrt(2) * sx)))
            iy = 0.5 * (erf((grid.ly - cy) / (np.sqrt(2) * sy)) - erf(-cy / (np.sqrt(2) * sy)))
            total += b.amplitude(t, self.max_amplitude) * 2 * np.pi * sx * sy * ix * iy
        return float(total)


def synth_plume(model: PlumeModel, grid: Grid, t: float) -> np.ndarray:
    """Slowness perturbation at time ``t`` hours, flattened in grid order."""
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    pts = grid.centers()
    out = np.zeros(grid.n)
    for b in model.blobs:
        amp = b.amplitude(t, model.max_amplitude)
        if amp == 0.0:
            continue
        cx, cy = b.center_at(t)
        sx, sy = b.widths
        out += amp * np.exp(-0.5 * (((pts[:, 0] - cx) / sx) ** 2 + ((pts[:, 1] - cy) / sy) ** 2))
    return np.minimum(out, model.max_amplitude)


def simulate_observations(H, s_t, sigma2: float, seed: int | np.random.Generator) -> np.ndarray:
    """``y = H s_t + v`` with ``v ~ N(0, sigma2 I)`` from a seeded generator."""
    if sigma2 < 0:
        raise ValueError(f"sigma2 must be nonnegative, got {sigma2}")
    s_t = np.asarray(s_t, dtype=float)
    if s_t.shape != (H.shape[1],):
        raise ValueError(f"field has shape {s_t.shape}, operator expects ({H.shape[1]},)")
    rng = as_rng(seed)
    y = H @ s_t
    if sigma2 > 0:
        y = y + np.sqrt(sigma2) * rng.standard_normal(H.shape[0])
    return y
