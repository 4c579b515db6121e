"""Stationary covariance kernels on regular 2-D grids.

Two storage modes share one interface:

* ``"fft"``: the block-Toeplitz kernel matrix is embedded in a block-circulant
  matrix and applied with real FFTs in O(n log n).
* ``"dense"``: the full matrix is materialised; its symmetric
  eigendecomposition is computed on first use and backs the square-root
  applications.

Grid points are cell centres, flattened with ``k = ix * ny + iy`` so that a
field reshaped to ``(nx, ny)`` is row-major over ``(ix, iy)``.
"""

from __future__ import annotations

import logging
import math
import os
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, cg
from scipy.spatial.distance import cdist
from scipy.special import gamma as gamma_fn
from scipy.special import kv

from .errors import ConvergenceError, EmbeddingError, UnsupportedModeError

log = logging.getLogger(__name__)

FAMILIES = ("powered-exponential", "matern")
MODES = ("fft", "dense")

# spectrum values above -NEG_TOL * max(spectrum) count as nonnegative
NEG_TOL = 1e-10
MAX_PAD_FACTOR = 8
DENSE_EIG_WARN = 5000


def fft_workers() -> int | None:
    """Worker count for scipy.fft, read from ``FASTKF_THREADS``."""
    value = os.environ.get("FASTKF_THREADS")
    return int(value) if value else None


@dataclass(frozen=True)
class Grid:
    """Regular cell-centred grid on ``[0, lx] x [0, ly]``."""

    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        if int(self.nx) < 1 or int(self.ny) < 1:
            raise ValueError(f"grid counts must be >= 1, got {self.nx}x{self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError(f"grid extents must be positive, got {self.lx}, {self.ly}")

    @property
    def dx(self) -> float:
        return self.lx / self.nx

    @property
    def dy(self) -> float:
        return self.ly / self.ny

    @property
    def n(self) -> int:
        return self.nx * self.ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    def centers(self) -> np.ndarray:
        """Cell centres as an ``(n, 2)`` array in flattening order."""
        xs = (np.arange(self.nx) + 0.5) * self.dx
        ys = (np.arange(self.ny) + 0.5) * self.dy
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])


@dataclass(frozen=True)
class KernelSpec:
    """Parameters of a stationary isotropic kernel.

    ``powered-exponential``: ``theta * exp(-(r / length) ** power)``.

    ``matern``: ``theta * 2**(1-nu) / Gamma(nu) * z**nu * K_nu(z)`` with
    ``z = sqrt(2 nu) * alpha_scale * r``. ``alpha_scale`` defaults to
    ``1 / length``, which makes ``nu = 1/2`` coincide with the
    powered-exponential kernel at ``power = 1``.
    """

    family: str = "powered-exponential"
    theta: float = 1e-4
    length: float = 0.2
    power: float = 0.5
    nu: float = 0.5
    alpha_scale: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if not self.theta > 0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        if not self.length > 0:
            raise ValueError(f"length must be positive, got {self.length}")
        if not 0 < self.power <= 2:
            raise ValueError(f"power must lie in (0, 2], got {self.power}")
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if self.alpha_scale is not None and not self.alpha_scale > 0:
            raise ValueError(f"alpha_scale must be positive, got {self.alpha_scale}")

    @property
    def scale(self) -> float:
        return self.alpha_scale if self.alpha_scale is not None else 1.0 / self.length


def kernel_eval(spec: KernelSpec, r) -> np.ndarray:
    """Evaluate the kernel at distances ``r >= 0`` (scalar or array)."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("distances must be nonnegative")
    if spec.family == "powered-exponential":
        return spec.theta * np.exp(-((r / spec.length) ** spec.power))

    nu = spec.nu
    z = math.sqrt(2.0 * nu) * spec.scale * r
    out = np.full(z.shape, spec.theta)
    pos = z > 0
    zp = z[pos]
    with np.errstate(over="ignore", invalid="ignore"):
        vals = spec.theta * (2.0 ** (1.0 - nu) / gamma_fn(nu)) * zp**nu * kv(nu, zp)
    # K_nu underflows to 0 for very large z; the limit is 0 as well
    out[pos] = np.nan_to_num(vals, nan=0.0, posinf=0.0)
    return out


class CovarianceOperator:
    """Covariance matrix of a stationary kernel on a regular grid.

    Immutable after construction. Inputs are vectors of length ``n`` or
    ``(n, m)`` blocks of column vectors.
    """

    def __init__(self, grid: Grid, spec: KernelSpec, mode: str = "fft"):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        self.grid = grid
        self.spec = spec
        self.mode = mode
        self.n = grid.n
        self.pad_shape: tuple[int, int] | None = None
        self._spectrum: np.ndarray | None = None
        self._matrix: np.ndarray | None = None
        if mode == "fft":
            self._build_embedding()
        else:
            self._matrix = self.to_dense()

    def __repr__(self):
        return f"CovarianceOperator({self.grid.nx}x{self.grid.ny}, {self.spec.family}, mode={self.mode!r})"

    # -- construction -------------------------------------------------------

    def _embedding_first_row(self, mx: int, my: int) -> np.ndarray:
        g = self.grid
        ix = np.arange(mx)
        iy = np.arange(my)
        hx = np.minimum(ix, mx - ix) * g.dx
        hy = np.minimum(iy, my - iy) * g.dy
        return kernel_eval(self.spec, np.hypot(hx[:, None], hy[None, :]))

    def _build_embedding(self):
        g = self.grid
        mx0 = sfft.next_fast_len(max(2 * g.nx - 1, 1), real=True)
        my0 = sfft.next_fast_len(max(2 * g.ny - 1, 1), real=True)
        mx, my = mx0, my0
        while True:
            spectrum = sfft.rfft2(self._embedding_first_row(mx, my), workers=fft_workers()).real
            top = spectrum.max()
            if spectrum.min() >= -NEG_TOL * top:
                break
            if mx >= MAX_PAD_FACTOR * mx0 and my >= MAX_PAD_FACTOR * my0:
                raise EmbeddingError(
                    f"circulant embedding of {self.spec} on a {g.nx}x{g.ny} grid is not "
                    f"nonnegative definite after padding to {mx}x{my} "
                    f"(min/max spectrum {spectrum.min() / top:.3e})"
                )
            log.info("embedding indefinite at %dx%d; doubling padding", mx, my)
            mx = min(2 * mx, MAX_PAD_FACTOR * mx0)
            my = min(2 * my, MAX_PAD_FACTOR * my0)
        self.pad_shape = (mx, my)
        self._spectrum = spectrum

    @property
    def spectrum(self) -> np.ndarray:
        if self._spectrum is None:
            raise UnsupportedModeError("spectrum only exists for fft-mode operators")
        return self._spectrum

    def to_dense(self) -> np.ndarray:
        """Materialise ``Gamma_ij = kappa(|x_i - x_j|)`` regardless of mode."""
        if self._matrix is not None:
            return self._matrix.copy()
        pts = self.grid.centers()
        return kernel_eval(self.spec, cdist(pts, pts))

    @cached_property
    def _eig(self) -> tuple[np.ndarray, np.ndarray]:
        if self.mode != "dense":
            raise UnsupportedModeError(
                "square-root applications need a dense-mode operator; "
                f"this one is {self.mode!r}"
            )
        if self.n > DENSE_EIG_WARN:
            warnings.warn(
                f"dense eigendecomposition of a {self.n}x{self.n} covariance", RuntimeWarning, stacklevel=3
            )
        w, V = sla.eigh(self._matrix)
        if w[0] <= 0:
            raise EmbeddingError(f"dense covariance is not positive definite (min eigenvalue {w[0]:.3e})")
        return w, V

    # -- operations ---------------------------------------------------------

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n or x.ndim > 2:
            raise ValueError(f"expected leading dimension {self.n}, got shape {x.shape}")
        return x

    def apply(self, x) -> np.ndarray:
        """Return ``Gamma @ x``."""
        x = self._check(x)
        if self.mode == "dense":
            return self._matrix @ x
        g = self.grid
        mx, my = self.pad_shape
        block = x.reshape(g.nx, g.ny, -1)
        w = fft_workers()
        fx = sfft.rfft2(block, s=(mx, my), axes=(0, 1), workers=w)
        fx *= self._spectrum[:, :, None]
        y = sfft.irfft2(fx, s=(mx, my), axes=(0, 1), workers=w)[: g.nx, : g.ny]
        return y.reshape(x.shape)

    __matmul__ = apply

    def solve(self, x, tol: float = 1e-10, maxiter: int | None = None, return_info: bool = False):
        """Return ``y`` with ``|Gamma y - x| <= tol |x|`` by conjugate gradients.

        ``maxiter`` defaults to ``10 * sqrt(n)``. Columns of a 2-D ``x`` are
        solved one at a time. With ``return_info`` the iteration count (max
        over columns) is returned as well.
        """
        if not 0 < tol < 1:
            raise ValueError(f"tol must lie in (0, 1), got {tol}")
        x = self._check(x)
        if maxiter is None:
            maxiter = int(math.ceil(10 * math.sqrt(self.n)))
        if x.ndim == 2:
            cols = [self.solve(x[:, j], tol, maxiter, return_info=True) for j in range(x.shape[1])]
            out = np.column_stack([c[0] for c in cols]) if cols else np.zeros_like(x)
            iters = max((c[1] for c in cols), default=0)
            return (out, iters) if return_info else out

        bnorm = np.linalg.norm(x)
        if bnorm == 0.0:
            return (np.zeros_like(x), 0) if return_info else np.zeros_like(x)
        A = LinearOperator((self.n, self.n), matvec=self.apply, dtype=float)
        count = [0]

        def _count(_):
            count[0] += 1

        y, _ = cg(A, x, rtol=tol, atol=0.0, maxiter=maxiter, callback=_count)
        residual = np.linalg.norm(self.apply(y) - x) / bnorm
        if residual > tol:
            raise ConvergenceError("conjugate gradients did not converge", residual, count[0])
        return (y, count[0]) if return_info else y

    def root_apply(self, x, direction: float = 0.5) -> np.ndarray:
        """Return ``Gamma^{1/2} x`` (``direction=+0.5``) or ``Gamma^{-1/2} x`` (``-0.5``)."""
        if direction not in (0.5, -0.5):
            raise ValueError(f"direction must be +0.5 or -0.5, got {direction}")
        w, V = self._eig
        x = self._check(x)
        scale = np.sqrt(w) if direction > 0 else 1.0 / np.sqrt(w)
        if x.ndim == 1:
            return V @ (scale * (V.T @ x))
        return V @ (scale[:, None] * (V.T @ x))

    def diag_trace(self) -> tuple[np.ndarray, float]:
        """Diagonal and trace; both follow from stationarity (``kappa(0) = theta``)."""
        k0 = float(kernel_eval(self.spec, 0.0))
        return np.full(self.n, k0), self.n * k0

    def logdet(self) -> float:
        """Log-determinant through the dense eigendecomposition."""
        w, _ = self._eig
        return float(np.sum(np.log(w)))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` independent ``N(0, Gamma)`` vectors as an ``(n, size)`` array.

        fft mode samples the periodic field of the circulant embedding and
        crops it; dense mode uses the symmetric square root.
        """
        if self.mode == "dense":
            return self.root_apply(rng.standard_normal((self.n, size)), 0.5)
        g = self.grid
        mx, my = self.pad_shape
        full = sfft.fft2(self._embedding_first_row(mx, my)).real
        # full spectrum passed the embedding check; round-off negatives are zeroed
        root = np.sqrt(np.clip(full, 0.0, None) / (mx * my))
        out = np.empty((self.n, size))
        filled = 0
        w = fft_workers()
        while filled < size:
            take = min(size - filled, 2 * 64)
            m = (take + 1) // 2
            xi = rng.standard_normal((mx, my, m)) + 1j * rng.standard_normal((mx, my, m))
            z = sfft.fft2(root[:, :, None] * xi, axes=(0, 1), workers=w)[: g.nx, : g.ny]
            fields = np.concatenate([z.real, z.imag], axis=2).reshape(self.n, 2 * m)
            out[:, filled : filled + take] = fields[:, :take]
            filled += take
        return out


def build_operator(grid: Grid, spec: KernelSpec, mode: str = "fft") -> CovarianceOperator:
    """Construct a covariance operator; see :class:`CovarianceOperator`."""
    return CovarianceOperator(grid, spec, mode)
