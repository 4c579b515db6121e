"""Low-rank symmetric factorizations in a non-Euclidean metric.

Every basis ``Q`` produced here is orthonormal in the inner product
``<x, y>_B = x^T B y`` of a symmetric positive definite metric ``B``. Bases
travel together with their images ``BQ``: when ``B = Gamma^{-1}`` this
turns every metric inner product into a plain dot product and no linear
solve with ``Gamma`` is ever needed.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg as sla

from .errors import RankCollapseError
from .rng import as_rng

log = logging.getLogger(__name__)

Operator = Callable[[np.ndarray], np.ndarray]

DROP_TOL = 1e-12
# eigenvalues of the small projected matrix below this fraction of the largest
# are round-off, even when no truncation was requested
ROUNDOFF_FLOOR = 1e-14
SINGLE_PASS_MAX_COND = 1e8


class BOrtho(NamedTuple):
    Q: np.ndarray  # (n, r) with Q^T B Q = I
    BQ: np.ndarray  # (n, r) images B @ Q
    R: np.ndarray  # (r, m) coefficients, V = against @ C + Q @ R
    C: np.ndarray  # (p, m) coefficients on ``against``
    dropped: list[int]


def b_orthonormalize(
    V: np.ndarray,
    B_apply: Operator | None = None,
    against: np.ndarray | None = None,
    *,
    BV: np.ndarray | None = None,
    B_against: np.ndarray | None = None,
    drop_tol: float = DROP_TOL,
) -> BOrtho:
    """Gram-Schmidt in the ``B`` inner product with one full reorthogonalization.

    Either ``B_apply`` or the images ``BV`` (and ``B_against``) must be
    given. With ``B_apply`` the image of each finished column is recomputed
    from scratch; without it, images are carried along as the same linear
    combinations as the columns.

    Columns whose ``B``-norm after projection falls below ``drop_tol`` times
    their original ``B``-norm are dropped and listed in ``dropped``.
    """
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    n, m = V.shape
    if BV is None:
        if B_apply is None:
            raise ValueError("need B_apply or the images BV")
        BV = B_apply(V) if m else np.zeros_like(V)
    if against is not None:
        against = np.asarray(against, dtype=float)
        if B_against is None:
            if B_apply is None:
                raise ValueError("need B_apply or the images B_against")
            B_against = B_apply(against)
        p = against.shape[1]
    else:
        p = 0

    Q = np.empty((n, m))
    BQ = np.empty((n, m))
    R = np.zeros((m, m))
    C = np.zeros((p, m))
    dropped = []
    norms0 = np.sqrt(np.maximum(np.einsum("ij,ij->j", V, BV), 0.0))
    k = 0
    for j in range(m):
        v = V[:, j].copy()
        bv = BV[:, j].copy()
        for _ in range(2):
            if p:
                c = B_against.T @ v
                v -= against @ c
                bv -= B_against @ c
                C[:, j] += c
            if k:
                c = BQ[:, :k].T @ v
                v -= Q[:, :k] @ c
                bv -= BQ[:, :k] @ c
                R[:k, j] += c
        if B_apply is not None:
            bv = B_apply(v)
        nrm = np.sqrt(max(float(v @ bv), 0.0))
        if norms0[j] == 0.0 or nrm <= drop_tol * norms0[j]:
            dropped.append(j)
            continue
        Q[:, k] = v / nrm
        BQ[:, k] = bv / nrm
        R[k, j] = nrm
        k += 1
    return BOrtho(Q[:, :k], BQ[:, :k], R[:k], C, dropped)


@dataclass
class GepResult:
    """Dominant pairs of ``A x = lam Gamma^{-1} x``.

    ``U`` is ``Gamma^{-1}``-orthonormal, ``BU = Gamma^{-1} U`` and
    ``A ~= BU diag(lam) BU^T``. ``Q`` is the metric-orthonormal sketch basis
    the pairs were extracted from.
    """

    U: np.ndarray
    lam: np.ndarray
    BU: np.ndarray
    Q: np.ndarray | None = None
    passes: str = "two-pass"

    @property
    def k(self) -> int:
        return self.lam.size


def randomized_ghep(
    A_apply: Operator,
    cov,
    k: int,
    p_oversample: int = 20,
    seed=0,
    passes: str = "two-pass",
) -> GepResult:
    """Randomized eigensolver for ``A x = lam Gamma^{-1} x`` with ``A`` PSD.

    ``cov`` supplies ``apply`` (``Gamma``, i.e. ``B^{-1}``); no solves are
    used. Returns at most ``k`` pairs, fewer if the sketch has smaller
    numerical rank.
    """
    if passes not in ("two-pass", "single-pass"):
        raise ValueError(f"passes must be 'two-pass' or 'single-pass', got {passes!r}")
    n = cov.n
    ell = k + p_oversample
    if k < 1 or p_oversample < 0 or ell > n:
        raise ValueError(f"need 1 <= k and k + p_oversample <= n ({k} + {p_oversample} > {n})")
    rng = as_rng(seed)
    omega = rng.standard_normal((n, ell))
    Ybar = A_apply(omega)

    if not np.any(Ybar):
        # A = 0: any metric-orthonormal basis is an exact eigenbasis
        orth = b_orthonormalize(omega, cov.apply)
        Qbar, Q = orth.Q[:, :k], orth.BQ[:, :k]
        return GepResult(U=Q, lam=np.zeros(Q.shape[1]), BU=Qbar, Q=Q, passes=passes)

    # Qbar^T Gamma Qbar = I, Q = Gamma Qbar is Gamma^{-1}-orthonormal
    orth = b_orthonormalize(Ybar, cov.apply)
    Qbar, Q = orth.Q, orth.BQ
    if Qbar.shape[1] == 0:
        raise RankCollapseError("every sketch column was dropped; A is numerically zero")

    T = None
    if passes == "single-pass":
        G = omega.T @ Qbar
        if np.linalg.cond(G) > SINGLE_PASS_MAX_COND:
            warnings.warn("Omega^T Qbar is ill-conditioned; falling back to two-pass", RuntimeWarning, stacklevel=2)
            passes = "two-pass"
        else:
            M = omega.T @ Ybar
            X = np.linalg.lstsq(G, M, rcond=None)[0]
            T = np.linalg.lstsq(G, X.T, rcond=None)[0].T
    if T is None:
        T = Q.T @ A_apply(Q)
    T = 0.5 * (T + T.T)

    lam, S = np.linalg.eigh(T)
    order = np.argsort(lam)[::-1][:k]
    lam, S = lam[order], S[:, order]
    # A is PSD; negative Ritz values are round-off
    lam = np.maximum(lam, 0.0)
    return GepResult(U=Q @ S, lam=lam, BU=Qbar @ S, Q=Q, passes=passes)


def ghep_residual(result: GepResult, A_apply: Operator, cov=None) -> np.ndarray:
    """Relative residuals ``|A u - lam Gamma^{-1} u| / max(lam |Gamma^{-1} u|, eps)``."""
    BU = result.BU if result.BU is not None else cov.solve(result.U)
    AU = A_apply(result.U)
    num = np.linalg.norm(AU - BU * result.lam, axis=0)
    den = np.maximum(result.lam * np.linalg.norm(BU, axis=0), np.finfo(float).eps)
    return num / den


@dataclass
class LowRankSym:
    """``W diag(D) W^T`` with ``W^T B W = I``; ``BW`` caches ``B @ W``."""

    W: np.ndarray
    D: np.ndarray
    BW: np.ndarray | None = None

    @property
    def rank(self) -> int:
        return self.D.size

    def dense(self) -> np.ndarray:
        return (self.W * self.D) @ self.W.T


def add_low_rank(
    U: np.ndarray,
    D_U: np.ndarray,
    V: np.ndarray,
    D_V: np.ndarray,
    B_apply: Operator | None = None,
    tol: float = 0.0,
    *,
    BU: np.ndarray | None = None,
    BV: np.ndarray | None = None,
) -> LowRankSym:
    """Represent ``U D_U U^T + V D_V V^T`` as ``W D_W W^T`` with ``W^T B W = I``.

    ``U`` and ``V`` must each be ``B``-orthonormal. Eigenvalues of the
    projected matrix with magnitude below ``tol`` times the largest magnitude
    are discarded; signs are kept, so indefinite sums are supported.
    """
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    D_U = np.asarray(D_U, dtype=float)
    D_V = np.asarray(D_V, dtype=float)
    if BU is None and B_apply is not None and U.shape[1]:
        BU = B_apply(U)
    if V.shape[1] == 0:
        return LowRankSym(U, D_U, BU)

    if U.shape[1] == 0:
        orth = b_orthonormalize(V, B_apply, BV=BV)
        basis, Bbasis = orth.Q, orth.BQ
        K = orth.R
        M = (K * D_V) @ K.T
    else:
        if BU is None:
            raise ValueError("need B_apply or the images BU")
        # block Gram-Schmidt of V against U, then QR of the remainder
        orth = b_orthonormalize(V, B_apply, against=U, BV=BV, B_against=BU)
        basis = np.hstack([U, orth.Q])
        Bbasis = np.hstack([BU, orth.BQ])
        K = np.vstack([orth.C, orth.R])  # [U^T B V; Vhat^T B V]
        M = (K * D_V) @ K.T
        r_u = U.shape[1]
        M[:r_u, :r_u] += np.diag(D_U)
    M = 0.5 * (M + M.T)

    lam, S = sla.eigh(M)
    top = np.abs(lam).max() if lam.size else 0.0
    keep = np.abs(lam) > max(tol, ROUNDOFF_FLOOR) * top
    lam, S = lam[keep], S[:, keep]
    order = np.argsort(lam)[::-1]
    lam, S = lam[order], S[:, order]
    return LowRankSym(basis @ S, lam, Bbasis @ S)
