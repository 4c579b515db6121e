"""Uncertainty measures and posterior sampling for ``Sigma = alpha Gamma - W diag(D) W^T``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import DomainError
from .filters.fast import LowRankState


def variance(state: LowRankState, cov) -> np.ndarray:
    """Pointwise posterior variance, ``alpha diag(Gamma) - sum_j D_j W_j^2``."""
    diag, _ = cov.diag_trace()
    return state.alpha * diag - (state.W**2) @ state.D


def trace_criterion(state: LowRankState, cov) -> float:
    """Total posterior variance ``trace(Sigma)``.

    ``W`` is orthonormal in the ``Gamma^{-1}`` metric, not the Euclidean
    one, so the column norms enter explicitly.
    """
    _, tr = cov.diag_trace()
    return float(state.alpha * tr - np.sum(state.D * np.einsum("ij,ij->j", state.W, state.W)))


def relative_entropy(state: LowRankState, form: str = "exact") -> float:
    """``(log det Sigma - log det Gamma) / 2``.

    ``form="exact"`` includes the ``(n_s - r) log alpha`` contribution of the
    directions outside ``W``; ``form="reduced"`` returns only
    ``sum_i log(alpha - D_i) / 2``, which coincides with the exact value
    when ``alpha = 1``.
    """
    if form not in ("exact", "reduced"):
        raise ValueError(f"form must be 'exact' or 'reduced', got {form!r}")
    alpha = state.alpha
    if not alpha > 0:
        raise DomainError(f"relative entropy needs alpha > 0, got {alpha}", 0)
    gap = alpha - state.D
    bad = gap <= 0
    if bad.any():
        raise DomainError("relative entropy needs D_i < alpha", int(np.flatnonzero(bad)[0]))
    reduced = 0.5 * float(np.sum(np.log(gap)))
    if form == "reduced":
        return reduced
    return reduced + 0.5 * (state.n - state.rank) * float(np.log(alpha))


def _sigma_minus(state: LowRankState) -> np.ndarray:
    if state.rank == 0:
        return np.zeros(0)
    if not state.alpha > 0:
        raise DomainError("a nonzero low-rank term needs alpha > 0", 0)
    ratio = state.D / state.alpha
    bad = (ratio < 0) | (ratio > 1)
    if bad.any():
        raise DomainError("square root needs 0 <= D_i <= alpha", int(np.flatnonzero(bad)[0]))
    # 1 - sqrt(1 - x) written to avoid cancellation for small x
    return ratio / (1.0 + np.sqrt(1.0 - ratio))


@dataclass
class SquareRootFactor:
    """``L = sqrt(alpha) (Gamma^{1/2} - W diag(sigma) W^T Gamma^{-1/2})`` with ``L L^T = Sigma``.

    ``sigma_i = 1 - sqrt(1 - D_i / alpha)`` lies in ``[0, 1]``. Needs a
    covariance operator that supports root applications.
    """

    state: LowRankState
    cov: object
    sigma: np.ndarray

    @classmethod
    def from_state(cls, state: LowRankState, cov) -> "SquareRootFactor":
        return cls(state, cov, _sigma_minus(state))

    def apply_roots(self, z_plus: np.ndarray, z_minus: np.ndarray) -> np.ndarray:
        """``L s`` given ``z_plus = Gamma^{1/2} s`` and ``z_minus = Gamma^{-1/2} s``."""
        W = self.state.W
        proj = W.T @ z_minus
        proj = self.sigma[:, None] * proj if proj.ndim == 2 else self.sigma * proj
        return np.sqrt(self.state.alpha) * (z_plus - W @ proj)

    def apply(self, s_u: np.ndarray) -> np.ndarray:
        return self.apply_roots(self.cov.root_apply(s_u, 0.5), self.cov.root_apply(s_u, -0.5))

    def dense(self) -> np.ndarray:
        return self.apply(np.eye(self.state.n))


def conditional_sample(state: LowRankState, cov, s_u: np.ndarray) -> np.ndarray:
    """Posterior realization ``mean + L s_u`` for standard normal ``s_u`` (vector or block)."""
    s_u = np.asarray(s_u, dtype=float)
    out = SquareRootFactor.from_state(state, cov).apply(s_u)
    return out + (state.mean[:, None] if out.ndim == 2 else state.mean)


def propagate_realization(s_u: np.ndarray, states: Iterable[LowRankState], cov) -> list[np.ndarray]:
    """Realizations for a sequence of states driven by one shared ``s_u``.

    The two root applications happen once; each state then costs
    ``O(r n_s)``.
    """
    s_u = np.asarray(s_u, dtype=float)
    z_plus = cov.root_apply(s_u, 0.5)
    z_minus = cov.root_apply(s_u, -0.5)
    out = []
    for st in states:
        draw = SquareRootFactor.from_state(st, cov).apply_roots(z_plus, z_minus)
        out.append(draw + (st.mean[:, None] if draw.ndim == 2 else st.mean))
    return out
