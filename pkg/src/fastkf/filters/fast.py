"""Kalman filter for a random-walk model with a constant measurement operator.

The covariance is carried as ``Sigma_k = alpha_k Gamma - U diag(D_k) U^T``
where ``U`` holds the dominant generalized eigenvectors of
``H^T Gamma_noise^{-1} H`` against ``Gamma^{-1}``. A step costs a handful of
``O(n_s)`` vector operations plus an ``n_m x n_m`` factorization.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from ..lowrank import GepResult, randomized_ghep
from .noise import add_noise, information_operator, innovation_solve


@dataclass
class LowRankState:
    """``Sigma = alpha Gamma - W diag(D) W^T`` with ``W^T Gamma^{-1} W = I``.

    ``GW`` caches ``Gamma^{-1} W`` so that metric products never need a solve.
    """

    alpha: float
    D: np.ndarray
    W: np.ndarray
    GW: np.ndarray
    mean: np.ndarray
    step: int = 0

    @classmethod
    def zero(cls, n: int) -> "LowRankState":
        """``Sigma_0 = 0``: ``alpha = 0`` and an empty basis."""
        empty = np.zeros((n, 0))
        return cls(0.0, np.zeros(0), empty, empty.copy(), np.zeros(n), 0)

    @property
    def rank(self) -> int:
        return self.D.size

    @property
    def n(self) -> int:
        return self.mean.size

    def dense(self, Gamma: np.ndarray) -> np.ndarray:
        return self.alpha * Gamma - (self.W * self.D) @ self.W.T

    def copy(self) -> "LowRankState":
        return replace(self, D=self.D.copy(), W=self.W.copy(), GW=self.GW.copy(), mean=self.mean.copy())


def fkf_init(
    cov,
    H,
    noise,
    k_rank: int,
    seed=0,
    p_oversample: int = 20,
    passes: str = "two-pass",
) -> tuple[GepResult, np.ndarray]:
    """Offline stage: generalized eigenpairs of ``H^T Gamma_noise^{-1} H`` and ``Gamma H^T``."""
    p = min(p_oversample, cov.n - k_rank)
    gep = randomized_ghep(information_operator(H, noise), cov, k_rank, p, seed=seed, passes=passes)
    Ht = H.T.toarray() if sp.issparse(H) else np.asarray(H, dtype=float).T
    GHt = cov.apply(Ht)
    return gep, GHt


def update_diagonal(d: np.ndarray, lam: np.ndarray, alpha: float) -> np.ndarray:
    """Per-mode posterior ``d'`` from ``alpha - d' = 1 / (1 / (alpha - d) + lam)``."""
    gap = alpha - d
    return (d + alpha * lam * gap) / (1.0 + lam * gap)


def fkf_step(state: LowRankState, gep: GepResult, GHt: np.ndarray, H, y, noise) -> LowRankState:
    """Predict (``alpha += 1``) and assimilate one observation batch ``y``."""
    U, lam = gep.U, gep.lam
    if state.rank == 0:
        d = np.zeros(lam.size)
    elif state.W.shape == U.shape:
        d = state.D
    else:
        raise ValueError("state basis does not match the eigenbasis of the constant measurement operator")
    alpha = state.alpha + 1.0

    HU = np.asarray(H @ U)
    HGHt = np.asarray(H @ GHt)
    S = add_noise(alpha * HGHt - (HU * d) @ HU.T, noise)
    z = innovation_solve(S, np.asarray(y, dtype=float) - H @ state.mean)
    # gain applied as (alpha Gamma H^T - U D (HU)^T) z without forming it
    mean = state.mean + alpha * (GHt @ z) - U @ (d * (HU.T @ z))
    D = update_diagonal(d, lam, alpha)
    return LowRankState(alpha, D, U, gep.BU, mean, state.step + 1)
