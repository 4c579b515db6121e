"""Fast extended Kalman filter for a measurement operator that changes every step.

The low-rank basis is rebuilt each step by merging the previous basis with
the new generalized eigenvectors in the ``Gamma^{-1}`` metric.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..lowrank import add_low_rank, randomized_ghep
from .boxcox import BoxCox
from .fast import LowRankState
from .noise import add_noise, information_operator, innovation_solve

# absolute floor below which merged information values are discarded
DHAT_ABS_FLOOR = 1e-14
# relative floor, measured against the largest merged value
DHAT_REL_FLOOR = 1e-14
RELIN_TOL = 1e-6
MAX_RELINEARIZATIONS = 5


def ekf_linearize(H, mean, transform: BoxCox):
    """Jacobian ``H diag(ds/dx)`` and predicted data ``H s(x)`` at ``x = mean``."""
    ds = transform.derivative(mean)
    if sp.issparse(H):
        # column scaling in place keeps the sparsity pattern and index order
        Hk = sp.csr_matrix(H, copy=True)
        Hk.data *= ds[Hk.indices]
    else:
        Hk = np.asarray(H) * ds
    return Hk, H @ transform.inverse(mean)


def _gain_update(state: LowRankState, alpha: float, cov, Hk, resid, noise) -> np.ndarray:
    """``Sigma_pred Hk^T S^{-1} resid`` for ``Sigma_pred = alpha Gamma - W D W^T``."""
    Ht = Hk.T.toarray() if sp.issparse(Hk) else np.asarray(Hk).T
    GHt = cov.apply(Ht)
    HW = np.asarray(Hk @ state.W)
    S = add_noise(alpha * np.asarray(Hk @ GHt) - (HW * state.D) @ HW.T, noise)
    z = innovation_solve(S, resid)
    return alpha * (GHt @ z) - state.W @ (state.D * (HW.T @ z))


def fekf_step(
    state: LowRankState,
    cov,
    H_source,
    y,
    noise,
    transform: BoxCox,
    k_rank: int,
    trunc_tol: float = 1e-5,
    seed=0,
    p_oversample: int = 20,
    passes: str = "two-pass",
    relinearizations: int = 1,
) -> LowRankState:
    """Predict and assimilate ``y = H_source s(x) + noise`` in the transformed variable ``x``.

    ``relinearizations > 1`` runs iterated-EKF passes on the mean, each one
    relinearizing at the latest estimate, stopping early once the relative
    mean change drops below 1e-6. The covariance update uses the Jacobian
    of the last pass.
    """
    if not 1 <= relinearizations <= MAX_RELINEARIZATIONS:
        raise ValueError(f"relinearizations must lie in [1, {MAX_RELINEARIZATIONS}], got {relinearizations}")
    alpha = state.alpha + 1.0
    y = np.asarray(y, dtype=float)
    prior = state.mean

    mean = prior
    for it in range(relinearizations):
        Hk, pred = ekf_linearize(H_source, mean, transform)
        resid = y - pred - Hk @ (prior - mean)
        new_mean = prior + _gain_update(state, alpha, cov, Hk, resid, noise)
        change = np.linalg.norm(new_mean - mean) / max(np.linalg.norm(new_mean), np.finfo(float).tiny)
        mean = new_mean
        if it + 1 < relinearizations and change < RELIN_TOL:
            break

    # prior precision: Gamma^{-1}/alpha + Gamma^{-1} W Dbar W^T Gamma^{-1}
    d = state.D
    Dbar = d / (alpha * (alpha - d))
    k = min(k_rank, cov.n - 1)
    p = min(p_oversample, cov.n - k)
    gep = randomized_ghep(information_operator(Hk, noise), cov, k, p, seed=seed, passes=passes)

    merged = add_low_rank(state.W, Dbar, gep.U, gep.lam, tol=trunc_tol, BU=state.GW, BV=gep.BU)
    dhat = merged.D
    top = np.abs(dhat).max() if dhat.size else 0.0
    # the merged precision term is PSD; anything at or below the floors is round-off
    keep = dhat > max(DHAT_ABS_FLOOR, DHAT_REL_FLOOR * top)
    dhat = dhat[keep]
    D = alpha * alpha * dhat / (1.0 + alpha * dhat)
    return LowRankState(alpha, D, merged.W[:, keep], merged.BW[:, keep], mean, state.step + 1)
