"""Textbook Kalman filter with an explicit covariance matrix (random-walk forecast)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .boxcox import BoxCox
from .extended import ekf_linearize
from .noise import add_noise, innovation_cholesky


@dataclass
class DenseFilterState:
    mean: np.ndarray
    cov: np.ndarray
    step: int = 0

    @classmethod
    def zero(cls, n: int) -> "DenseFilterState":
        """``s_0 = 0`` and ``Sigma_0 = 0``."""
        return cls(np.zeros(n), np.zeros((n, n)), 0)


def dense_system_matrix(cov) -> np.ndarray:
    """Accept either a dense array or a covariance operator."""
    if isinstance(cov, np.ndarray):
        return cov
    return cov.to_dense()


def dense_kf_step(
    state: DenseFilterState,
    H,
    y,
    cov,
    noise,
    transform: BoxCox | None = None,
) -> DenseFilterState:
    """One predict/update cycle with ``F = I``.

    ``cov`` is the system-noise covariance (array or operator). With a
    ``transform`` the measurement is ``y = H s(x)`` in the transformed
    variable ``x`` and the step becomes an extended Kalman filter
    linearized at the predicted mean.
    """
    Gamma = dense_system_matrix(cov)
    P = state.cov + Gamma
    mean = state.mean
    if transform is None:
        Hk = H
        pred = H @ mean
    else:
        Hk, pred = ekf_linearize(H, mean, transform)
    HP = np.asarray(Hk @ P)  # (n_m, n_s); equals (P Hk^T)^T
    L = innovation_cholesky(add_noise(np.asarray(Hk @ HP.T), noise))
    # with S = L L^T: K = (L^{-1} H P)^T L^{-1}, and K H P = M^T M
    M = sla.solve_triangular(L, HP, lower=True)
    r = sla.solve_triangular(L, np.asarray(y, dtype=float) - pred, lower=True)
    new_mean = mean + M.T @ r
    new_cov = P - M.T @ M
    new_cov = 0.5 * (new_cov + new_cov.T)
    return DenseFilterState(new_mean, new_cov, state.step + 1)
