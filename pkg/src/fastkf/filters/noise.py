"""Measurement-noise covariance given as a scalar variance, a diagonal, or a matrix."""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from ..errors import InnovationError


def noise_matrix(noise, m: int) -> np.ndarray:
    arr = np.asarray(noise, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(m)
    if arr.ndim == 1:
        if arr.size != m:
            raise ValueError(f"noise diagonal has length {arr.size}, expected {m}")
        return np.diag(arr)
    if arr.shape != (m, m):
        raise ValueError(f"noise covariance has shape {arr.shape}, expected ({m}, {m})")
    return arr


def add_noise(S: np.ndarray, noise) -> np.ndarray:
    """``S + Gamma_noise`` without forming a diagonal noise matrix."""
    arr = np.asarray(noise, dtype=float)
    if arr.ndim == 2:
        return S + arr
    out = S.copy()
    out[np.diag_indices_from(out)] += arr
    return out


def noise_solve(noise, X: np.ndarray) -> np.ndarray:
    """``Gamma_noise^{-1} X``."""
    arr = np.asarray(noise, dtype=float)
    if arr.ndim == 0:
        return X / float(arr)
    if arr.ndim == 1:
        return X / (arr[:, None] if X.ndim == 2 else arr)
    return sla.cho_solve(sla.cho_factor(arr), X)


def noise_sample(noise, rng: np.random.Generator, m: int, size: int) -> np.ndarray:
    """``(m, size)`` draws from ``N(0, Gamma_noise)``."""
    z = rng.standard_normal((m, size))
    arr = np.asarray(noise, dtype=float)
    if arr.ndim == 0:
        return np.sqrt(float(arr)) * z
    if arr.ndim == 1:
        return np.sqrt(arr)[:, None] * z
    w, V = np.linalg.eigh(arr)
    return V @ (np.sqrt(np.clip(w, 0.0, None))[:, None] * (V.T @ z))


def information_operator(H, noise):
    """Callable applying ``H^T Gamma_noise^{-1} H`` to a block of vectors."""

    def apply(X):
        return H.T @ noise_solve(noise, H @ X)

    return apply


def innovation_solve(S: np.ndarray, R: np.ndarray) -> np.ndarray:
    """``S^{-1} R`` for a symmetric positive definite innovation covariance ``S``."""
    try:
        factor = sla.cho_factor(0.5 * (S + S.T))
    except np.linalg.LinAlgError as exc:
        raise InnovationError(f"innovation covariance is not positive definite: {exc}") from None
    return sla.cho_solve(factor, R)


def innovation_cholesky(S: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite innovation covariance."""
    try:
        return sla.cholesky(0.5 * (S + S.T), lower=True)
    except np.linalg.LinAlgError as exc:
        raise InnovationError(f"innovation covariance is not positive definite: {exc}") from None
