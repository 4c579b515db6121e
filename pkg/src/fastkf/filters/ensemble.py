"""Perturbed-observation ensemble Kalman filter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rng import as_rng
from .noise import add_noise, noise_sample


@dataclass
class Ensemble:
    members: np.ndarray  # (n_s, N)

    def __post_init__(self):
        if self.members.ndim != 2 or self.members.shape[1] < 2:
            raise ValueError(f"an ensemble needs at least 2 members, got shape {self.members.shape}")

    @classmethod
    def zero(cls, n: int, size: int) -> "Ensemble":
        return cls(np.zeros((n, size)))

    @property
    def N(self) -> int:
        return self.members.shape[1]

    def mean(self) -> np.ndarray:
        return self.members.mean(axis=1)

    def covariance(self) -> np.ndarray:
        return np.cov(self.members)


def enkf_step(ens: Ensemble, H, y, cov, noise, seed, inflation: float = 1.0) -> Ensemble:
    """Forecast every member with an independent ``N(0, Gamma)`` increment, then assimilate.

    Each member sees its own perturbed observation ``y + v_i``. ``inflation``
    scales forecast anomalies (1 means none).
    """
    rng = as_rng(seed)
    N = ens.N
    X = ens.members + cov.sample(rng, N)
    if inflation != 1.0:
        xm = X.mean(axis=1, keepdims=True)
        X = xm + inflation * (X - xm)
    Y = np.asarray(H @ X)
    m = Y.shape[0]
    y_pert = np.asarray(y, dtype=float)[:, None] + noise_sample(noise, rng, m, N)

    A = X - X.mean(axis=1, keepdims=True)
    HA = Y - Y.mean(axis=1, keepdims=True)
    S = add_noise(HA @ HA.T / (N - 1), noise)
    innov = y_pert - Y
    try:
        coef = np.linalg.solve(S, innov)
    except np.linalg.LinAlgError:
        coef = np.linalg.lstsq(S, innov, rcond=None)[0]
    X = X + A @ (HA.T @ coef) / (N - 1)
    return Ensemble(X)
