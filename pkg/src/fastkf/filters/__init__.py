"""Kalman filter variants sharing the random-walk forecast model."""

from .boxcox import BoxCox, boxcox
from .dense import DenseFilterState, dense_kf_step
from .ensemble import Ensemble, enkf_step
from .extended import ekf_linearize, fekf_step
from .fast import LowRankState, fkf_init, fkf_step, update_diagonal

__all__ = [
    "BoxCox",
    "boxcox",
    "DenseFilterState",
    "dense_kf_step",
    "Ensemble",
    "enkf_step",
    "ekf_linearize",
    "fekf_step",
    "LowRankState",
    "fkf_init",
    "fkf_step",
    "update_diagonal",
]
