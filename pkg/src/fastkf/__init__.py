"""Low-rank Kalman filtering for random-walk state models on regular 2-D grids."""

from .covariance import CovarianceOperator, Grid, KernelSpec, build_operator, kernel_eval
from .filters import (
    BoxCox,
    DenseFilterState,
    Ensemble,
    LowRankState,
    dense_kf_step,
    ekf_linearize,
    enkf_step,
    fekf_step,
    fkf_init,
    fkf_step,
)
from .lowrank import GepResult, LowRankSym, add_low_rank, b_orthonormalize, ghep_residual, randomized_ghep
from .tomography import PlumeModel, SourceReceiverLayout, build_H, crosswell_layout, simulate_observations, synth_plume, trace_ray
from .uq import SquareRootFactor, conditional_sample, propagate_realization, relative_entropy, trace_criterion, variance

__version__ = "0.1.0"
