import numpy as np
import pytest

from fastkf.covariance import Grid, KernelSpec, build_operator
from fastkf.tomography import build_H, crosswell_layout

SIGMA2 = 2e-4


def small_problem(n=20, layout=(4, 6), mode="fft", **kernel):
    g = Grid(n, n)
    cov = build_operator(g, KernelSpec(**kernel), mode)
    H = build_H(g, crosswell_layout(g, *layout))
    return g, cov, H


@pytest.fixture(scope="session")
def problem20():
    return small_problem(20)


@pytest.fixture(scope="session")
def problem10():
    return small_problem(10, (3, 4), mode="dense")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)
