import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gamma as gamma_fn
from scipy.special import kv

from fastkf.covariance import Grid, KernelSpec, build_operator, kernel_eval
from fastkf.errors import ConvergenceError, UnsupportedModeError


def test_kernel_at_zero_is_theta():
    assert kernel_eval(KernelSpec(theta=1e-4, length=1.0, power=0.5), 0.0) == pytest.approx(1e-4, rel=1e-15)


def test_powered_exponential_closed_form():
    # independent scalar evaluation of theta * exp(-(r/l)^p)
    expected = 1.0 * math.exp(-((2.0 / 2.0) ** 1.0))
    assert expected == pytest.approx(0.36787944117144233, rel=1e-15)
    got = kernel_eval(KernelSpec(theta=1.0, length=2.0, power=1.0), 2.0)
    assert got == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("length", [0.1, 0.3, 1.0])
def test_matern_half_is_exponential(length):
    r = np.linspace(0, 2, 41)
    m = kernel_eval(KernelSpec(family="matern", theta=2.0, length=length, nu=0.5), r)
    e = kernel_eval(KernelSpec(theta=2.0, length=length, power=1.0), r)
    np.testing.assert_allclose(m, e, rtol=1e-12)


def test_matern_general_nu_matches_bessel_formula():
    spec = KernelSpec(family="matern", theta=1.5, length=0.4, nu=1.5)
    r = np.array([0.05, 0.2, 0.7])
    a = math.sqrt(2 * 1.5) * (1 / 0.4) * r
    ref = 1.5 * 2 ** (1 - 1.5) / gamma_fn(1.5) * a**1.5 * kv(1.5, a)
    # nu = 3/2 also has the closed form theta (1 + a) exp(-a)
    np.testing.assert_allclose(ref, 1.5 * (1 + a) * np.exp(-a), rtol=1e-12)
    np.testing.assert_allclose(kernel_eval(spec, r), ref, rtol=1e-12)


@given(st.sampled_from(["powered-exponential", "matern"]), st.floats(0.2, 2.0), st.floats(0.3, 2.5))
@settings(max_examples=30, deadline=None)
def test_kernel_monotone_nonincreasing(family, power, nu):
    spec = KernelSpec(family=family, theta=1.0, length=0.3, power=power, nu=nu)
    vals = kernel_eval(spec, np.linspace(0, 3, 200))
    assert np.all(np.diff(vals) <= 1e-15)


@pytest.mark.parametrize(
    "kwargs", [dict(theta=0.0), dict(length=-1.0), dict(power=0.0), dict(power=2.5), dict(nu=0.0), dict(family="gauss")]
)
def test_invalid_spec_rejected(kwargs):
    with pytest.raises(ValueError):
        KernelSpec(**kwargs)


def test_one_cell_grid():
    op = build_operator(Grid(1, 1), KernelSpec(theta=3e-4))
    np.testing.assert_allclose(op.to_dense(), [[3e-4]])
    np.testing.assert_allclose(op.apply(np.array([2.0])), [6e-4])


@pytest.mark.parametrize("shape", [(20, 20), (13, 7), (64, 64)])
def test_fft_matches_dense(shape, rng):
    g = Grid(*shape)
    spec = KernelSpec()
    fft = build_operator(g, spec)
    G = fft.to_dense()
    x = rng.standard_normal((g.n, 3))
    assert np.linalg.norm(fft.apply(x) - G @ x) <= 1e-12 * np.linalg.norm(G @ x)


def test_unit_vector_gives_column(problem20):
    g, cov, _ = problem20
    i = 57
    e = np.zeros(g.n)
    e[i] = 1.0
    pts = g.centers()
    expected = kernel_eval(cov.spec, np.hypot(*(pts - pts[i]).T))
    np.testing.assert_allclose(cov.apply(e), expected, rtol=1e-10, atol=1e-18)


def test_symmetry(problem20, rng):
    g, cov, _ = problem20
    x, y = rng.standard_normal((2, g.n))
    # power iteration for the operator norm
    v = rng.standard_normal(g.n)
    for _ in range(50):
        v = cov.apply(v)
        nrm = np.linalg.norm(v)
        v /= nrm
    lhs = abs(cov.apply(x) @ y - x @ cov.apply(y))
    assert lhs <= 1e-12 * np.linalg.norm(x) * np.linalg.norm(y) * nrm


def test_dimension_mismatch(problem20):
    with pytest.raises(ValueError):
        problem20[1].apply(np.ones(7))


def test_dense_positive_definite():
    for spec in (KernelSpec(), KernelSpec(theta=1e-5, power=1.0), KernelSpec(family="matern", nu=1.5)):
        w = np.linalg.eigvalsh(build_operator(Grid(12, 9), spec).to_dense())
        assert w[0] > 0


def test_default_grid_builds():
    op = build_operator(Grid(59, 55), KernelSpec(theta=1e-4, power=0.5))
    assert op.spectrum.min() >= -1e-10 * op.spectrum.max()
    diag, tr = op.diag_trace()
    assert tr == pytest.approx(3245 * 1e-4, rel=1e-14)
    np.testing.assert_allclose(diag, 1e-4)


def test_diag_matches_dense(problem20):
    _, cov, _ = problem20
    diag, tr = cov.diag_trace()
    G = cov.to_dense()
    np.testing.assert_allclose(diag, np.diag(G), rtol=1e-14)
    assert tr == pytest.approx(np.trace(G), rel=1e-13)


def test_solve_roundtrip_and_dense_oracle(problem20, rng):
    _, cov, _ = problem20
    z = rng.standard_normal(cov.n)
    x = cov.apply(z)
    y, iters = cov.solve(x, tol=1e-10, return_info=True)
    assert np.linalg.norm(cov.apply(y) - x) <= 1e-10 * np.linalg.norm(x)
    assert iters <= 10 * np.sqrt(cov.n)
    b = rng.standard_normal(cov.n)
    ref = sla.cho_solve(sla.cho_factor(cov.to_dense()), b)
    assert np.linalg.norm(cov.solve(b, tol=1e-10) - ref) <= 1e-8 * np.linalg.norm(ref)


def test_solve_zero_rhs(problem20):
    y, iters = problem20[1].solve(np.zeros(400), return_info=True)
    assert iters == 0 and not y.any()


def test_solve_nonconvergence_reports_residual(problem20, rng):
    with pytest.raises(ConvergenceError) as info:
        problem20[1].solve(rng.standard_normal(400), tol=1e-12, maxiter=2)
    assert info.value.residual > 1e-12 and info.value.iterations <= 2


def test_root_apply_identities(problem10, rng):
    _, cov, _ = problem10
    x = rng.standard_normal(cov.n)
    half = cov.root_apply(x, 0.5)
    np.testing.assert_allclose(cov.root_apply(half, -0.5), x, atol=1e-10 * np.linalg.norm(x))
    np.testing.assert_allclose(cov.root_apply(half, 0.5), cov.apply(x), atol=1e-10 * np.linalg.norm(cov.apply(x)))


def test_root_matches_reference_sqrtm(problem10):
    _, cov, _ = problem10
    G = cov.to_dense()
    R = cov.root_apply(np.eye(cov.n), 0.5)
    ref = sla.sqrtm(G).real
    assert np.linalg.norm(R - ref) <= 1e-10 * max(np.linalg.norm(ref), 1.0)


def test_root_unsupported_in_fft_mode(problem20):
    with pytest.raises(UnsupportedModeError):
        problem20[1].root_apply(np.ones(400))


def test_fft_sampling_covariance():
    g = Grid(6, 5)
    op = build_operator(g, KernelSpec(theta=1.0, length=0.3, power=1.0))
    draws = op.sample(np.random.default_rng(3), 40000)
    emp = draws @ draws.T / draws.shape[1]
    G = op.to_dense()
    assert np.abs(emp - G).max() < 0.05
