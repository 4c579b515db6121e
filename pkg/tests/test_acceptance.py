"""Acceptance checks. Each test prints one PASS/FAIL line before asserting."""

import time

import numpy as np
import pytest
import scipy.linalg as sla

from fastkf.commands import Experiment, FilterRun, bench_kind, cmd_generate, cmd_run
from fastkf.config import ExperimentConfig
from fastkf.covariance import Grid, KernelSpec, build_operator
from fastkf.filters import (
    BoxCox,
    DenseFilterState,
    LowRankState,
    dense_kf_step,
    fekf_step,
    fkf_init,
    fkf_step,
)
from fastkf.filters.noise import information_operator
from fastkf.lowrank import add_low_rank, randomized_ghep
from fastkf.tomography import (
    PlumeModel,
    build_H,
    crosswell_layout,
    simulate_observations,
    synth_plume,
    trace_ray,
)
from fastkf.uq import SquareRootFactor, conditional_sample, relative_entropy, trace_criterion, variance

from conftest import SIGMA2, rel, small_problem

LADDER = [(59, 55), (117, 109), (234, 219)]


@pytest.fixture
def report(capsys):
    def emit(number: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        assert ok, detail

    return emit


def plume_obs(g, H, n_steps, baseline=0.0, seed=0):
    m = PlumeModel()
    return [simulate_observations(H, baseline + synth_plume(m, g, 3.0 * (k + 1)), SIGMA2, seed + k) for k in range(n_steps)]


def test_criterion_01_fkf_matches_dense_kf(report):
    t0 = time.perf_counter()
    g, cov, H = small_problem(20)
    G = cov.to_dense()
    gep, GHt = fkf_init(cov, H, SIGMA2, 24, seed=0)
    fs, ds = LowRankState.zero(g.n), DenseFilterState.zero(g.n)
    mean_err, cov_err = [], []
    for y in plume_obs(g, H, 20):
        fs = fkf_step(fs, gep, GHt, H, y, SIGMA2)
        ds = dense_kf_step(ds, H, y, G, SIGMA2)
        mean_err.append(rel(fs.mean, ds.mean))
        cov_err.append(rel(fs.dense(G), ds.cov))
    elapsed = time.perf_counter() - t0
    ok = max(mean_err) <= 1e-8 and max(cov_err) <= 1e-8 and elapsed <= 30
    report(1, ok, f"max mean err {max(mean_err):.2e}, max cov err {max(cov_err):.2e} (<= 1e-8), {elapsed:.1f}s (<= 30s)")


def test_criterion_02_fast_ekf_consistency(report):
    g, cov, H = small_problem(15)
    G = cov.to_dense()
    gep, GHt = fkf_init(cov, H, SIGMA2, 24, seed=0)
    base = H @ np.ones(g.n)
    fs, es = LowRankState.zero(g.n), LowRankState.zero(g.n)
    linear_err = 0.0
    for k, y in enumerate(plume_obs(g, H, 10)):
        fs = fkf_step(fs, gep, GHt, H, y, SIGMA2)
        es = fekf_step(es, cov, H, y + base, SIGMA2, BoxCox(1.0), 24, trunc_tol=0.0, seed=k)
        linear_err = max(linear_err, rel(es.mean, fs.mean), rel(es.dense(G), fs.dense(G)), abs(es.alpha - fs.alpha))

    nonlinear_err = {}
    for alpha in (2.0, 4.0, 6.0):
        bc = BoxCox(alpha)
        es, ds = LowRankState.zero(g.n), DenseFilterState.zero(g.n)
        worst = 0.0
        for k, y in enumerate(plume_obs(g, H, 10, baseline=1.0)):
            es = fekf_step(es, cov, H, y, SIGMA2, bc, 24, trunc_tol=0.0, seed=k)
            ds = dense_kf_step(ds, H, y, G, SIGMA2, transform=bc)
            worst = max(worst, rel(es.mean, ds.mean), rel(es.dense(G), ds.cov))
        nonlinear_err[alpha] = worst
    ok = linear_err <= 1e-8 and max(nonlinear_err.values()) <= 1e-6
    detail = ", ".join(f"a={a:g}: {e:.2e}" for a, e in nonlinear_err.items())
    report(2, ok, f"linear case {linear_err:.2e} (<= 1e-8); dense EKF {detail} (<= 1e-6)")


def test_criterion_03_randomized_ghep(report):
    g, cov, H = small_problem(20)
    G = cov.to_dense()
    A_apply = information_operator(H, SIGMA2)
    res = randomized_ghep(A_apply, cov, 24, 20, seed=0)
    Hd = H.toarray()
    A = Hd.T @ Hd / SIGMA2
    ref = sla.eigh(A, np.linalg.inv(G), eigvals_only=True)[::-1][:24]
    eig_err = np.max(np.abs(res.lam - ref) / ref)
    ortho = np.abs(res.U.T @ np.linalg.solve(G, res.U) - np.eye(res.k)).max()

    # gap bound on synthetic spectra with known eigenvalues
    g10 = Grid(10, 10)
    cov10 = build_operator(g10, KernelSpec(theta=1.0, length=0.3, power=1.0), mode="dense")
    Gh = cov10.root_apply(np.eye(g10.n), 0.5)
    Gmh = np.linalg.inv(Gh)
    rng = np.random.default_rng(5)
    Wh, _ = np.linalg.qr(rng.standard_normal((g10.n, g10.n)))
    worst_slack = -np.inf
    spectra = [0.6 ** np.arange(g10.n), np.concatenate([[10.0, 9.99, 9.98, 5.0, 4.999], 0.5 ** np.arange(5, g10.n)])]
    for lam in spectra:
        Ahat = (Wh * lam) @ Wh.T
        Asyn = Gmh @ Ahat @ Gmh
        for seed in range(5):
            r = randomized_ghep(lambda x: Asyn @ x, cov10, 5, 3, seed=seed)
            Qhat = Gmh @ r.Q
            eps = np.linalg.norm(Ahat - Qhat @ (Qhat.T @ Ahat), 2)
            for i, lt in enumerate(r.lam):
                delta = np.min(np.abs(lt - np.delete(lam, i)))
                bound = min(2 * eps, 4 * eps**2 / delta) if delta > 0 else 2 * eps
                worst_slack = max(worst_slack, abs(lam[i] - lt) - bound - 1e-12 * lam[0])
    ok = eig_err <= 1e-8 and ortho <= 1e-10 and worst_slack <= 0
    report(3, ok, f"eig rel err {eig_err:.2e} (<= 1e-8), B-orth defect {ortho:.2e} (<= 1e-10), gap bound holds: {worst_slack <= 0}")


def test_criterion_04_add_low_rank(report):
    rng = np.random.default_rng(0)
    n = 30
    X = rng.standard_normal((n, n))
    B = X @ X.T / n + np.eye(n)
    L = np.linalg.cholesky(B)

    def b_orth(m):
        # Q = L^{-T} times Euclidean-orthonormal columns gives Q^T B Q = I
        q, _ = np.linalg.qr(rng.standard_normal((n, m)))
        return sla.solve_triangular(L.T, q)

    U, V = b_orth(3), b_orth(4)
    DU, DV = rng.uniform(0.5, 2.0, 3), rng.uniform(0.5, 2.0, 4) * rng.choice([-1, 1], 4)
    target = (U * DU) @ U.T + (V * DV) @ V.T
    exact = add_low_rank(U, DU, V, DV, lambda x: B @ x)
    err0 = np.linalg.norm(exact.dense() - target)
    ortho = np.abs(exact.W.T @ B @ exact.W - np.eye(exact.rank)).max()

    DV_small = DV.copy()
    DV_small[-1] = 1e-7
    target_small = (U * DU) @ U.T + (V * DV_small) @ V.T
    trunc = add_low_rank(U, DU, V, DV_small, lambda x: B @ x, tol=1e-5)
    err1 = rel(trunc.dense(), target_small)
    ok = err0 <= 1e-10 and err1 <= 1e-4 and ortho <= 1e-10
    report(4, ok, f"tol=0 error {err0:.2e} (<= 1e-10), rank {exact.rank}; tol=1e-5 rel error {err1:.2e} (<= 1e-4), rank {trunc.rank}")


@pytest.fixture(scope="module")
def uq_sequence():
    g, cov, H = small_problem(10, (3, 4), mode="dense")
    G = cov.to_dense()
    gep, GHt = fkf_init(cov, H, SIGMA2, 12, seed=0)
    fs, ds = LowRankState.zero(g.n), DenseFilterState.zero(g.n)
    seq = []
    for y in plume_obs(g, H, 8):
        fs = fkf_step(fs, gep, GHt, H, y, SIGMA2)
        ds = dense_kf_step(ds, H, y, G, SIGMA2)
        seq.append((fs, ds))
    return g, cov, G, seq


def test_criterion_05_uq_equivalence(report, uq_sequence):
    g, cov, G, seq = uq_sequence
    logdet_G = np.linalg.slogdet(G)[1]
    worst, worst_root = 0.0, 0.0
    for step in (1, 4, 8):
        fs, ds = seq[step - 1]
        S = ds.cov
        worst = max(
            worst,
            rel(variance(fs, cov), np.diag(S)),
            abs(trace_criterion(fs, cov) - np.trace(S)) / np.trace(S),
            abs(relative_entropy(fs) - 0.5 * (np.linalg.slogdet(S)[1] - logdet_G)),
        )
        Lr = SquareRootFactor.from_state(fs, cov).dense()
        worst_root = max(worst_root, rel(Lr @ Lr.T, S))
    ok = worst <= 1e-8 and worst_root <= 1e-10
    report(5, ok, f"variance/trace/entropy worst {worst:.2e} (<= 1e-8), ||LL^T - S||/||S|| {worst_root:.2e} (<= 1e-10)")


def test_criterion_06_sampling_statistics(report, uq_sequence):
    g, cov, G, seq = uq_sequence
    fs = seq[4][0]
    n = 20_000
    draws = conditional_sample(fs, cov, np.random.default_rng(7).standard_normal((g.n, n)))
    se = draws.std(axis=1, ddof=1) / np.sqrt(n)
    z = np.abs(draws.mean(axis=1) - fs.mean) / se
    tr = trace_criterion(fs, cov)
    tr_err = abs(np.sum(draws.var(axis=1, ddof=1)) - tr) / tr
    ok = z.max() <= 4 and tr_err <= 0.05
    report(6, ok, f"max |mean err|/SE {z.max():.2f} (<= 4), total variance rel err {tr_err:.3%} (<= 5%)")


def test_criterion_07_rank_plateau(report, tmp_path):
    cfg = ExperimentConfig()
    cfg.grid.nx = cfg.grid.ny = 30
    cfg.kernel.power = 1.0
    cfg.kernel.theta = 1e-5
    cfg.filter.kind = "ekf"
    cfg.filter.trunc_tol = 1e-5
    data = cmd_generate(cfg, tmp_path / "data")
    rows = cmd_run(None, data, tmp_path / "run")
    ranks = [r["effective_rank"] for r in rows]
    n_m = cfg.n_m
    below = all(ranks[k - 1] < n_m * k for k in range(4, 21))
    inc = np.diff(ranks)[-5:]
    nonincreasing = bool(np.all(np.diff(inc) <= 0))
    ok = below and nonincreasing
    report(7, ok, f"ranks {ranks[0]}..{ranks[-1]} (cumulative n_m {n_m * 20}), last increments {inc.tolist()}")


@pytest.mark.slow
def test_criterion_08_scaling(report):
    t0 = time.perf_counter()
    base = ExperimentConfig()
    fkf, kf = {}, {}
    for nx, ny in LADDER:
        cfg = ExperimentConfig.from_dict(base.to_dict())
        cfg.grid.nx, cfg.grid.ny = nx, ny
        fkf[nx * ny] = bench_kind(cfg, "fkf", steps=3, repeats=5)["step_s_median"]
    for nx, ny in [(30, 30), LADDER[0]]:
        cfg = ExperimentConfig.from_dict(base.to_dict())
        cfg.grid.nx, cfg.grid.ny = nx, ny
        kf[nx * ny] = bench_kind(cfg, "kf", steps=3, repeats=5)["step_s_median"]
    elapsed = time.perf_counter() - t0

    sizes = sorted(fkf)
    fkf_ok, parts = True, []
    for a, b in zip(sizes, sizes[1:]):
        ratio, allowed = fkf[b] / fkf[a], 2 * b / a
        fkf_ok &= ratio <= allowed
        parts.append(f"{ratio:.2f} (<= {allowed:.2f})")
    a, b = sorted(kf)
    kf_ratio, kf_needed = kf[b] / kf[a], (b / a) ** 1.8
    ok = fkf_ok and kf_ratio >= kf_needed and elapsed <= 15 * 60
    report(
        8,
        ok,
        f"fkf step ratios {', '.join(parts)}; kf ratio {kf_ratio:.2f} (>= {kf_needed:.2f}); total {elapsed:.0f}s (<= 900s)",
    )


@pytest.mark.slow
def test_criterion_09_enkf_comparison(report):
    cfg = ExperimentConfig().resolved()
    assert (cfg.kernel.power, cfg.kernel.theta, cfg.noise.sigma2, cfg.filter.ensemble_size) == (0.5, 1e-4, 2e-4, 1000)
    exp = Experiment.build(cfg)
    runs = {}
    for kind in ("kf", "fkf", "enkf"):
        c = ExperimentConfig.from_dict(cfg.to_dict())
        c.filter.kind = kind
        runs[kind] = FilterRun(Experiment(c, exp.grid, exp.layout, exp.H, exp.cov))
    obs = plume_obs(exp.grid, exp.H, cfg.time.n_steps, seed=100)
    worse = 0
    errs = []
    for k, y in enumerate(obs, start=1):
        for run in runs.values():
            run.step(k, y)
        ref = runs["kf"].mean_field()
        e_fkf = rel(runs["fkf"].mean_field(), ref)
        e_enkf = rel(runs["enkf"].mean_field(), ref)
        errs.append((e_fkf, e_enkf))
        worse += e_enkf > e_fkf
    ok = worse >= 18
    report(
        9,
        ok,
        f"EnKF error above FKF at {worse}/20 steps (>= 18); max FKF err {max(e[0] for e in errs):.1e}, "
        f"min EnKF err {min(e[1] for e in errs):.1e}",
    )


def test_criterion_10_tomography_geometry(report):
    worst = 0.0
    for nx, ny in LADDER:
        g = Grid(nx, ny)
        rng = np.random.default_rng(nx)
        pts = rng.uniform(0, 1, size=(1000, 2, 2)) * [g.lx, g.ly]
        for src, rec in pts:
            total = sum(v for _, v in trace_ray(g, src, rec))
            worst = max(worst, abs(total - np.linalg.norm(rec - src)) / np.linalg.norm(rec - src))
    g = Grid(59, 55)
    rows = build_H(g, crosswell_layout(g, 6, 48)).shape[0]
    ok = worst <= 1e-12 and rows == 288
    report(10, ok, f"max ray length error {worst:.2e} (<= 1e-12) over 3x1000 rays; H has {rows} rows (== 288)")
