"""Implementations behind the command-line subcommands.

Directory layouts
-----------------
data directory (``generate``)::

    config.json           resolved configuration
    observations.csv      step,index,value (travel-time delays)
    truth/step_001.fkf    true slowness perturbation per step

run directory (``run``)::

    config.json
    metrics.csv
    mean/step_001.fkf     estimated slowness perturbation per step
    state/...             low-rank covariance snapshots (fkf, ekf only)
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import uq
from .config import ExperimentConfig
from .covariance import CovarianceOperator, Grid, KernelSpec, build_operator
from .errors import ConfigError, FastKFError
from .fieldio import read_field, read_observations, write_field, write_observations
from .filters import (
    BoxCox,
    DenseFilterState,
    Ensemble,
    LowRankState,
    dense_kf_step,
    enkf_step,
    fekf_step,
    fkf_init,
    fkf_step,
)
from .rng import make_rng
from .tomography import PlumeModel, SourceReceiverLayout, build_H, simulate_observations, synth_plume

log = logging.getLogger(__name__)

DENSE_LIMIT = 20_000
METRIC_COLUMNS = ("step", "time_hours", "wall_time_s", "rel_error", "effective_rank", "trace", "rel_entropy")
# dense log-determinants are skipped above this size
DENSE_ENTROPY_LIMIT = 5000

# independent random streams derived from the experiment seed
STREAM_OBS, STREAM_GHEP, STREAM_ENKF, STREAM_SAMPLE = 1, 2, 3, 4


def _step_name(step: int) -> str:
    return f"step_{step:03d}"


@dataclass
class Experiment:
    """Grid, covariance, layout and measurement operator derived from a config."""

    config: ExperimentConfig
    grid: Grid
    layout: SourceReceiverLayout
    H: object
    cov: CovarianceOperator

    @classmethod
    def build(cls, config: ExperimentConfig, cov_mode: str | None = None) -> "Experiment":
        cfg = config.resolved()
        g = Grid(cfg.grid.nx, cfg.grid.ny, cfg.grid.lx, cfg.grid.ly)
        k = cfg.kernel
        spec = KernelSpec(k.family, k.theta, k.length, k.power, k.nu, k.alpha_scale)
        lay = cfg.layout
        ys = (np.arange(lay.n_sou) + 0.5) * g.ly / lay.n_sou
        yr = (np.arange(lay.n_rec) + 0.5) * g.ly / lay.n_rec
        layout = SourceReceiverLayout(
            np.column_stack([np.full(lay.n_sou, lay.source_x), ys]),
            np.column_stack([np.full(lay.n_rec, lay.receiver_x), yr]),
        )
        H = build_H(g, layout)
        cov = build_operator(g, spec, cov_mode or cfg.filter.cov_mode)
        return cls(cfg, g, layout, H, cov)

    def plume(self) -> PlumeModel:
        return PlumeModel(max_amplitude=self.config.plume.max_amplitude)

    def times(self) -> np.ndarray:
        t = self.config.time
        return t.hours_per_step * np.arange(1, t.n_steps + 1)


def _check_dense(n_s: int, force: bool, what: str):
    if n_s > DENSE_LIMIT and not force:
        raise FastKFError(
            f"{what} needs dense covariance work on n_s = {n_s} > {DENSE_LIMIT}; pass --force-dense to override"
        )


# -- generate ---------------------------------------------------------------


def cmd_generate(config: ExperimentConfig, out_dir) -> Path:
    """Write the true fields, the noisy delays and the resolved config."""
    exp = Experiment.build(config)
    cfg = exp.config
    out = Path(out_dir)
    (out / "truth").mkdir(parents=True, exist_ok=True)
    plume = exp.plume()
    obs = np.empty((cfg.time.n_steps, cfg.n_m))
    for k, t in enumerate(exp.times(), start=1):
        field = synth_plume(plume, exp.grid, float(t))
        write_field(out / "truth" / f"{_step_name(k)}.fkf", field, exp.grid.shape)
        obs[k - 1] = simulate_observations(exp.H, field, cfg.noise.sigma2, make_rng(cfg.seed, STREAM_OBS, k))
    write_observations(out / "observations.csv", obs)
    cfg.save(out / "config.json")
    return out


# -- run --------------------------------------------------------------------


def _load_data(exp: Experiment, data_dir: Path) -> np.ndarray:
    data_cfg_path = data_dir / "config.json"
    if data_cfg_path.exists():
        dcfg = ExperimentConfig.load(data_cfg_path).resolved()
        for name in ("grid", "layout"):
            if getattr(dcfg, name) != getattr(exp.config, name):
                raise ConfigError(name, f"run config does not match the data in {data_dir}")
    obs = read_observations(data_dir / "observations.csv")
    if obs.shape[1] != exp.config.n_m:
        raise ConfigError("layout", f"data has {obs.shape[1]} measurements per step, config implies {exp.config.n_m}")
    if obs.shape[0] < exp.config.time.n_steps:
        raise ConfigError("time.n_steps", f"data only has {obs.shape[0]} steps")
    return obs[: exp.config.time.n_steps]


class FilterRun:
    """Drives one filter over a sequence of observation batches."""

    def __init__(self, exp: Experiment, dense_gamma: np.ndarray | None = None):
        self.exp = exp
        cfg = exp.config
        f = cfg.filter
        self.kind = f.kind
        self.noise = cfg.noise.sigma2
        n = exp.grid.n
        self.transform = BoxCox(f.boxcox_alpha) if f.kind == "ekf" else None
        self.gep = self.GHt = None
        if f.kind == "kf":
            self.gamma = dense_gamma if dense_gamma is not None else exp.cov.to_dense()
        elif f.kind == "fkf":
            p = min(f.oversampling, n - f.rank)
            self.gep, self.GHt = fkf_init(
                exp.cov, exp.H, self.noise, f.rank, make_rng(cfg.seed, STREAM_GHEP, 0), p, f.passes
            )
        elif f.kind == "ekf":
            self.base_delay = exp.H @ np.full(n, f.baseline)
        self.reset()

    def reset(self):
        """Back to the empty initial state, keeping the offline precomputation."""
        n = self.exp.grid.n
        if self.kind == "kf":
            self.state = DenseFilterState.zero(n)
        elif self.kind == "enkf":
            self.state = Ensemble.zero(n, self.exp.config.filter.ensemble_size)
        else:
            self.state = LowRankState.zero(n)

    def step(self, k: int, y: np.ndarray):
        cfg, exp = self.exp.config, self.exp
        f = cfg.filter
        if self.kind == "kf":
            self.state = dense_kf_step(self.state, exp.H, y, self.gamma, self.noise)
        elif self.kind == "fkf":
            self.state = fkf_step(self.state, self.gep, self.GHt, exp.H, y, self.noise)
        elif self.kind == "ekf":
            # delays are perturbations; the transformed model sees full travel times
            self.state = fekf_step(
                self.state,
                exp.cov,
                exp.H,
                y + self.base_delay,
                self.noise,
                self.transform,
                f.rank,
                f.trunc_tol,
                make_rng(cfg.seed, STREAM_GHEP, k),
                min(f.oversampling, exp.grid.n - f.rank),
                f.passes,
                f.relinearizations,
            )
        else:
            self.state = enkf_step(
                self.state, exp.H, y, exp.cov, self.noise, make_rng(cfg.seed, STREAM_ENKF, k), f.inflation
            )

    def mean_field(self) -> np.ndarray:
        """Estimated slowness perturbation."""
        if self.kind == "ekf":
            return self.transform.inverse(self.state.mean) - self.exp.config.filter.baseline
        if self.kind == "enkf":
            return self.state.mean()
        return self.state.mean

    def measures(self) -> tuple[float | None, float | None, float | None]:
        """(effective rank, trace, relative entropy); ``None`` where not defined."""
        st, cov = self.state, self.exp.cov
        if self.kind in ("fkf", "ekf"):
            ent = uq.relative_entropy(st) if st.alpha > 0 else None
            return st.rank, uq.trace_criterion(st, cov), ent
        if self.kind == "kf":
            ent = None
            if st.cov.shape[0] <= DENSE_ENTROPY_LIMIT:
                s1 = np.linalg.slogdet(st.cov)
                s0 = np.linalg.slogdet(self.gamma)
                if s1[0] > 0 and s0[0] > 0:
                    ent = 0.5 * (s1[1] - s0[1])
            return None, float(np.trace(st.cov)), ent
        return None, float(np.sum(np.var(st.members, axis=1, ddof=1))), None


def _save_state(run: FilterRun, state_dir: Path, k: int):
    st = run.state
    if run.kind == "fkf":
        if k == 1:
            np.savez(state_dir / "basis.npz", W=st.W, GW=st.GW)
        np.savez(state_dir / f"{_step_name(k)}.npz", alpha=st.alpha, D=st.D, mean=st.mean, step=st.step)
    elif run.kind == "ekf":
        np.savez(
            state_dir / f"{_step_name(k)}.npz", alpha=st.alpha, D=st.D, mean=st.mean, step=st.step, W=st.W, GW=st.GW
        )


def load_state(run_dir, step: int) -> LowRankState:
    """Rebuild the low-rank state saved after ``step`` in a run directory."""
    state_dir = Path(run_dir) / "state"
    path = state_dir / f"{_step_name(step)}.npz"
    if not path.exists():
        raise FastKFError(f"no covariance snapshot for step {step} in {run_dir} (only fkf and ekf runs save them)")
    with np.load(path) as z:
        parts = {key: z[key] for key in z.files}
    if "W" not in parts:
        with np.load(state_dir / "basis.npz") as b:
            parts["W"], parts["GW"] = b["W"], b["GW"]
    return LowRankState(float(parts["alpha"]), parts["D"], parts["W"], parts["GW"], parts["mean"], int(parts["step"]))


def _write_metrics(path: Path, rows: list[dict]):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row.get(k) is None else row[k]) for k in METRIC_COLUMNS})


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_run(
    config: ExperimentConfig | None,
    data_dir,
    out_dir,
    reference=None,
    force_dense: bool = False,
) -> list[dict]:
    """Run the configured filter over the data and write snapshots and metrics."""
    data_dir = Path(data_dir)
    if config is None:
        config = ExperimentConfig.load(data_dir / "config.json")
    cfg = config.resolved()
    if cfg.filter.kind == "kf":
        _check_dense(cfg.n_s, force_dense, "the dense Kalman filter")
    exp = Experiment.build(cfg)
    obs = _load_data(exp, data_dir)
    out = Path(out_dir)
    (out / "mean").mkdir(parents=True, exist_ok=True)
    state_dir = out / "state"
    if cfg.filter.kind in ("fkf", "ekf"):
        state_dir.mkdir(exist_ok=True)
    cfg.save(out / "config.json")
    ref_dir = Path(reference) if reference is not None else None

    run = FilterRun(exp)
    rows = []
    for k, t in enumerate(exp.times(), start=1):
        t0 = time.perf_counter()
        run.step(k, obs[k - 1])
        wall = time.perf_counter() - t0
        mean = run.mean_field()
        write_field(out / "mean" / f"{_step_name(k)}.fkf", mean, exp.grid.shape)
        _save_state(run, state_dir, k)
        rel = None
        if ref_dir is not None:
            ref = read_field(ref_dir / "mean" / f"{_step_name(k)}.fkf").ravel()
            if ref.size != mean.size:
                raise ConfigError("grid", f"reference run {ref_dir} has a different grid")
            nrm = np.linalg.norm(ref)
            rel = float(np.linalg.norm(mean - ref) / nrm) if nrm > 0 else float(np.linalg.norm(mean))
        rank, trace, ent = run.measures()
        rows.append(
            dict(
                step=k,
                time_hours=float(t),
                wall_time_s=wall,
                rel_error=rel,
                effective_rank=rank,
                trace=trace,
                rel_entropy=ent,
            )
        )
        log.info("step %d/%d done in %.3fs", k, len(obs), wall)
    _write_metrics(out / "metrics.csv", rows)
    return rows


# -- uq ---------------------------------------------------------------------


def _parse_steps(steps, n_steps: int) -> list[int]:
    if steps is None:
        return list(range(1, n_steps + 1))
    out = sorted(set(int(s) for s in steps))
    bad = [s for s in out if not 1 <= s <= n_steps]
    if bad:
        raise FastKFError(f"step {bad[0]} outside 1..{n_steps}")
    return out


def cmd_uq(run_dir, what: str, steps: Iterable[int] | None = None) -> list[Path]:
    """Variance fields, trace criterion or relative entropy from saved snapshots."""
    if what not in ("variance", "trace", "entropy"):
        raise FastKFError(f"unknown measure {what!r}; expected variance, trace or entropy")
    run_dir = Path(run_dir)
    cfg = ExperimentConfig.load(run_dir / "config.json").resolved()
    if cfg.filter.kind not in ("fkf", "ekf"):
        raise FastKFError(f"{what} needs covariance snapshots, which {cfg.filter.kind} runs do not save")
    exp = Experiment.build(cfg, cov_mode="fft")
    sel = _parse_steps(steps, cfg.time.n_steps)
    out = run_dir / "uq"
    out.mkdir(exist_ok=True)
    written = []
    if what == "variance":
        for k in sel:
            path = out / f"variance_{_step_name(k)}.fkf"
            write_field(path, uq.variance(load_state(run_dir, k), exp.cov), exp.grid.shape)
            written.append(path)
        return written
    path = out / f"{what}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if what == "trace":
            w.writerow(["step", "trace"])
            for k in sel:
                w.writerow([k, repr(uq.trace_criterion(load_state(run_dir, k), exp.cov))])
        else:
            w.writerow(["step", "rel_entropy", "rel_entropy_reduced"])
            for k in sel:
                st = load_state(run_dir, k)
                w.writerow([k, repr(uq.relative_entropy(st)), repr(uq.relative_entropy(st, "reduced"))])
    return [path]


# -- sample -----------------------------------------------------------------


def cmd_sample(
    run_dir,
    n_realizations: int,
    seed: int | None = None,
    steps: Iterable[int] | None = None,
    force_dense: bool = False,
) -> list[Path]:
    """Posterior realizations; each one reuses a single ``s_u`` across the selected steps."""
    if n_realizations < 1:
        raise FastKFError("need at least one realization")
    run_dir = Path(run_dir)
    cfg = ExperimentConfig.load(run_dir / "config.json").resolved()
    if cfg.filter.kind not in ("fkf", "ekf"):
        raise FastKFError(f"sampling needs covariance snapshots, which {cfg.filter.kind} runs do not save")
    _check_dense(cfg.n_s, force_dense, "sampling")
    exp = Experiment.build(cfg, cov_mode="dense")
    sel = _parse_steps(steps, cfg.time.n_steps)
    states = [load_state(run_dir, k) for k in sel]
    seed = cfg.seed if seed is None else seed
    transform = BoxCox(cfg.filter.boxcox_alpha) if cfg.filter.kind == "ekf" else None
    out = run_dir / "samples"
    out.mkdir(exist_ok=True)
    written = []
    for i in range(n_realizations):
        s_u = make_rng(seed, STREAM_SAMPLE, i).standard_normal(exp.grid.n)
        for k, draw in zip(sel, uq.propagate_realization(s_u, states, exp.cov)):
            if transform is not None:
                draw = transform.inverse(draw) - cfg.filter.baseline
            path = out / f"{_step_name(k)}_real_{i + 1:03d}.fkf"
            write_field(path, draw, exp.grid.shape)
            written.append(path)
    return written


# -- bench ------------------------------------------------------------------


def parse_grid(text: str) -> tuple[int, int]:
    try:
        nx, ny = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ConfigError("grids", f"cannot parse grid {text!r}; expected WxH") from None
    if nx < 1 or ny < 1:
        raise ConfigError("grids", f"grid {text!r} must have positive sizes")
    return nx, ny


def bench_kind(
    config: ExperimentConfig,
    kind: str,
    steps: int = 3,
    repeats: int = 5,
    timer: Callable[[], float] = time.perf_counter,
) -> dict:
    """Offline and median per-step wall time of one filter kind on one grid."""
    cfg = ExperimentConfig.from_dict(config.to_dict())
    cfg.filter.kind = kind
    cfg.filter.rank = None
    cfg.time.n_steps = steps
    cfg = cfg.resolved()
    t0 = timer()
    exp = Experiment.build(cfg)
    gamma = exp.cov.to_dense() if kind == "kf" else None
    run = FilterRun(exp, dense_gamma=gamma)
    offline = timer() - t0
    plume = exp.plume()
    obs = [
        simulate_observations(exp.H, synth_plume(plume, exp.grid, float(t)), cfg.noise.sigma2, make_rng(cfg.seed, STREAM_OBS, k))
        for k, t in enumerate(exp.times(), start=1)
    ]
    times = []
    for _ in range(repeats):
        run.reset()
        for k, y in enumerate(obs, start=1):
            t1 = timer()
            run.step(k, y)
            times.append(timer() - t1)
    return dict(
        grid=f"{cfg.grid.nx}x{cfg.grid.ny}",
        n_s=cfg.n_s,
        kind=kind,
        offline_s=offline,
        step_s_median=float(np.median(times)),
        repeats=repeats,
    )


BENCH_COLUMNS = ("grid", "n_s", "kind", "offline_s", "step_s_median", "repeats")


def cmd_bench(
    config: ExperimentConfig,
    grids: Iterable[str],
    out_path,
    kinds: Iterable[str] = ("fkf", "kf"),
    steps: int = 3,
    repeats: int = 5,
    force_dense: bool = False,
) -> list[dict]:
    """Time each filter kind on each grid and write one CSV row per pair.

    Dense kinds are skipped on grids above the dense-size policy unless
    ``force_dense`` is set.
    """
    rows = []
    for text in grids:
        nx, ny = parse_grid(text)
        cfg = ExperimentConfig.from_dict(config.to_dict())
        cfg.grid.nx, cfg.grid.ny = nx, ny
        for kind in kinds:
            if kind == "kf" and nx * ny > DENSE_LIMIT and not force_dense:
                log.warning("skipping kf on %s: above the dense limit of %d", text, DENSE_LIMIT)
                continue
            row = bench_kind(cfg, kind, steps, repeats)
            log.info("%s %s: offline %.3fs, step %.4fs", row["grid"], kind, row["offline_s"], row["step_s_median"])
            rows.append(row)
    with open(out_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    return rows
