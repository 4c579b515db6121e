"""Experiment configuration: nested dataclasses serialized as JSON."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError

KINDS = ("kf", "fkf", "ekf", "enkf")


@dataclass
class GridConfig:
    nx: int = 59
    ny: int = 55
    lx: float = 1.0
    ly: float = 1.0


@dataclass
class KernelConfig:
    family: str = "powered-exponential"
    theta: float = 1e-4
    length: float | None = None  # resolved to 0.2 * max(lx, ly)
    power: float = 0.5
    nu: float = 0.5
    alpha_scale: float | None = None


@dataclass
class NoiseConfig:
    sigma2: float = 2e-4


@dataclass
class LayoutConfig:
    n_sou: int = 6
    n_rec: int = 48
    source_x: float = 0.0
    receiver_x: float | None = None  # resolved to lx


@dataclass
class TimeConfig:
    n_steps: int = 20
    hours_per_step: float = 3.0


@dataclass
class PlumeConfig:
    max_amplitude: float = 0.05


@dataclass
class FilterConfig:
    kind: str = "fkf"
    rank: int | None = None  # resolved to n_m
    oversampling: int = 20
    passes: str = "two-pass"
    trunc_tol: float = 1e-5
    ensemble_size: int = 1000
    inflation: float = 1.0
    boxcox_alpha: float = 2.0
    relinearizations: int = 1
    baseline: float = 1.0  # background slowness the extended filter linearizes around
    cov_mode: str = "fft"


@dataclass
class ExperimentConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    plume: PlumeConfig = field(default_factory=PlumeConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    seed: int = 0

    @property
    def n_s(self) -> int:
        return self.grid.nx * self.grid.ny

    @property
    def n_m(self) -> int:
        return self.layout.n_sou * self.layout.n_rec

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        return _build(cls, data, "")

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<json>", str(exc)) from None
        if not isinstance(data, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    def resolved(self) -> "ExperimentConfig":
        """Copy with every defaulted-by-derivation value filled in, then validated."""
        cfg = ExperimentConfig.from_dict(self.to_dict())
        if cfg.kernel.length is None:
            cfg.kernel.length = 0.2 * max(cfg.grid.lx, cfg.grid.ly)
        if cfg.layout.receiver_x is None:
            cfg.layout.receiver_x = cfg.grid.lx
        if cfg.filter.rank is None:
            cfg.filter.rank = cfg.n_m
        validate(cfg)
        return cfg


def _build(cls, data, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(prefix.rstrip(".") or "<root>", "expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(prefix + unknown[0], "unknown field")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        path = prefix + name
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, path + ".")
        else:
            kwargs[name] = _coerce(value, f.type, path)
    return cls(**kwargs)


def _coerce(value, typ: str, path: str):
    optional = "None" in typ
    if value is None:
        if optional:
            return None
        raise ConfigError(path, "must not be null")
    if typ.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if typ.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if typ.startswith("str"):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    return value


def validate(cfg: ExperimentConfig) -> None:
    def need(ok: bool, path: str, message: str):
        if not ok:
            raise ConfigError(path, message)

    g, k, f = cfg.grid, cfg.kernel, cfg.filter
    need(g.nx >= 1, "grid.nx", "must be >= 1")
    need(g.ny >= 1, "grid.ny", "must be >= 1")
    need(g.lx > 0, "grid.lx", "must be positive")
    need(g.ly > 0, "grid.ly", "must be positive")
    need(k.family in ("powered-exponential", "matern"), "kernel.family", "must be 'powered-exponential' or 'matern'")
    need(k.theta > 0, "kernel.theta", "must be positive")
    need(k.length is None or k.length > 0, "kernel.length", "must be positive")
    need(0 < k.power <= 2, "kernel.power", "must lie in (0, 2]")
    need(k.nu > 0, "kernel.nu", "must be positive")
    need(k.alpha_scale is None or k.alpha_scale > 0, "kernel.alpha_scale", "must be positive")
    need(cfg.noise.sigma2 >= 0, "noise.sigma2", "must be nonnegative")
    need(cfg.layout.n_sou >= 1, "layout.n_sou", "must be >= 1")
    need(cfg.layout.n_rec >= 1, "layout.n_rec", "must be >= 1")
    need(0 <= cfg.layout.source_x <= g.lx, "layout.source_x", "must lie inside the grid")
    rx = cfg.layout.receiver_x
    need(rx is None or 0 <= rx <= g.lx, "layout.receiver_x", "must lie inside the grid")
    need(cfg.time.n_steps >= 1, "time.n_steps", "must be >= 1")
    need(cfg.time.hours_per_step > 0, "time.hours_per_step", "must be positive")
    need(cfg.plume.max_amplitude > 0, "plume.max_amplitude", "must be positive")
    need(f.kind in KINDS, "filter.kind", f"must be one of {', '.join(KINDS)}")
    need(f.cov_mode in ("fft", "dense"), "filter.cov_mode", "must be 'fft' or 'dense'")
    need(isinstance(cfg.seed, int) and cfg.seed >= 0, "seed", "must be a nonnegative integer")
    if f.kind in ("fkf", "ekf"):
        need(f.rank is None or f.rank >= 1, "filter.rank", "must be >= 1")
        need(f.oversampling >= 0, "filter.oversampling", "must be >= 0")
        need(f.passes in ("two-pass", "single-pass"), "filter.passes", "must be 'two-pass' or 'single-pass'")
        rank = f.rank if f.rank is not None else cfg.n_m
        need(rank + 1 <= cfg.n_s, "filter.rank", f"must be below n_s = {cfg.n_s}")
    if f.kind == "ekf":
        need(0 <= f.trunc_tol < 1, "filter.trunc_tol", "must lie in [0, 1)")
        need(f.boxcox_alpha > 0, "filter.boxcox_alpha", "must be positive")
        need(1 <= f.relinearizations <= 5, "filter.relinearizations", "must lie in [1, 5]")
        need(f.baseline > 0, "filter.baseline", "must be positive")
    if f.kind == "enkf":
        need(f.ensemble_size >= 2, "filter.ensemble_size", "must be >= 2")
        need(f.inflation > 0, "filter.inflation", "must be positive")
