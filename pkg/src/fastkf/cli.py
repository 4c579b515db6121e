"""Command-line entry point: ``fastkf {generate,run,uq,sample,bench}``."""

from __future__ import annotations

import argparse
import logging
import sys

from .commands import cmd_bench, cmd_generate, cmd_run, cmd_sample, cmd_uq
from .config import KINDS, ExperimentConfig
from .errors import ConfigError, FastKFError

log = logging.getLogger("fastkf")


def _steps(text: str | None):
    if text is None:
        return None
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"steps must be comma-separated integers, got {text!r}") from None


def _load_config(path, seed):
    cfg = ExperimentConfig.load(path) if path else ExperimentConfig()
    if seed is not None:
        cfg.seed = seed
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fastkf", description="Low-rank Kalman filtering for cross-well tomography.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize true fields and noisy travel-time delays")
    g.add_argument("--config", help="JSON config (defaults used when omitted)")
    g.add_argument("--out", required=True, help="data directory to write")
    g.add_argument("--seed", type=int, help="override the config seed")

    r = sub.add_parser("run", help="run a filter over generated data")
    r.add_argument("--config", help="JSON config (defaults to the one stored with the data)")
    r.add_argument("--data", required=True, help="data directory from 'generate'")
    r.add_argument("--out", required=True, help="run directory to write")
    r.add_argument("--kind", choices=KINDS, help="override filter.kind")
    r.add_argument("--reference", help="run directory whose means serve as reference for rel_error")
    r.add_argument("--seed", type=int, help="override the config seed")
    r.add_argument("--force-dense", action="store_true", help="allow dense work above the size policy")

    u = sub.add_parser("uq", help="uncertainty measures from a run's covariance snapshots")
    u.add_argument("--run", required=True, help="run directory")
    u.add_argument("--what", required=True, choices=("variance", "trace", "entropy"))
    u.add_argument("--steps", type=_steps, help="comma-separated steps (default: all)")

    s = sub.add_parser("sample", help="posterior realizations from a run")
    s.add_argument("--run", required=True, help="run directory")
    s.add_argument("--n", type=int, default=1, help="number of realizations")
    s.add_argument("--steps", type=_steps, help="comma-separated steps (default: all)")
    s.add_argument("--seed", type=int, help="override the config seed")
    s.add_argument("--force-dense", action="store_true", help="allow dense roots above the size policy")

    b = sub.add_parser("bench", help="offline and per-step timings across grids")
    b.add_argument("--config", help="JSON config template")
    b.add_argument("--grids", default="59x55,117x109,234x219", help="comma-separated WxH list")
    b.add_argument("--kinds", default="fkf,kf", help="comma-separated filter kinds")
    b.add_argument("--steps", type=int, default=3, help="assimilation steps per repeat")
    b.add_argument("--repeats", type=int, default=5, help="repeats; the median step time is reported")
    b.add_argument("--out", required=True, help="CSV file to write")
    b.add_argument("--seed", type=int, help="override the config seed")
    b.add_argument("--force-dense", action="store_true", help="time kf above the size policy")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "generate":
            out = cmd_generate(_load_config(args.config, args.seed), args.out)
            print(out)
        elif args.command == "run":
            cfg = None
            if args.config or args.seed is not None or args.kind:
                cfg = _load_config(args.config or f"{args.data}/config.json", args.seed)
                if args.kind:
                    cfg.filter.kind = args.kind
                    cfg.filter.rank = None
            rows = cmd_run(cfg, args.data, args.out, args.reference, args.force_dense)
            print(f"{len(rows)} steps written to {args.out}")
        elif args.command == "uq":
            for path in cmd_uq(args.run, args.what, args.steps):
                print(path)
        elif args.command == "sample":
            paths = cmd_sample(args.run, args.n, args.seed, args.steps, args.force_dense)
            print(f"{len(paths)} realizations written")
        elif args.command == "bench":
            kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
            bad = [k for k in kinds if k not in KINDS]
            if bad:
                raise ConfigError("kinds", f"unknown filter kind {bad[0]!r}")
            grids = [t.strip() for t in args.grids.split(",") if t.strip()]
            rows = cmd_bench(
                _load_config(args.config, args.seed), grids, args.out, kinds, args.steps, args.repeats, args.force_dense
            )
            for row in rows:
                print(f"{row['grid']:>9} {row['kind']:>4} offline {row['offline_s']:.3f}s step {row['step_s_median']:.5f}s")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FastKFError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
