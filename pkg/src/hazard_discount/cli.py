"""Command-line entry point: ``hazard-discount <subcommand> [options]``.

Settings resolve in three layers: built-in defaults, then a ``--config``
file of ``key=value`` lines, then explicit flags.  Failures print one JSON
line ``{"error": ..., "message": ...}`` to stderr and exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .agents import ReplayConfig, write_learning_curve_csv
from .aggregation import write_curve_csv
from .discounting import HazardPrior
from .errors import HazardDiscountError
from .ladder import build_ladder

# flag name -> (config field, type)
CONFIG_FLAGS = {
    "--gamma-max": ("gamma_max", float),
    "--n-gamma": ("n_gamma", int),
    "--ladder-k": ("ladder_k", float),
    "--agent-kind": ("agent_kind", str),
    "--agent-k": ("agent_k", float),
    "--env-kind": ("env_kind", str),
    "--env-k": ("env_k", float),
    "--n-paths": ("n_paths", int),
    "--form": ("form", str),
    "--rule": ("rule", str),
    "--estimator": ("estimator", str),
    "--n-episodes": ("n_episodes", int),
    "--td-sweeps": ("td_sweeps", int),
}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="run seed (default 0)")
    p.add_argument("--out-dir", dest="out_dir", default=argparse.SUPPRESS, help="artifact directory (default results)")
    p.add_argument("--mode", choices=harness.MODES, default=argparse.SUPPRESS, help="how true values are computed")
    p.add_argument("--config", type=Path, default=None, help="key=value file applied before flags")
    for flag, (dest, typ) in CONFIG_FLAGS.items():
        p.add_argument(flag, dest=dest, type=typ, default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hazard-discount", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ladder", help="write the ladder of discount factors")
    _common(p)

    p = sub.add_parser("curve", help="approximate versus exact discount curve")
    _common(p)
    p.add_argument("--horizon", type=int, default=100)

    p = sub.add_parser("pathworld", help="score one agent on Pathworld")
    _common(p)

    p = sub.add_parser("mismatch", help="preset sweep of agents against one environment")
    _common(p)
    p.add_argument("--table", choices=sorted(harness.TABLES), default="mismatched_k")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("truncation", help="MSE as a function of gamma_max")
    _common(p)
    p.add_argument("--gamma-maxes", type=float, nargs="+", default=[0.9, 0.95, 0.99, 0.999, 0.9999])
    p.add_argument("--study-n-gamma", type=int, default=10_000)

    p = sub.add_parser("gridworld", help="prioritised replay on the hazard gridworld")
    _common(p)
    p.add_argument("--steps", type=int, default=ReplayConfig.steps)

    p = sub.add_parser("calibrate", help="choose the Pathworld path count against a reference table")
    _common(p)
    p.add_argument("--target", choices=sorted(harness.TABLES), default="baselines")
    return parser


def resolve_config(args) -> harness.ExperimentConfig:
    overrides = {}
    if args.config is not None:
        overrides.update(harness.parse_config_text(args.config.read_text()))
    names = {"seed", "out_dir", "mode", *(dest for dest, _ in CONFIG_FLAGS.values())}
    overrides.update({k: v for k, v in vars(args).items() if k in names})
    return harness.ExperimentConfig(**overrides)


def _emit(results, cfg, name):
    values, summary = harness.write_results(results, cfg.out_dir, name)
    print(harness.format_summary(results))
    print(f"wrote {values} and {summary}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        out = Path(cfg.out_dir)
        if args.command == "ladder":
            ladder = build_ladder(cfg.gamma_max, cfg.n_gamma, cfg.effective_ladder_k)
            out.mkdir(parents=True, exist_ok=True)
            path = out / "ladder.csv"
            with open(path, "w") as fh:
                fh.write("i,gamma,config_hash,mode,seed\n")
                h = harness.config_hash(cfg)
                for i, g in enumerate(ladder.gammas):
                    fh.write(f"{i},{float(g)!r},{h},{cfg.mode},{cfg.seed}\n")
            print(ladder.to_config_block() + f"b={ladder.b!r}")
            print(f"wrote {path}")
        elif args.command == "curve":
            ladder = build_ladder(cfg.gamma_max, cfg.n_gamma, cfg.effective_ladder_k)
            prior = HazardPrior(cfg.agent_kind, cfg.agent_k)
            out.mkdir(parents=True, exist_ok=True)
            path = out / "curve.csv"
            meta = {"config_hash": harness.config_hash(cfg), "mode": cfg.mode, "seed": cfg.seed}
            write_curve_csv(path, ladder, prior, args.horizon, form=cfg.form, rule=cfg.rule, meta=meta)
            print(f"wrote {path}")
        elif args.command == "pathworld":
            _emit([harness.run_value_profile(cfg)], cfg, "pathworld")
        elif args.command == "mismatch":
            _emit(harness.run_mismatch_sweep(cfg, table=args.table, workers=args.workers), cfg, args.table)
        elif args.command == "truncation":
            _emit(harness.run_truncation_study(cfg, args.gamma_maxes, args.study_n_gamma), cfg, "truncation")
        elif args.command == "gridworld":
            replay = ReplayConfig(steps=args.steps)
            _, _, runs = harness.run_gridworld_replay(cfg.seed, replay)
            out.mkdir(parents=True, exist_ok=True)
            meta = {"config_hash": harness.config_hash(cfg), "mode": cfg.mode, "seed": cfg.seed}
            for run in runs:
                write_learning_curve_csv(out / f"gridworld_{run.scheme}_curve.csv", run.curve, meta)
                run.audit.write_csv(out / f"gridworld_{run.scheme}_audit.csv")
                print(f"{run.scheme:<18} final return {run.curve[-1][1]:.4f}  optimal policy: {'yes' if run.optimal else 'no'}")
        elif args.command == "calibrate":
            report = harness.calibrate_paths(args.target, cfg)
            path = harness.write_calibration(report, cfg.out_dir, cfg)
            for n, dev, _ in report.sweep:
                print(f"n_paths={n:<3} deviation={dev:.4f}{'  <- chosen' if n == report.best_n else ''}")
            if report.failed:
                print(f"calibration failure: no row set within 2x of {args.target} at n_paths={report.best_n}")
            print(f"wrote {path}")
    except (HazardDiscountError, OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
