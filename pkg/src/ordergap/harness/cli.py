"""Command-line entry point.

Subcommands:
    run         run the configured seed sweep and write trace/report artifacts
    analyze     compute the domain analysis records for a config
    stop-bounds calculate the stopping bounds implied by [constants] + [stopping]
    verify      run the bound-verification suite (all criteria or one suite)

Exit status is nonzero exactly when a run failed or a verification criterion
did not pass.
"""

import argparse
import os
import sys

from ..core import NonFiniteStateError
from ..stopping import stopping_bounds
from .config import ConfigError, load_config
from .io import fmt_value, write_report
from .runner import analyze, bounds_records, override, run_experiment
from .verify import run_suite, suite_names

__all__ = ["main"]


def _print_records(records: dict) -> None:
    for key, value in records.items():
        print(f"{key}={fmt_value(value)}")


def _cmd_run(args) -> int:
    cfg = override(load_config(args.config), seed=args.seed, seeds=args.seeds)
    result = run_experiment(cfg, out_dir=args.out, quiet=args.quiet)
    if not args.quiet:
        trig = result.aggregate["triggered_count"]
        print(f"triggered {trig}/{len(result.outcomes)} seeds; aggregate: {result.aggregate_path}")
    return 0


def _cmd_analyze(args) -> int:
    cfg = override(load_config(args.config), seed=args.seed, seeds=None)
    records = analyze(cfg)
    if not args.quiet:
        _print_records(records)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "analysis.txt")
        write_report(path, records, kind="analysis", experiment=cfg.experiment, digest=cfg.digest)
        if not args.quiet:
            print(f"wrote {path}")
    return 0


def _cmd_stop_bounds(args) -> int:
    cfg = load_config(args.config)
    if cfg.constants is None:
        print("error: config has no [constants] block; bounds need rho, L, sigma, M", file=sys.stderr)
        return 1
    bounds = stopping_bounds(cfg.constants, cfg.stopping)
    records = {
        "epsilon": bounds.epsilon,
        "window": bounds.window,
        "rho": cfg.constants.rho,
        "L": cfg.constants.L,
        "gamma": cfg.constants.gamma,
        "sigma": cfg.constants.sigma,
        "M": cfg.constants.M,
        "R0": cfg.constants.R0,
    }
    records.update(bounds_records(bounds))
    _print_records(records)
    return 0


def _cmd_verify(args) -> int:
    results = run_suite(args.suite, quiet=args.quiet)
    return 0 if all(r.passed for r in results) else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ordergap",
        description="Order-gap experiments: consolidation/expansion dynamics, "
        "windowed stopping, and bound verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the configured seed sweep and write artifacts")
    p_run.add_argument("--config", required=True, help="path to a TOML experiment config")
    p_run.add_argument("--seed", type=int, default=None, help="override the base seed")
    p_run.add_argument("--seeds", type=int, default=None, help="override the trajectory count")
    p_run.add_argument("--out", default=None, help="output directory (overrides [output] dir)")
    p_run.add_argument("--quiet", action="store_true", help="suppress per-seed progress lines")

    p_an = sub.add_parser("analyze", help="compute the domain analysis records")
    p_an.add_argument("--config", required=True, help="path to a TOML experiment config")
    p_an.add_argument("--seed", type=int, default=None, help="override the base seed")
    p_an.add_argument("--out", default=None, help="directory to write analysis.txt into")
    p_an.add_argument("--quiet", action="store_true", help="suppress stdout records")

    p_sb = sub.add_parser(
        "stop-bounds", help="print the stopping bounds implied by [constants] and [stopping]"
    )
    p_sb.add_argument("--config", required=True, help="path to a TOML experiment config")

    p_ver = sub.add_parser("verify", help="run the bound-verification suite")
    p_ver.add_argument(
        "suite",
        nargs="?",
        default="all",
        help=f"criterion group or name (default: all; groups: {', '.join(suite_names())})",
    )
    p_ver.add_argument("--quiet", action="store_true", help="suppress per-criterion lines")

    args = parser.parse_args(argv)
    commands = {
        "run": _cmd_run,
        "analyze": _cmd_analyze,
        "stop-bounds": _cmd_stop_bounds,
        "verify": _cmd_verify,
    }
    try:
        return commands[args.command](args)
    except (ConfigError, NonFiniteStateError, RuntimeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
