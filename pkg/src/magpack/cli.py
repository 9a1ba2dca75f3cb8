"""Command line entry points: run a scenario pipeline, compare two field
dumps, or execute the built-in acceptance checks.

Exit codes: 0 success, 1 a check or pipeline assertion failed, 2 bad usage
or configuration.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigError, MagpackError
from .harness import (ExperimentConfig, PIPELINES, SCENARIOS, compare,
                      load_config, run_scenario, scenario_config)


def _build_parser():
    p = argparse.ArgumentParser(
        prog="magpack",
        description="phase-space propagation toolkit for magnetic "
                    "Schrodinger equations")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario pipeline")
    run.add_argument("pipeline", choices=sorted(PIPELINES),
                     help="what to compute")
    run.add_argument("--scenario", default="free", choices=sorted(SCENARIOS))
    run.add_argument("--config", help="INI config file; flags override it")
    run.add_argument("--lambda", dest="lam", type=float,
                     help="phase-space scale parameter")
    run.add_argument("--T", type=float, help="final time")
    run.add_argument("--n-t", type=int, help="Volterra time nodes")
    run.add_argument("--grid-n", type=int, help="grid points per axis")
    run.add_argument("--out", help="output directory (MAGPACK_OUT overrides)")
    run.add_argument("--workers", type=int, default=1,
                     help="thread pool size for independent sweeps")
    run.add_argument("--seed", type=int, help="RNG seed for sampled pipelines")

    cmp_ = sub.add_parser("compare", help="compare two .gfd grid dumps")
    cmp_.add_argument("file_a")
    cmp_.add_argument("file_b")
    cmp_.add_argument("--rtol", type=float, default=None,
                      help="fail (exit 1) if relative L2 error exceeds this")

    st = sub.add_parser("selftest", help="run the acceptance test suite")
    st.add_argument("-k", dest="expr", default=None,
                    help="only run acceptance checks matching this expression")
    return p


def _cmd_run(args):
    if args.config:
        cfg = load_config(args.config, base=scenario_config(args.scenario))
    else:
        cfg = scenario_config(args.scenario)
    cfg.pipeline = args.pipeline
    for flag, attr in (("lam", "lam"), ("T", "T"), ("n_t", "n_t"),
                       ("grid_n", "n"), ("out", "out_dir"),
                       ("workers", "workers"), ("seed", "seed")):
        val = getattr(args, flag, None)
        if val is not None:
            setattr(cfg, attr, val)
    cfg.validate()
    summary = run_scenario(cfg)
    json.dump(summary, sys.stdout, indent=2, sort_keys=True)
    print()
    return 0 if summary["pass"] else 1


def _cmd_compare(args):
    result = compare(args.file_a, args.file_b)
    json.dump(result, sys.stdout, indent=2, sort_keys=True)
    print()
    if args.rtol is not None and result["relative_l2"] > args.rtol:
        return 1
    return 0


def _cmd_selftest(args):
    import os
    import pytest

    test_file = os.path.join(os.path.dirname(os.path.dirname(
        os.path.dirname(os.path.abspath(__file__)))), "tests",
        "test_acceptance.py")
    argv = ["-v", test_file]
    if not os.path.exists(test_file):
        argv = ["-v", "--pyargs", "tests.test_acceptance"]
    if args.expr:
        argv += ["-k", args.expr]
    code = pytest.main(argv)
    return 0 if code == 0 else 1


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "compare":
            return _cmd_compare(args)
        return _cmd_selftest(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except MagpackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
