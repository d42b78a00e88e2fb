"""Command line entry point.

    ibflab <suite> --config PATH [--seed N] [--replicas N] [--out DIR]

Exit codes: 0 pass, 1 acceptance failure, 2 configuration error,
3 numerical error.  ``IBFLAB_WORKERS`` sets the replica worker count.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import ConfigError, load_config
from .suites import SUITES, failure_record, run_suite

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
WORKERS_ENV = "IBFLAB_WORKERS"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ibflab", description="Isotropic Brownian flow laboratory.")
    p.add_argument("suite", choices=SUITES)
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--seed", type=int, default=None, help="override master_seed")
    p.add_argument("--replicas", type=int, default=None, help="override replicas")
    p.add_argument("--out", default=None, help="override outputs.dir")
    return p


def workers_from_env() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError([f"{WORKERS_ENV} must be an integer, got {raw!r}"]) from None
    if n < 1:
        raise ConfigError([f"{WORKERS_ENV} must be >= 1"])
    return n


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(args.seed, args.replicas, args.out)
        workers = workers_from_env()
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rec = run_suite(cfg, args.suite, workers)
    except ArithmeticError as exc:
        path = failure_record(cfg, args.suite, exc)
        print(f"numerical error: {exc} (see {path})", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        path = failure_record(cfg, args.suite, exc)
        print(f"suite failed: {exc} (see {path})", file=sys.stderr)
        return EXIT_FAIL
    print(f"{args.suite}: {'PASS' if rec.passed else 'FAIL'} -> {cfg['outputs']['dir']}")
    return EXIT_PASS if rec.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
