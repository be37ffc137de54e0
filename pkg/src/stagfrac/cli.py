"""Command-line entry point: ``stagfrac run <config.toml>`` and ``stagfrac verify <suite>``."""

from __future__ import annotations

import argparse
import sys
from typing import List, Optional

from .config import ConfigError, parse_config
from .evolution import MODES
from .verify import SUITES, run_suite


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stagfrac", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a configured evolution")
    run.add_argument("config", help="TOML configuration file")
    run.add_argument("--output-dir", help="override output.directory")
    run.add_argument("--mode", choices=MODES, help="override parametrization.mode")
    run.add_argument("--seed", type=int, default=0, help="accepted for symmetry; runs are deterministic")
    ver = sub.add_parser("verify", help="run a property suite")
    ver.add_argument("suite", choices=sorted(SUITES))
    ver.add_argument("--seed", type=int, default=0, help="seed of the randomized checks")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "verify":
        return run_suite(args.suite, args.seed)
    from .pipeline import run
    try:
        config = parse_config(args.config)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 1
    try:
        result = run(config, args.output_dir, args.mode)
    except OSError as exc:
        print(f"cannot write output: {exc}", file=sys.stderr)
        return 1
    return result.status


if __name__ == "__main__":
    sys.exit(main())
