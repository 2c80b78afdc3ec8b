#!/usr/bin/env python3
"""selfnorm - confidence radii for self-normalized martingales.

Usage:
    python selfnorm.py radius --log LOG.csv [--config NAME_OR_PATH] [--bound KIND]
    python selfnorm.py verify [--suite NAME ...] [--n N] [--seed SEED]
    python selfnorm.py experiment [--config bandit]

Examples:
    python selfnorm.py radius --log obs.csv --bound bernstein --delta 0.05
    python selfnorm.py verify --suite identities --n 1000 --seed 7
    python selfnorm.py verify --suite coverage --bound subgaussian --delta 0.1 --trials 10000
    python selfnorm.py experiment --config tightness --workers 4
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from selfnorm_core import ConfigError, apply_overrides, get_registry, run_command
from selfnorm_core.runner import EXIT_CONFIG, format_error

# preset used when --config is not given
DEFAULT_PRESETS = {"radius": "radius", "verify": "verify", "experiment": "bandit"}

# flag dest -> dotted RunConfig field
OVERRIDES = {
    "seed": "simulation.seed",
    "trials": "simulation.n_trials",
    "workers": "simulation.workers",
    "horizon": "simulation.stopping.horizon",
    "bound": "bound.kind",
    "delta": "bound.delta",
    "suite": "verify.suites",
    "n": "verify.n",
    "instances": "verify.instances",
    "out_dir": "output.out_dir",
    "log": "output.log_path",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="selfnorm - sub-Gaussian and Bernstein confidence radii for self-normalized martingales"
    )
    parser.add_argument("--config-dir", help="Custom preset directory")
    parser.add_argument("--list-presets", action="store_true", help="List available presets")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log debug output to stderr")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", help="Preset name or path to a JSON config file")
    common.add_argument("--seed", type=int, help="Master seed")
    common.add_argument("--trials", type=int, help="Number of Monte Carlo trials")
    common.add_argument("--workers", type=int, help="Worker processes (1 runs inline)")
    common.add_argument("--horizon", type=int, help="Stopping horizon")
    common.add_argument("--bound", choices=["subgaussian", "bernstein", "unregularized"], help="Bound to evaluate")
    common.add_argument("--delta", type=float, help="Failure probability")
    common.add_argument("--out-dir", help="Directory for report files")

    subparsers = parser.add_subparsers(dest="command")
    radius = subparsers.add_parser("radius", parents=[common], help="Radius of a replayed observation log")
    radius.add_argument("--log", help="Observation log CSV (t,x0..x{d-1},w)")

    verify = subparsers.add_parser("verify", parents=[common], help="Run verification suites")
    verify.add_argument("--suite", action="append", help="Suite to run (repeatable)")
    verify.add_argument("--n", type=int, help="Samples / instances per suite")
    verify.add_argument("--instances", type=int, help="Instances for containment and oracle suites")

    subparsers.add_parser("experiment", parents=[common], help="Run the configured experiment")
    return parser


def main() -> int:
    parser = build_parser()
    args = parser.parse_args()

    if args.verbose:
        logging.basicConfig(level=logging.DEBUG, format="%(levelname)s %(name)s: %(message)s")

    registry = get_registry(Path(args.config_dir) if args.config_dir else None)

    if args.list_presets:
        print("Available presets:")
        for name in registry.list_presets():
            description = registry.describe(name)
            print(f"  - {name}" + (f": {description}" if description else ""))
        return 0

    if not args.command:
        parser.error("a command (radius, verify, experiment) is required unless using --list-presets")

    try:
        config = registry.resolve(args.config) if args.config else registry.get_preset(DEFAULT_PRESETS[args.command])
        overrides = {"command": args.command}
        for dest, dotted in OVERRIDES.items():
            overrides[dotted] = getattr(args, dest, None)
        config = apply_overrides(config, overrides)
    except (ValidationError, ConfigError) as e:
        print(f"Error: {format_error(e)}", file=sys.stderr)
        return EXIT_CONFIG

    result = run_command(config)
    stream = sys.stdout if result.success else sys.stderr
    print(result.message, file=stream)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
