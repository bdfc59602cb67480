"""Command-line entry point.

    dualkf <mode> [--config PATH] [--seed N] [--out DIR] [--oracle | --blind] ...

Exit status: 0 on success, 1 on a configuration error, 2 on a numerical or
optimizer failure.
"""

import argparse
import json
import sys

from .. import __version__
from ..errors import ConfigError, DualKFError
from .config import MODES, ExperimentConfig
from .runner import run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE = 0, 1, 2


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _assignment(text):
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected KEY=JSON, got {text!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def build_parser():
    p = argparse.ArgumentParser(prog="dualkf", description="Policy-optimization learning of the Kalman gain.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", help="JSON experiment configuration")
    p.add_argument("--seed", type=int, help="base seed (overrides seed0)")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--oracle", dest="oracle", action="store_true", default=None,
                   help="report true cost and gain error through the sealed oracle (default)")
    g.add_argument("--blind", dest="oracle", action="store_false",
                   help="withhold the covariances from reporting as well; J is the batch error")
    p.add_argument("--no-plots", dest="plots", action="store_false", default=None, help="skip PNG figures")
    p.add_argument("--T", dest="T_grid", type=_int_list, help="comma-separated window lengths")
    p.add_argument("--M", dest="M_grid", type=_int_list, help="comma-separated batch sizes")
    p.add_argument("--K", type=int, help="SGD iterations")
    p.add_argument("--num-seeds", dest="num_seeds", type=int)
    p.add_argument("--set", dest="assignments", type=_assignment, action="append", default=[],
                   metavar="KEY=JSON", help="override any top-level config field")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig(mode=args.mode)
        changes = dict(args.assignments)
        changes.update(
            mode=args.mode,
            seed0=args.seed,
            out_dir=args.out,
            oracle=args.oracle,
            plots=args.plots,
            T_grid=args.T_grid,
            M_grid=args.M_grid,
            K=args.K,
            num_seeds=args.num_seeds,
        )
        config = config.override(**changes)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        record = run_scenario(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DualKFError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"{config.mode}: {len(record.cells)} cell(s), {record.wall_time:.2f} s, output in {config.out_dir}")
    if record.failed:
        print("some cells failed; see the summary JSON", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
