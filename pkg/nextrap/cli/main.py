#!/usr/bin/env python3
"""
nextrap CLI: één executable voor de volledige pipeline

Usage:
    python -m nextrap.cli.main synth --kind saturating --params 200 --noise 0.01 --out runs/traj
    python -m nextrap.cli.main dataset --traj runs/traj --k 5 --out runs/data
    python -m nextrap.cli.main train --dataset runs/data/dataset.safetensors --out runs/bundle
    python -m nextrap.cli.main compare --traj runs/traj --bundle runs/bundle/bundle.safetensors --out runs/cmp

Exit codes: 0 succes, 1 gebruiksfout, 2 data/format fout.
"""

import logging
import sys
from typing import List, Optional

from nextrap import __version__
from nextrap.src.errors import UsageError
from nextrap.src.settings import get_settings

from . import run_compare, run_dataset, run_diagnose, run_extrapolate, run_inspect, run_synth, run_train
from .common import CliParser, write_run_config


def build_parser() -> CliParser:
    parser = CliParser(prog="nextrap", description="Niet-lineaire extrapolatie van checkpoint trajectories")
    parser.add_argument("--version", action="version", version=f"nextrap {__version__}")
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    run_synth.add_parser(subparsers)
    run_inspect.add_parser(subparsers)
    run_diagnose.add_parser(subparsers)
    run_dataset.add_parser(subparsers)
    run_train.add_parser(subparsers)
    run_extrapolate.add_parsers(subparsers)
    run_compare.add_parser(subparsers)
    return parser


def configure_logging() -> None:
    level = get_settings().log_level
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv: Optional[List[str]] = None) -> int:
    """CLI entry point; geeft de exit code terug"""
    try:
        configure_logging()
        args = build_parser().parse_args(argv)
        if not hasattr(args, "subcommand_name"):
            args.subcommand_name = args.subcommand
        if args.out is not None:
            write_run_config(args)
        args.handler(args)
        return 0
    except SystemExit as e:
        # --help / --version
        return e.code if isinstance(e.code, int) else 0
    except UsageError as e:
        print(f"❌ UsageError: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
