"""
Main Application Entry Point for the YOdar Fusion Pipeline
==========================================================
Author: Perception Fusion Team

Command-line entry point. Every stage of the camera/radar fusion experiment is a
subcommand working on one run directory:

Processing Pipeline:
gen-data → train-radar → train-fusion → eval → report

Usage:
    python main.py gen-data --out runs/seed1 --seed 1
    python main.py train-radar --out runs/seed1
    python main.py train-fusion --out runs/seed1
    python main.py eval --out runs/seed1
    python main.py report runs/seed1 runs/seed2 runs/seed3 --out runs/summary
    python main.py run --config config.json --out runs/seed1 --seed 1

``--config`` defaults to the built-in configuration for gen-data and run, and to the
config.json written by gen-data for every later stage. ``--seed`` overrides all
seeds of the configuration.

Exit codes: 0 success, 1 usage or configuration error, 2 data or schema error,
3 numeric failure.

Environment: YODAR_THREADS caps parallelism, YODAR_LOG_LEVEL and YODAR_LOG_FILE
control logging.

Dependencies: argparse, pydantic-settings (through src.shared.config)
"""

# Standard library imports
import argparse            # Command-line parsing
import logging             # Application logging and monitoring
import sys                 # Exit codes
from pathlib import Path   # Run directory handling
from typing import List, NoReturn, Optional

# Local application imports
from src.shared.config import RunConfig                               # Run configuration
from src.shared.exceptions import ConfigError, YodarError             # Error hierarchy and exit codes
from src.shared.utils import configure_logging                        # Logging setup
from src.evaluation.report_writer import summary_lines                # Console summary
from src.pipeline.commands import (                                   # Stage bodies
    CONFIG_FILE,
    cmd_eval,
    cmd_gen_data,
    cmd_report,
    cmd_run,
    cmd_train_fusion,
    cmd_train_radar,
    load_run_config,
)

logger = logging.getLogger(__name__)

STAGES = ("gen-data", "train-radar", "train-fusion", "eval", "report", "run")


class CommandLineParser(argparse.ArgumentParser):
    """Argument parser that reports usage errors as ``ConfigError``."""

    def error(self, message: str) -> NoReturn:
        raise ConfigError(f"{self.prog}: {message}")


# ========== ARGUMENT PARSING ==========

def build_parser() -> CommandLineParser:
    parser = CommandLineParser(prog="yodar", description="Camera/radar fusion pipeline")
    subcommands = parser.add_subparsers(dest="command", required=True, parser_class=CommandLineParser)
    for stage in STAGES:
        sub = subcommands.add_parser(stage)
        sub.add_argument("--config", type=Path, default=None, help="JSON run configuration")
        sub.add_argument("--seed", type=int, default=None, help="Override every seed")
        if stage == "report":
            sub.add_argument("run_dirs", nargs="*", type=Path, help="Finished run directories")
            sub.add_argument("--out", type=Path, default=None, help="Output directory of the averaged summary")
        else:
            sub.add_argument("--out", type=Path, required=True, help="Run directory")
    return parser


def _config_for(args: argparse.Namespace) -> RunConfig:
    path = args.config
    if path is None and args.command not in ("gen-data", "run"):
        path = args.out / CONFIG_FILE
    return load_run_config(path, args.seed)


# ========== COMMAND DISPATCH ==========

def run_command(args: argparse.Namespace) -> None:
    if args.command == "report":
        run_dirs: List[Path] = args.run_dirs or ([args.out] if args.out is not None else [])
        if not run_dirs:
            raise ConfigError("report needs at least one run directory")
        out = args.out if args.run_dirs else None
        for path in cmd_report(run_dirs, out):
            logger.debug(f"Wrote {path}")
        return

    config = _config_for(args)
    if args.command == "gen-data":
        cmd_gen_data(config, args.out)
    elif args.command == "train-radar":
        cmd_train_radar(config, args.out)
    elif args.command == "train-fusion":
        cmd_train_fusion(config, args.out)
    else:
        report = cmd_eval(config, args.out) if args.command == "eval" else cmd_run(config, args.out)
        for line in summary_lines(report):
            print(line)


def main(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv``, run the stage and return the process exit code."""
    configure_logging()
    try:
        args = build_parser().parse_args(argv)
        run_command(args)
    except YodarError as e:
        logger.error(f"{type(e).__name__}: {str(e)}")
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
