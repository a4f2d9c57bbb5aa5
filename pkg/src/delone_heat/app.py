"""Command-line entry point for delone-heat.

``delone-heat --config CFG run`` executes every stage; naming a stage runs just
that one against the files already in the output directory. Exit status is 0
when every enabled check passes, 1 on a failed check, 2 on invalid input and 3
on a numerical or otherwise unexpected failure.
"""

from __future__ import annotations

import argparse
import importlib.metadata
import json
import logging
import sys
from pathlib import Path

from .config import get_settings, settings_override
from .exceptions import ConfigError, DeloneHeatException, NumericalError
from .logging import configure_logging, get_logger
from .pipeline import STAGES, Pipeline, config_schema, load_config
from .utils import format_error_message, log_exception

logger = get_logger(__name__)

COMMANDS = ("run", *STAGES, "schema")
ANALYSIS_FLAGS = ("vd", "pi", "ge")


def _version() -> str:
    try:
        return importlib.metadata.version("delone-heat")
    except importlib.metadata.PackageNotFoundError:
        return get_settings().version


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="delone-heat",
        description="Neighbor relations, graphs and heat kernels on Delone sets, with checks of the Gaussian bounds.",
    )
    parser.add_argument("command", nargs="?", choices=COMMANDS, default="run", help="pipeline stage (default: run)")
    parser.add_argument("--config", type=Path, help="experiment configuration JSON")
    parser.add_argument("--out", type=Path, help="output directory (overrides the config)")
    parser.add_argument("--threads", type=int, help="cap on worker threads")
    parser.add_argument("--seed", type=int, help="replace every seed in the config")
    parser.add_argument("--stage", choices=COMMANDS, help="same as the positional command")
    for flag in ANALYSIS_FLAGS:
        parser.add_argument(f"--{flag}", action="store_true", help=f"analyze: restrict to the {flag.upper()} check")
    parser.add_argument("--version", "-V", action="version", version=f"delone-heat {_version()}")
    return parser


def _configure_logging() -> None:
    settings = get_settings()
    level = getattr(logging, settings.log_level.upper(), logging.INFO)
    configure_logging(level=level, json_format=settings.log_json)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging()
    command = args.stage or args.command
    if command == "schema":
        print(json.dumps(config_schema(), indent=2, sort_keys=True))
        return 0
    try:
        if args.config is None:
            raise ConfigError(f"'{command}' needs --config")
        overrides: dict[str, int] = {}
        if args.threads is not None:
            if not 1 <= args.threads <= 64:
                raise ConfigError(f"--threads must lie in 1..64, got {args.threads}")
            overrides["max_workers"] = args.threads
        config = load_config(args.config)
        if args.seed is not None:
            config = config.with_seed(args.seed)
        pipeline = Pipeline(config, args.out)
        with settings_override(**overrides):
            if command == "run":
                report = pipeline.run()
            else:
                only = {flag for flag in ANALYSIS_FLAGS if getattr(args, flag)} or None
                report = pipeline.run_stage(command, only)
        if report is not None:
            print(report.summary())
            report.raise_for_failures()
        logger.info("finished", command=command, out=str(pipeline.out))
    except DeloneHeatException as e:
        log_exception(e, context=command)
        print(format_error_message(e, context=command), file=sys.stderr)
        return e.exit_code
    except Exception as e:
        # numpy/scipy failures (LinAlgError, ArpackNoConvergence, ...) are numerical, not failed checks
        logger.exception("unexpected failure", context=command, error_type=type(e).__name__)
        print(format_error_message(e, context=command), file=sys.stderr)
        return NumericalError.exit_code
    return 0


def run() -> None:
    """Entry point for the console script."""
    sys.exit(main())


if __name__ == "__main__":
    run()
