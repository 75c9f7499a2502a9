"""
paraling - command-line driver

Subcommands: extract, train, predict, fuse, saliency, evaluate. Every
subcommand accepts --config FILE, repeated --set section.key=value overrides,
--log-level and --metrics-file. Command flags (paths, variants, saliency
targets) are config keys too and rank with --set above the config file, so
the config.resolved.txt a command writes is enough to run it again.

Exit codes: 0 success, 1 data error, 2 configuration error, 3 numeric failure.
"""

import argparse
import logging
import sys
from typing import List, Optional

from dotenv import load_dotenv

from src.cli.commands import evaluate, extract, fuse, predict, saliency, train
from src.core.errors import ConfigError, ParalingError, map_exception_to_exit_code
from src.models.config import load_config
from src.utils.logging_config import configure_logging
from src.utils.metrics import write_metrics_file

logger = logging.getLogger(__name__)

COMMANDS = (extract, train, predict, fuse, saliency, evaluate)


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="Config file of 'section.key = value' lines")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override one config key (repeatable; highest precedence)",
    )
    common.add_argument("--log-level", default="INFO", help="Logging level (default: INFO)")
    common.add_argument("--plain-logs", action="store_true", help="Plain log lines instead of rich output")
    common.add_argument("--metrics-file", default=None, help="Write Prometheus run metrics to this file")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="paraling",
        description="End-to-end paralinguistic classification and regression toolkit",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    common = _common_options()
    for command in COMMANDS:
        command.register(subparsers, common)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, resolve the config and run one subcommand; returns the exit code"""
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse usage errors are configuration errors
        return 0 if e.code == 0 else ConfigError.exit_code

    configure_logging(args.log_level, use_rich=not args.plain_logs)
    try:
        cfg = load_config(args.config, [*args.overrides, *args.flag_overrides(args)])
        code = args.func(args, cfg)
    except ParalingError as e:
        logger.error(f"{args.command} failed: {e}")
        code = map_exception_to_exit_code(e)
    except Exception as e:
        logger.error(f"{args.command} failed unexpectedly: {e}", exc_info=True)
        code = map_exception_to_exit_code(e)
    finally:
        if args.metrics_file:
            write_metrics_file(args.metrics_file)

    return code


if __name__ == "__main__":
    sys.exit(main())
