# app.py

import argparse
import logging
import sys

from modules.errors import (
    ConfigError, DatasetError, DetectorError, EvaluationError, GramFactorizationError, IrregularityError, StageError,
)

# --- Import Command Modules ---
from commands import cmd_detect_train, cmd_eval, cmd_gp_fit, cmd_run, cmd_score, cmd_score_proposals, cmd_synth

COMMANDS = (cmd_synth, cmd_detect_train, cmd_score_proposals, cmd_gp_fit, cmd_score, cmd_eval, cmd_run)

logger = logging.getLogger("irregularity")

EXIT_CODES_EPILOG = f"""exit codes:
  0  success
  1  unexpected error
  {DatasetError.exit_code}  malformed dataset or protocol violation
  {ConfigError.exit_code}  invalid configuration
  {DetectorError.exit_code}  detector training or loading failed
  {GramFactorizationError.exit_code}  covariance matrix could not be factorized
  {EvaluationError.exit_code}  evaluation failed (e.g. a test image has no score)
  {StageError.exit_code}  a pipeline stage failed for another reason
"""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="irregularity",
        description="Find irregular object images with GP models of region detection scores.",
        epilog=EXIT_CODES_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", default=None, help="TOML config file; flags override its keys")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def setup_logging(verbose: bool = False, quiet: bool = False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="[%(levelname)s] %(message)s", force=True)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose, args.quiet)
    try:
        return args.func(args)
    except IrregularityError as e:
        logger.error("❌ %s", e)
        return e.exit_code
    except Exception:
        logger.exception("❌ Unexpected error")
        return 1


if __name__ == "__main__":
    sys.exit(main())
