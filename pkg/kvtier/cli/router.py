"""
CLI Router
Aggregates the subcommands and maps errors to exit codes.
"""
import argparse
import sys
from typing import List, Optional

from kvtier import __version__
from kvtier.cli import convert_scores, gen_trace, run
from kvtier.cli.log import configure_logging, logger
from kvtier.schemas.errors import ErrorCodes, ErrorDetail, EXIT_CODES, KVTierError


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--jobs", type=int, default=1, help="Sweep points run in parallel")
    common.add_argument("--seed", type=int, default=None, help="Overrides the config / generator seed")
    common.add_argument("--per-step", action="store_true", help="Also write per-step CSVs")
    common.add_argument("--quiet", action="store_true", help="Log warnings and errors only")
    common.add_argument("--verbose", action="store_true", help="Log search progress and audits")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kvtier",
        description="Two-tier (HBM + DRAM) KV-cache placement simulator and optimizer.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    # Include subcommands
    common = _common_flags()
    run.register(subparsers, common)
    gen_trace.register(subparsers, common)
    convert_scores.register(subparsers, common)
    return parser


def _report(detail: ErrorDetail) -> int:
    print(detail.model_dump_json(), file=sys.stderr)
    return detail.exit_code


def dispatch(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments and run the selected subcommand.

    Returns:
        0 on success, 2 for configuration or input errors, 3 when a
        simulation is infeasible, 1 for anything unexpected
    """
    args = build_parser().parse_args(argv)
    configure_logging(quiet=args.quiet, verbose=args.verbose)
    if args.jobs < 1:
        return _report(ErrorDetail(
            code=ErrorCodes.CONFIG_INVALID,
            message="--jobs must be >= 1",
            exit_code=EXIT_CODES[ErrorCodes.CONFIG_INVALID],
            context={"jobs": args.jobs},
        ))

    try:
        return args.handler(args)
    except KVTierError as exc:
        return _report(exc.detail())
    except Exception as exc:
        logger.exception(f"Unhandled error in {args.command}")
        return _report(ErrorDetail(
            code=ErrorCodes.INTERNAL_ERROR,
            message=str(exc) or type(exc).__name__,
            exit_code=EXIT_CODES[ErrorCodes.INTERNAL_ERROR],
        ))
