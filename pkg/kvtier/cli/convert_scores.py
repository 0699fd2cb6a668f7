"""
Score Conversion Command
kvtier convert-scores - Turn recorded attention scores into a trace file.
"""
import argparse
from pathlib import Path

from pydantic import ValidationError

from kvtier.cli.gen_trace import add_header_arguments, header_fields
from kvtier.schemas.errors import SpecError, TraceNotFoundError, format_validation_error
from kvtier.schemas.trace import TraceHeader
from kvtier.services.trace import read_scores, scores_to_trace, write_trace


def register(subparsers, common: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser(
        "convert-scores",
        parents=[common],
        help="Convert an attention-score file to a trace",
        description="Keep the top (1 - sparsity) share of past tokens per step.",
    )
    parser.add_argument("--scores", required=True, help="Score file, `<n> <l> <s1>,<s2>,...` per line")
    parser.add_argument("--sparsity", type=float, required=True, help="Fraction of past tokens skipped per step")
    parser.add_argument("--out", required=True, help="Destination trace file")
    add_header_arguments(parser)
    parser.set_defaults(handler=cmd_convert_scores)


def cmd_convert_scores(args: argparse.Namespace) -> int:
    if not Path(args.scores).is_file():
        raise TraceNotFoundError(args.scores)
    try:
        header = TraceHeader(**header_fields(args))
    except ValidationError as exc:
        raise SpecError(format_validation_error(exc))

    trace = scores_to_trace(read_scores(args.scores), args.sparsity, header)
    write_trace(trace, args.out)
    if not args.quiet:
        print(f"trace: {args.out} ({len(trace.steps)} steps)")
    return 0
