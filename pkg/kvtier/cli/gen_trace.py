"""
Trace Generation Command
kvtier gen-trace - Write a seeded synthetic decode trace.
"""
import argparse

from pydantic import ValidationError

from kvtier.config import TRACE_PRESETS
from kvtier.schemas.errors import SpecError, format_validation_error
from kvtier.schemas.trace import SynthTraceSpec
from kvtier.services.trace import summarize_trace, synthesize_trace, write_trace

DEFAULT_CHURN = TRACE_PRESETS["low-variation"]["churn"]


def preset_help() -> str:
    presets = "; ".join(
        f"{key}: {p['name']}, churn {p['churn']:g}. {p['description']}" for key, p in sorted(TRACE_PRESETS.items())
    )
    return f"Named churn setting, --churn overrides it ({presets})"


def add_header_arguments(parser: argparse.ArgumentParser) -> None:
    """Trace-header flags shared with convert-scores."""
    parser.add_argument("--layers", type=int, default=4, help="Transformer layers L")
    parser.add_argument("--prompt-len", type=int, default=2048, help="Prefill tokens P")
    parser.add_argument("--decode-len", type=int, default=512, help="Decode tokens N")
    parser.add_argument("--entry-bytes", type=int, default=4096, help="Bytes of one KV entry")
    parser.add_argument("--weight-bytes", type=int, default=0, help="Weight bytes per layer")


def header_fields(args: argparse.Namespace) -> dict:
    return {
        "num_layers": args.layers,
        "prompt_len": args.prompt_len,
        "decode_len": args.decode_len,
        "entry_bytes": args.entry_bytes,
        "weight_bytes_per_layer": args.weight_bytes,
    }


def register(subparsers, common: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser(
        "gen-trace",
        parents=[common],
        help="Write a synthetic trace",
        description="Generate a seeded synthetic trace and print its summary.",
    )
    parser.add_argument("--out", required=True, help="Destination trace file")
    parser.add_argument("--preset", choices=sorted(TRACE_PRESETS), default=None,
                        help=preset_help())
    parser.add_argument("--sparsity", type=float, default=0.6, help="Fraction of past tokens skipped per step")
    parser.add_argument("--churn", type=float, default=None, help="Fraction of the important set replaced per step")
    parser.add_argument("--per-layer", action="store_true", help="Evolve an independent important set per layer")
    add_header_arguments(parser)
    parser.set_defaults(handler=cmd_gen_trace)


def cmd_gen_trace(args: argparse.Namespace) -> int:
    churn = args.churn
    if churn is None:
        churn = TRACE_PRESETS[args.preset]["churn"] if args.preset else DEFAULT_CHURN
    try:
        spec = SynthTraceSpec(
            header=header_fields(args),
            sparsity=args.sparsity,
            churn=churn,
            per_layer_independent=args.per_layer,
            seed=args.seed if args.seed is not None else 0,
        )
    except ValidationError as exc:
        raise SpecError(format_validation_error(exc))

    trace = synthesize_trace(spec)
    write_trace(trace, args.out)
    summary = summarize_trace(trace)
    if not args.quiet:
        print(f"trace: {args.out}")
        if args.preset and args.churn is None:
            print(f"preset: {TRACE_PRESETS[args.preset]['name']}")
        print(f"steps: {summary.steps}")
        print(f"kv_footprint_bytes: {summary.kv_footprint_bytes}")
        print(f"mean_set_size: {summary.mean_set_size:.2f}")
        print(f"mean_jaccard: {summary.mean_jaccard:.4f}")
    return 0
