"""
Run Command
kvtier run <config> - Run an experiment file and write its CSV artifacts.
"""
import argparse

from kvtier.services.experiment import load_config, run_experiment, with_seed


def register(subparsers, common: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser(
        "run",
        parents=[common],
        help="Run an experiment file",
        description="Simulate every policy on every sweep point and write reports.csv, reports.kv, "
                    "comparison.csv, search logs and optional per-step CSVs.",
    )
    parser.add_argument("config", help="Path of the JSON experiment file")
    parser.add_argument("--output-dir", default=None, help="Overrides output_dir from the config")
    parser.set_defaults(handler=cmd_run)


def cmd_run(args: argparse.Namespace) -> int:
    """Load, run, print the comparison table."""
    config = load_config(args.config)
    if args.seed is not None:
        config = with_seed(config, args.seed)

    result = run_experiment(
        config,
        jobs=args.jobs,
        per_step=args.per_step,
        output_dir=args.output_dir,
    )
    if not args.quiet:
        print(result.comparison.to_string(index=False))
        print(f"\nwrote {len(result.files)} files to {result.output_dir}")
    return 0
