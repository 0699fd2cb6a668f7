"""
Experiment Service
Loads an experiment file, runs every policy on every sweep point and writes
the report, comparison, search-log and per-step CSVs plus the key=value
report blocks.
"""
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import pandas as pd
from pydantic import TypeAdapter, ValidationError

from kvtier.cli.log import log_run
from kvtier.schemas.errors import ConfigError, KVTierError, TraceNotFoundError, format_validation_error
from kvtier.schemas.experiment import (
    ExperimentConfig,
    SAGuidedPolicy,
    Seed,
    StaticPolicy,
    UnlimitedPolicy,
)
from kvtier.schemas.trace import SynthTraceSpec
from kvtier.services.metrics import (
    SimulationReport,
    fingerprint,
    normalize,
    per_step_frame,
    reports_frame,
    setup_fingerprint,
    summarize,
    write_kv_blocks,
    write_reports,
)
from kvtier.services.policies import LookaheadRunner, make_policy
from kvtier.services.sa_optimizer import run_sa
from kvtier.services.simulator import simulate
from kvtier.services.trace import DecodeTrace, read_trace, synthesize_trace

logger = logging.getLogger("kvtier")

REPORTS_FILE = "reports.csv"
COMPARISON_FILE = "comparison.csv"
REPORT_BLOCKS_FILE = "reports.kv"

_SEED = TypeAdapter(Seed)


# ============================================================================
# Configuration
# ============================================================================

def parse_config(data: Dict[str, Any], base_dir: Optional[Path] = None) -> ExperimentConfig:
    """
    Validate an experiment document.

    A relative trace path is resolved against `base_dir` (the config file's
    directory).

    Raises:
        ConfigError: validation failed; the message lists field paths
        TraceNotFoundError: the referenced trace file does not exist
    """
    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(
            format_validation_error(exc),
            {"fields": [".".join(str(p) for p in err["loc"]) for err in exc.errors()]},
        )
    _check_sweep_values(config)
    path = config.trace_path
    if path is not None:
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        if not path.is_file():
            raise TraceNotFoundError(str(path))
        config = config.model_copy(update={"trace": str(path)})
    return config


def _check_sweep_values(config: ExperimentConfig) -> None:
    """Every sweep value must produce a valid synthetic trace spec."""
    if config.sweep is None:
        return
    fields, lines = [], []
    for i, value in enumerate(config.sweep.values):
        try:
            config.trace.with_axis(config.sweep.axis, value)
        except ValidationError as exc:
            loc = f"sweep.values.{i}"
            fields.append(loc)
            lines.extend(f"{loc}: {err.get('msg', 'invalid value')}" for err in exc.errors())
    if fields:
        raise ConfigError("; ".join(lines), {"fields": fields})


def with_seed(config: ExperimentConfig, seed: int) -> ExperimentConfig:
    """Copy of the config with the experiment seed replaced, range-checked."""
    try:
        seed = _SEED.validate_python(seed)
    except ValidationError as exc:
        raise ConfigError(f"seed: {exc.errors()[0]['msg']}", {"fields": ["seed"], "seed": seed})
    return config.model_copy(update={"seed": seed})


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read and validate a JSON experiment file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}", {"path": str(path)})
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc.msg}", {"line": exc.lineno, "column": exc.colno})
    return parse_config(data, base_dir=path.parent)


# ============================================================================
# Sweep points
# ============================================================================

@dataclass(frozen=True)
class SweepPoint:
    index: int
    axis: Optional[str]
    value: Optional[float]
    trace: Union[SynthTraceSpec, str]

    @property
    def columns(self) -> Dict[str, Any]:
        return {"sweep_axis": self.axis, "sweep_value": self.value} if self.axis else {}

    @property
    def tag(self) -> str:
        """Suffix that keeps file names unique per point."""
        return f"_{self.axis}{self.value:g}" if self.axis else ""


@dataclass
class PointResult:
    point: SweepPoint
    reports: List[SimulationReport]
    comparison: List[Dict[str, Any]]
    sa_logs: Dict[str, pd.DataFrame] = field(default_factory=dict)
    per_step: Dict[str, pd.DataFrame] = field(default_factory=dict)


@dataclass
class ExperimentResult:
    output_dir: Path
    reports: pd.DataFrame
    comparison: pd.DataFrame
    files: List[Path]


def sweep_points(config: ExperimentConfig) -> List[SweepPoint]:
    if config.sweep is None:
        return [SweepPoint(0, None, None, config.trace)]
    return [
        SweepPoint(i, config.sweep.axis, value, config.trace.with_axis(config.sweep.axis, value))
        for i, value in enumerate(config.sweep.values)
    ]


def load_point_trace(point: SweepPoint) -> DecodeTrace:
    if isinstance(point.trace, SynthTraceSpec):
        return synthesize_trace(point.trace)
    return read_trace(point.trace)


def run_point(config: ExperimentConfig, point: SweepPoint, per_step: bool = False) -> PointResult:
    """
    Simulate every configured policy on one sweep point.

    Static and Unlimited are also run as comparison baselines when the
    experiment does not list them.
    """
    trace = load_point_trace(point)
    cfg = config.memory
    setup = setup_fingerprint(trace, cfg)
    result = PointResult(point=point, reports=[], comparison=[])

    baselines: Dict[str, SimulationReport] = {}
    specs = list(config.policies)
    for extra in (StaticPolicy(), UnlimitedPolicy()):
        if all(spec.kind != extra.kind for spec in specs):
            specs.append(extra)

    for position, spec in enumerate(specs):
        listed = position < len(config.policies)
        params = spec.model_dump()
        with log_run("simulate", policy=spec.label, point=point.index) as run_info:
            try:
                if isinstance(spec, SAGuidedPolicy):
                    with log_run("sa_search", point=point.index) as search_info:
                        search = run_sa(trace, cfg, config.sa_config())
                        search_info.update({"best": tuple(search.best), "stop": search.stop_reason})
                    params.update({"window": search.best.window, "ratio": search.best.ratio})
                    runner = LookaheadRunner(trace, search.best.window, search.best.ratio)
                    result.sa_logs[f"sa_log{point.tag}.csv"] = search.log_frame()
                else:
                    runner = make_policy(spec, trace)
                records = simulate(trace, cfg, runner)
            except KVTierError as exc:
                exc.context.setdefault("policy", spec.label)
                raise
            report = summarize(
                records,
                trace.header,
                policy=spec.label,
                setup=setup,
                run=fingerprint(trace, cfg, params, config.seed),
            )
            run_info["tokens_per_sec"] = report.tokens_per_sec

        if spec.kind in ("static", "unlimited"):
            baselines.setdefault(spec.kind, report)
        if listed:
            result.reports.append(report)
            if per_step:
                result.per_step[f"per_step{point.tag}_{position}_{spec.kind}.csv"] = per_step_frame(records)

    for report in result.reports:
        result.comparison.append({
            **point.columns,
            "policy": report.policy,
            "vs_static": normalize(report, baselines["static"]),
            "vs_unlimited": normalize(report, baselines["unlimited"]),
            "hbm_hit_rate": report.hbm_hit_rate,
        })
    return result


def _run_point_job(args: Tuple[ExperimentConfig, SweepPoint, bool]) -> PointResult:
    return run_point(*args)


# ============================================================================
# Driver
# ============================================================================

def run_experiment(
    config: ExperimentConfig,
    jobs: int = 1,
    per_step: bool = False,
    output_dir: Optional[Union[str, Path]] = None,
) -> ExperimentResult:
    """
    Run every sweep point x policy and write the CSV artifacts.

    Points run in a process pool when jobs > 1; outputs are assembled in
    point order so files are byte-identical for any `jobs`.

    Args:
        config: Validated experiment
        jobs: Worker processes for sweep points
        per_step: Also write one per-step CSV per (point, policy)
        output_dir: Overrides config.output_dir
    """
    out = Path(output_dir if output_dir is not None else config.output_dir)
    points = sweep_points(config)
    tasks = [(config, point, per_step) for point in points]

    with log_run("experiment", points=len(points), policies=len(config.policies), jobs=jobs):
        if jobs > 1 and len(points) > 1:
            with ProcessPoolExecutor(max_workers=min(jobs, len(points))) as pool:
                results = list(pool.map(_run_point_job, tasks))
        else:
            results = [_run_point_job(task) for task in tasks]

    out.mkdir(parents=True, exist_ok=True)
    files = []

    listed = [r for res in results for r in res.reports]
    columns = [res.point.columns for res in results for _ in res.reports]
    reports = reports_frame(listed, columns)
    write_reports(reports, out / REPORTS_FILE)
    files.append(out / REPORTS_FILE)
    write_kv_blocks(listed, out / REPORT_BLOCKS_FILE, columns)
    files.append(out / REPORT_BLOCKS_FILE)

    comparison = pd.DataFrame([row for res in results for row in res.comparison])
    write_reports(comparison, out / COMPARISON_FILE)
    files.append(out / COMPARISON_FILE)

    for res in results:
        for name, frame in {**res.sa_logs, **res.per_step}.items():
            write_reports(frame, out / name)
            files.append(out / name)

    logger.info(f"Artifacts: {{'output_dir': '{out}', 'files': {len(files)}}}")
    return ExperimentResult(output_dir=out, reports=reports, comparison=comparison, files=files)
