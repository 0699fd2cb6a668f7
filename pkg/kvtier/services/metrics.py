"""
Metrics Service
Aggregates per-step records into the reported quantities: total latency,
tokens/s, normalized throughput, HBM hit rate and traffic totals.
"""
import hashlib
import json
import math
import operator
from dataclasses import asdict, dataclass, field, fields
from functools import reduce
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import pandas as pd

from kvtier.schemas.errors import ComparisonError
from kvtier.schemas.memory import MemoryConfig
from kvtier.schemas.trace import TraceHeader
from kvtier.services.memory_model import StepTraffic
from kvtier.services.simulator import StepRecord
from kvtier.services.trace import DecodeTrace

TRAFFIC_FIELDS = ("hbm_read", "hbm_write", "dram_read", "dram_write", "migrate_out", "migrate_in")
PER_STEP_COLUMNS = ("n", "l", "t_hbm", "t_dram", "t_step") + TRAFFIC_FIELDS + ("hits", "misses")


@dataclass
class SimulationReport:
    """Outcome of one policy run."""
    policy: str
    total_latency: float
    decode_tokens: int
    tokens_per_sec: float
    hbm_hit_rate: float
    hbm_read: int
    hbm_write: int
    dram_read: int
    dram_write: int
    migrate_out: int
    migrate_in: int
    weights_read: int
    hits: int
    misses: int
    setup_fingerprint: str = ""
    fingerprint: str = ""
    per_step: Optional[List[StepRecord]] = field(default=None, repr=False, compare=False)

    def to_row(self) -> Dict[str, Any]:
        """Flat CSV row (per-step detail excluded)."""
        row = asdict(self)
        row.pop("per_step")
        return row

    def to_kv_block(self) -> str:
        """`key=value` lines, one per field."""
        return "\n".join(f"{k}={_format(v)}" for k, v in self.to_row().items()) + "\n"


def _format(value: Any) -> str:
    return repr(value) if isinstance(value, float) else str(value)


# ============================================================================
# Fingerprints
# ============================================================================

def setup_fingerprint(trace: DecodeTrace, cfg: MemoryConfig) -> str:
    """Hash of trace content and memory system; equal setups may be compared."""
    payload = json.dumps({"trace": trace.digest, "memory": cfg.model_dump()}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def fingerprint(trace: DecodeTrace, cfg: MemoryConfig, policy: Union[str, Dict[str, Any]], seed: int) -> str:
    """Hash of (trace, memory system, policy kind + parameters, seed)."""
    payload = json.dumps(
        {"setup": setup_fingerprint(trace, cfg), "policy": policy, "seed": seed},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


# ============================================================================
# Aggregation
# ============================================================================

def summarize(
    records: Sequence[StepRecord],
    header: TraceHeader,
    policy: str = "",
    setup: str = "",
    run: str = "",
    keep_per_step: bool = False,
) -> SimulationReport:
    """
    Build a report from per-step records.

    Args:
        records: Output of simulate()
        header: Header of the simulated trace
        policy: Policy label
        setup: Setup fingerprint (trace + memory)
        run: Run fingerprint
        keep_per_step: Keep the records on the report for per-step CSV output
    """
    traffic = reduce(operator.add, (r.traffic for r in records), StepTraffic())
    totals = {name: getattr(traffic, name) for name in TRAFFIC_FIELDS}
    weights_read = header.weight_bytes_per_layer * len(records)
    total = math.fsum(r.t_step for r in records)
    kv_hbm = totals["hbm_read"] - weights_read
    kv_read = kv_hbm + totals["dram_read"]
    return SimulationReport(
        policy=policy,
        total_latency=total,
        decode_tokens=header.decode_len,
        tokens_per_sec=header.decode_len / total if total > 0 else math.inf,
        hbm_hit_rate=kv_hbm / kv_read if kv_read else 1.0,
        weights_read=weights_read,
        hits=sum(r.hits for r in records),
        misses=sum(r.misses for r in records),
        setup_fingerprint=setup,
        fingerprint=run,
        per_step=list(records) if keep_per_step else None,
        **totals,
    )


def normalize(report: SimulationReport, baseline: SimulationReport) -> float:
    """Throughput of `report` relative to `baseline` on the same trace and memory system."""
    if report.setup_fingerprint != baseline.setup_fingerprint:
        raise ComparisonError(
            f"cannot compare {report.policy} with {baseline.policy}: different trace or memory system",
            {"report": report.setup_fingerprint, "baseline": baseline.setup_fingerprint},
        )
    return report.tokens_per_sec / baseline.tokens_per_sec


# ============================================================================
# CSV
# ============================================================================

REPORT_COLUMNS = tuple(f.name for f in fields(SimulationReport) if f.name != "per_step")


def reports_frame(reports: Iterable[SimulationReport], extra: Optional[List[Dict[str, Any]]] = None) -> pd.DataFrame:
    """One row per report; `extra` adds leading columns (sweep point) row by row."""
    rows = []
    for i, report in enumerate(reports):
        row = dict(extra[i]) if extra else {}
        row.update(report.to_row())
        rows.append(row)
    return pd.DataFrame(rows)


def write_reports(frame: pd.DataFrame, path: Union[str, Path]) -> None:
    frame.to_csv(path, index=False, lineterminator="\n")


def write_kv_blocks(
    reports: Sequence[SimulationReport],
    path: Union[str, Path],
    extra: Optional[List[Dict[str, Any]]] = None,
) -> None:
    """One `key=value` block per report, blank-line separated; `extra` lines lead each block."""
    blocks = []
    for i, report in enumerate(reports):
        lead = "".join(f"{k}={_format(v)}\n" for k, v in (extra[i] if extra else {}).items())
        blocks.append(lead + report.to_kv_block())
    with open(path, "w", encoding="utf-8", newline="\n") as out:
        out.write("\n".join(blocks))


def read_reports(path: Union[str, Path]) -> List[SimulationReport]:
    """Parse a report CSV back into SimulationReports (extra columns ignored)."""
    frame = pd.read_csv(
        path,
        float_precision="round_trip",
        dtype={"setup_fingerprint": str, "fingerprint": str, "policy": str},
        keep_default_na=False,
    )
    reports = []
    for row in frame.to_dict(orient="records"):
        values = {}
        for f in fields(SimulationReport):
            if f.name == "per_step":
                continue
            raw = row[f.name]
            if f.type in ("int", int):
                values[f.name] = int(raw)
            elif f.type in ("float", float):
                values[f.name] = float(raw)
            else:
                values[f.name] = str(raw)
        reports.append(SimulationReport(**values))
    return reports


def per_step_frame(records: Sequence[StepRecord]) -> pd.DataFrame:
    """One row per (n, l) with latencies and traffic."""
    rows = [
        {
            "n": r.n,
            "l": r.l,
            "t_hbm": r.t_hbm,
            "t_dram": r.t_dram,
            "t_step": r.t_step,
            **{name: getattr(r.traffic, name) for name in TRAFFIC_FIELDS},
            "hits": r.hits,
            "misses": r.misses,
        }
        for r in records
    ]
    return pd.DataFrame(rows, columns=list(PER_STEP_COLUMNS))
