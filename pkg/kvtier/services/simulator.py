"""
Simulation Driver
Runs one placement policy over a decode trace and records per-step traffic
and latency.
"""
import logging
from dataclasses import dataclass
from typing import List

from kvtier.config import get_settings
from kvtier.schemas.errors import CapacityError, InfeasibleDecisionError
from kvtier.schemas.memory import MemoryConfig
from kvtier.services.memory_model import StepTraffic, check_capacity, step_latencies
from kvtier.services.placement import apply_decision, initial_placement, read_traffic
from kvtier.services.policies import PlacementPolicy
from kvtier.services.trace import DecodeTrace

logger = logging.getLogger("kvtier")


@dataclass(frozen=True)
class StepRecord:
    """Traffic and latency of one (n, l) step."""
    n: int
    l: int
    traffic: StepTraffic
    t_hbm: float
    t_dram: float
    t_step: float
    hits: int
    misses: int


def simulate(
    trace: DecodeTrace,
    cfg: MemoryConfig,
    policy: PlacementPolicy,
    audit_interval: int = 0,
) -> List[StepRecord]:
    """
    Walk every (n, l) step: decide, apply, read, time.

    Args:
        trace: Decode trace
        cfg: Memory system
        policy: Policy runner bound to `trace`
        audit_interval: Steps between full recounts of HBM residency
            (0 uses the configured default)

    Returns:
        One StepRecord per step, in (n, l) order

    Raises:
        CapacityError: DRAM cannot hold the trace's KV footprint, or weights exceed HBM
        InfeasibleDecisionError: a policy decision overflows HBM
    """
    header = trace.header
    if header.kv_footprint_bytes > cfg.dram_capacity:
        raise CapacityError(
            f"DRAM capacity {cfg.dram_capacity} B cannot hold the KV footprint "
            f"{header.kv_footprint_bytes} B"
        )
    audit_every = audit_interval or get_settings().audit_interval

    state = initial_placement(header, policy.kind, cfg)
    records = []
    for ordinal, access in enumerate(trace.steps, start=1):
        step = (access.n, access.l)
        decision = policy.decide(state, access)
        moved = apply_decision(state, decision, step)
        reads = read_traffic(state, access, header.weight_bytes_per_layer)

        if policy.capacity_bound and not check_capacity(state.hbm_resident_bytes, cfg).feasible:
            raise InfeasibleDecisionError(
                f"{policy.kind}: HBM over capacity after step {step}",
                {"policy": policy.kind, "n": step[0], "l": step[1]},
            )
        if ordinal % audit_every == 0:
            state.audit()
            logger.debug(f"Audit: {{'policy': '{policy.kind}', 'step': {step}, 'hbm_entries': {state.hbm_entries}}}")

        traffic = StepTraffic(
            hbm_read=reads.hbm_read,
            hbm_write=moved.hbm_write,
            dram_read=reads.dram_read,
            dram_write=moved.dram_write,
            migrate_out=moved.migrate_out,
            migrate_in=moved.migrate_in,
        )
        th, te, t = step_latencies(traffic, cfg)
        records.append(StepRecord(access.n, access.l, traffic, th, te, t, reads.hits, reads.misses))
    return records
