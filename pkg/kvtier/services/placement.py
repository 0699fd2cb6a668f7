"""
Placement State
Tier residency of every KV entry, decision application with capacity
enforcement, and per-step read accounting.

Entries are addressed by a flat index `layer * max_tokens + token` so that a
whole layer is a contiguous slice of the residency arrays.
"""
import logging
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Tuple

import numpy as np

from kvtier.schemas.errors import CapacityError, InfeasibleDecisionError, PlacementLogicError
from kvtier.schemas.memory import MemoryConfig
from kvtier.schemas.trace import TraceHeader
from kvtier.services.memory_model import StepTraffic

logger = logging.getLogger("kvtier")

ABSENT = 0
HBM = 1
DRAM = 2

Step = Tuple[int, int]

_EMPTY = np.zeros(0, dtype=np.int64)
_EMPTY.setflags(write=False)


class EntryId(NamedTuple):
    token: int
    layer: int


@dataclass(frozen=True, eq=False)
class ScheduleDecision:
    """
    Migrations issued at one step plus the tier of the entry it writes.

    migrate_out / migrate_in hold flat entry indices.
    """
    migrate_out: np.ndarray = _EMPTY
    migrate_in: np.ndarray = _EMPTY
    new_entry_tier: int = HBM

    @classmethod
    def of(
        cls,
        state: "PlacementState",
        migrate_out: Iterable[EntryId] = (),
        migrate_in: Iterable[EntryId] = (),
        new_entry_tier: int = HBM,
    ) -> "ScheduleDecision":
        """Build a decision from EntryIds."""
        return cls(
            migrate_out=np.array([state.flat(e) for e in migrate_out], dtype=np.int64),
            migrate_in=np.array([state.flat(e) for e in migrate_in], dtype=np.int64),
            new_entry_tier=new_entry_tier,
        )

    @property
    def migrations(self) -> int:
        return int(self.migrate_out.size + self.migrate_in.size)


@dataclass(frozen=True)
class ReadTraffic:
    hbm_read: int
    dram_read: int
    hits: int
    misses: int


class PlacementState:
    """
    Where every KV entry lives during one simulation run.

    Not shared between runs; each policy run builds its own.
    """

    def __init__(self, header: TraceHeader, cfg: MemoryConfig, capacity_bound: bool = True):
        self.header = header
        self.cfg = cfg
        self.capacity_bound = capacity_bound
        self.max_tokens = header.max_tokens
        self.entry_bytes = header.entry_bytes
        self.weights_bytes = header.weights_bytes
        size = header.num_layers * self.max_tokens
        self.tier = np.full(size, ABSENT, dtype=np.int8)
        self.last_touch = np.full(size, -1, dtype=np.int64)
        self.hbm_entries = 0
        self.capacity_entries: Optional[int] = (
            cfg.kv_capacity_entries(self.weights_bytes, self.entry_bytes) if capacity_bound else None
        )

    # ------------------------------------------------------------------
    # Addressing
    # ------------------------------------------------------------------

    def flat(self, entry: EntryId) -> int:
        token, layer = entry
        if not (0 <= token < self.max_tokens and 0 <= layer < self.header.num_layers):
            raise PlacementLogicError(f"entry {tuple(entry)} outside the trace")
        return layer * self.max_tokens + token

    def entry_id(self, flat: int) -> EntryId:
        layer, token = divmod(int(flat), self.max_tokens)
        return EntryId(token=token, layer=layer)

    def layer_slice(self, l: int) -> slice:
        return slice(l * self.max_tokens, (l + 1) * self.max_tokens)

    def tier_of(self, entry: EntryId) -> int:
        return int(self.tier[self.flat(entry)])

    def ordinal(self, step: Step) -> int:
        n, l = step
        return n * self.header.num_layers + l

    def new_entry(self, step: Step) -> int:
        """Flat index of the entry written at (n, l): token P+n-1, layer l."""
        n, l = step
        return l * self.max_tokens + self.header.prompt_len + n - 1

    # ------------------------------------------------------------------
    # Occupancy
    # ------------------------------------------------------------------

    @property
    def hbm_kv_bytes(self) -> int:
        return self.hbm_entries * self.entry_bytes

    @property
    def hbm_resident_bytes(self) -> int:
        return self.weights_bytes + self.hbm_kv_bytes

    @property
    def entry_count(self) -> int:
        return int(np.count_nonzero(self.tier))

    def free_entries(self) -> int:
        """Whole entries HBM can still take; unbounded states report the total."""
        if self.capacity_entries is None:
            return self.tier.size
        return self.capacity_entries - self.hbm_entries

    def audit(self) -> None:
        """Recount HBM residents and compare with the running counter."""
        counted = int(np.count_nonzero(self.tier == HBM))
        if counted != self.hbm_entries:
            raise PlacementLogicError(
                f"hbm_kv_bytes drifted: counted {counted} entries, tracked {self.hbm_entries}"
            )
        logger.debug(f"Audit: {{'hbm_entries': {counted}}}")


def initial_placement(header: TraceHeader, policy_hint: str, cfg: MemoryConfig) -> PlacementState:
    """
    Place prefill entries in (token, layer) order: HBM until full, then DRAM.

    Args:
        header: Trace header (P, L, entry and weight sizes)
        policy_hint: Policy kind; "unlimited" ignores capacity and keeps everything in HBM
        cfg: Memory system

    Raises:
        CapacityError: weights alone exceed HBM capacity
    """
    capacity_bound = policy_hint != "unlimited"
    if capacity_bound and header.weights_bytes > cfg.hbm_capacity:
        raise CapacityError(
            f"model weights ({header.weights_bytes} B) exceed HBM capacity ({cfg.hbm_capacity} B)"
        )
    state = PlacementState(header, cfg, capacity_bound=capacity_bound)
    P, L, T = header.prompt_len, header.num_layers, state.max_tokens
    if P == 0:
        return state

    tokens = np.repeat(np.arange(P), L)
    layers = np.tile(np.arange(L), P)
    order = layers * T + tokens
    room = P * L if state.capacity_entries is None else min(P * L, state.capacity_entries)
    state.tier[order[:room]] = HBM
    state.tier[order[room:]] = DRAM
    state.last_touch[order] = 0
    state.hbm_entries = room
    return state


def apply_decision(state: PlacementState, decision: ScheduleDecision, step: Step) -> StepTraffic:
    """
    Apply migrations and the new write of step (n, l).

    Migrations land before the step's reads are accounted. Returns the
    migration/write part of the step's traffic.

    Raises:
        PlacementLogicError: a migrated entry is not where the decision says,
            or the new entry is not sent to HBM or DRAM
        InfeasibleDecisionError: HBM would exceed capacity
    """
    if decision.new_entry_tier not in (HBM, DRAM):
        raise PlacementLogicError(f"new entry at step {step} has no tier ({decision.new_entry_tier})")
    out_idx, in_idx = decision.migrate_out, decision.migrate_in
    if np.unique(out_idx).size != out_idx.size or np.unique(in_idx).size != in_idx.size:
        raise PlacementLogicError(f"duplicate entries in decision at step {step}")
    if np.intersect1d(out_idx, in_idx).size:
        raise PlacementLogicError(f"entry both promoted and demoted at step {step}")
    if out_idx.size and not np.all(state.tier[out_idx] == HBM):
        raise PlacementLogicError(f"migrate_out names a non-HBM entry at step {step}")
    if in_idx.size and not np.all(state.tier[in_idx] == DRAM):
        raise PlacementLogicError(f"migrate_in names a non-DRAM entry at step {step}")

    new_idx = state.new_entry(step)
    if state.tier[new_idx] != ABSENT:
        raise PlacementLogicError(f"entry for step {step} written twice")

    after = state.hbm_entries - out_idx.size + in_idx.size + (decision.new_entry_tier == HBM)
    if state.capacity_entries is not None and after > state.capacity_entries:
        raise InfeasibleDecisionError(
            f"decision at step {step} needs {after} HBM entries, capacity is {state.capacity_entries}",
            {"n": step[0], "l": step[1]},
        )

    state.tier[out_idx] = DRAM
    state.tier[in_idx] = HBM
    state.tier[new_idx] = decision.new_entry_tier
    state.last_touch[new_idx] = state.ordinal(step)
    state.hbm_entries = int(after)

    eb = state.entry_bytes
    to_hbm = decision.new_entry_tier == HBM
    return StepTraffic(
        hbm_write=eb if to_hbm else 0,
        dram_write=0 if to_hbm else eb,
        migrate_out=int(out_idx.size) * eb,
        migrate_in=int(in_idx.size) * eb,
    )


def read_traffic(state: PlacementState, access, weight_bytes_per_layer: int) -> ReadTraffic:
    """
    Bytes read from each tier by one step's attention, plus the layer's weights.

    Updates last_touch of every accessed entry.
    """
    step = (access.n, access.l)
    idx = state.layer_slice(access.l).start + access.accessed
    tiers = state.tier[idx]
    if np.any(tiers == ABSENT):
        raise PlacementLogicError(f"step {step} reads an entry that was never written")
    hits = int(np.count_nonzero(tiers == HBM))
    misses = int(tiers.size) - hits
    state.last_touch[idx] = state.ordinal(step)
    return ReadTraffic(
        hbm_read=weight_bytes_per_layer + hits * state.entry_bytes,
        dram_read=misses * state.entry_bytes,
        hits=hits,
        misses=misses,
    )
