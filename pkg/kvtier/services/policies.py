"""
Placement Policies
Unlimited HBM, static fill, reactive LRU, page-granularity lookahead and the
entry-granularity lookahead that the annealer tunes.

Every tie-break is a total order, so decisions are reproducible.
"""
import math
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from kvtier.schemas.experiment import (
    LookaheadPolicy,
    PagePolicy,
    ReactivePolicy,
    StaticPolicy,
    UnlimitedPolicy,
)
from kvtier.services.placement import (
    DRAM,
    HBM,
    EntryId,
    PlacementState,
    ScheduleDecision,
    Step,
)
from kvtier.services.trace import DecodeTrace, StepAccess

_NO_MOVES = np.zeros(0, dtype=np.int64)
_NO_MOVES.setflags(write=False)


def _ceil_share(ratio: float, count: int) -> int:
    return min(count, math.ceil(round(ratio * count, 9)))


def _smallest(keys: np.ndarray, count: int) -> np.ndarray:
    """Positions of the `count` smallest keys, in ascending key order."""
    if count <= 0:
        return _NO_MOVES
    if count < keys.size:
        part = np.argpartition(keys, count - 1)[:count]
        return part[np.argsort(keys[part], kind="stable")]
    return np.argsort(keys, kind="stable")


# ============================================================================
# Lookahead index
# ============================================================================

@dataclass(frozen=True, eq=False)
class LookaheadIndex:
    """
    Layer-l access counts over decode tokens n+1..n+W.

    `counts[token]` is the frequency; tokens with zero count are absent from
    the index.
    """
    layer: int
    n: int
    window: int
    counts: np.ndarray

    def frequency(self, token: int) -> int:
        return int(self.counts[token])

    def as_dict(self) -> Dict[EntryId, int]:
        tokens = np.flatnonzero(self.counts)
        return {EntryId(int(t), self.layer): int(self.counts[t]) for t in tokens}


def build_lookahead_index(trace: DecodeTrace, step: Step, window: int) -> LookaheadIndex:
    """Count layer-l accesses over steps n+1..min(n+W, N)."""
    n, l = step
    counts = np.zeros(trace.header.max_tokens, dtype=np.int64)
    for future in range(n + 1, min(n + window, trace.header.decode_len) + 1):
        counts[trace.step(future, l).accessed] += 1
    return LookaheadIndex(layer=l, n=n, window=window, counts=counts)


class SlidingLookahead:
    """
    Incrementally maintained lookahead windows, one per layer.

    Moving layer l from n-1 to n drops step n and adds step n+W; the counts
    equal build_lookahead_index at every step. An index handed out stays
    valid until the same layer advances.
    """

    def __init__(self, trace: DecodeTrace, window: int):
        self.trace = trace
        self.window = window
        header = trace.header
        self._counts = np.zeros((header.num_layers, header.max_tokens), dtype=np.int64)
        self._at = [0] * header.num_layers

    def _rebuild(self, n: int, l: int) -> None:
        row = self._counts[l]
        row[:] = 0
        for future in range(n + 1, min(n + self.window, self.trace.header.decode_len) + 1):
            row[self.trace.step(future, l).accessed] += 1

    def index(self, step: Step) -> LookaheadIndex:
        n, l = step
        at = self._at[l]
        if at == n - 1 and at >= 1:
            row = self._counts[l]
            row[self.trace.step(n, l).accessed] -= 1
            entering = n + self.window
            if entering <= self.trace.header.decode_len:
                row[self.trace.step(entering, l).accessed] += 1
        elif at != n:
            self._rebuild(n, l)
        self._at[l] = n
        return LookaheadIndex(layer=l, n=n, window=self.window, counts=self._counts[l])


# ============================================================================
# Baselines
# ============================================================================

def decide_unlimited(state: PlacementState, step: Step) -> ScheduleDecision:
    """Never migrate, always write to HBM (capacity is not enforced for this policy)."""
    return ScheduleDecision(new_entry_tier=HBM)


def decide_static(state: PlacementState, step: Step) -> ScheduleDecision:
    """Never migrate; write to HBM while it fits, DRAM afterwards."""
    return ScheduleDecision(new_entry_tier=HBM if state.free_entries() >= 1 else DRAM)


def decide_reactive(state: PlacementState, step: Step, access: StepAccess) -> ScheduleDecision:
    """
    Promote every accessed DRAM entry and evict least recently used entries.

    Victims are HBM entries of any layer not read at this step, ordered by
    (last_touch, flat index). When the step's own working set cannot fit,
    the new entry is placed first and the remaining room goes to the most
    recently indexed accessed entries; the rest is read from DRAM.
    """
    n, l = step
    base = state.layer_slice(l).start
    accessed = base + access.accessed
    accessed = accessed[accessed != state.new_entry(step)]
    missing = accessed[state.tier[accessed] == DRAM]

    free = state.free_entries()
    if missing.size + 1 <= free:
        return ScheduleDecision(migrate_in=missing, new_entry_tier=HBM)

    resident = np.flatnonzero(state.tier == HBM)
    pool = np.setdiff1d(resident, accessed, assume_unique=True)
    room = free + pool.size
    if room < 1:
        return ScheduleDecision(new_entry_tier=DRAM)

    promote = missing if missing.size + 1 <= room else missing[missing.size - (room - 1):]
    evict_count = promote.size + 1 - free
    keys = state.last_touch[pool] * state.tier.size + pool
    victims = pool[_smallest(keys, evict_count)]
    return ScheduleDecision(migrate_out=np.sort(victims), migrate_in=promote, new_entry_tier=HBM)


# ============================================================================
# Foresight policies
# ============================================================================

def _decide_units(
    state: PlacementState,
    step: Step,
    index: LookaheadIndex,
    ratio: float,
    page_size: int,
) -> ScheduleDecision:
    """
    Shared planner of the lookahead (page_size=1) and page policies.

    A unit is page_size consecutive tokens of layer l. Candidates are units
    with window frequency > 0 and at least one DRAM member, ranked by
    (frequency desc, unit desc); the top ceil(R * count) are promoted, trimmed
    from the tail to the room that demotions can make. Demotion victims are
    units with zero window frequency holding HBM members, ranked by their
    most recent member touch, then unit index. A hot new entry gets room
    before any promotion; with R = 0 nothing migrates.
    """
    n, l = step
    existing = state.header.prompt_len + n - 1
    free = state.free_entries()
    if ratio <= 0.0:
        return ScheduleDecision(new_entry_tier=HBM if free >= 1 else DRAM)

    layer = state.layer_slice(l)
    tier = state.tier[layer][:existing]
    freq = index.counts[:existing]
    new_hot = bool(index.counts[existing] > 0)

    unit_of = np.arange(existing) // page_size
    units = -(-existing // page_size)
    in_hbm = tier == HBM
    in_dram = tier == DRAM
    unit_freq = np.bincount(unit_of, weights=freq, minlength=units)
    unit_dram = np.bincount(unit_of, weights=in_dram, minlength=units).astype(np.int64)
    unit_hbm = np.bincount(unit_of, weights=in_hbm, minlength=units).astype(np.int64)

    candidates = np.flatnonzero((unit_freq > 0) & (unit_dram > 0))
    ranked = candidates[np.lexsort((-candidates, -unit_freq[candidates]))]
    ranked = ranked[:_ceil_share(ratio, ranked.size)]

    pool = np.flatnonzero((unit_freq == 0) & (unit_hbm > 0))
    if pool.size:
        touch = np.where(in_hbm, state.last_touch[layer][:existing], -1)
        starts = np.arange(0, existing, page_size)
        unit_touch = np.maximum.reduceat(touch, starts)
        pool = pool[np.lexsort((pool, unit_touch[pool]))]
    pool_room = np.cumsum(unit_hbm[pool])
    pool_total = int(pool_room[-1]) if pool.size else 0

    reserve = 1 if new_hot and free + pool_total >= 1 else 0
    budget = free + pool_total - reserve
    promote_room = np.cumsum(unit_dram[ranked])
    keep = int(np.searchsorted(promote_room, budget, side="right"))
    ranked = ranked[:keep]
    promoted = int(promote_room[keep - 1]) if keep else 0

    need = promoted + reserve - free
    demote_units = pool[: int(np.searchsorted(pool_room, need, side="left")) + 1] if need > 0 else pool[:0]
    demoted = int(unit_hbm[demote_units].sum())

    migrate_in = np.flatnonzero(np.isin(unit_of, ranked) & in_dram) + layer.start
    migrate_out = np.flatnonzero(np.isin(unit_of, demote_units) & in_hbm) + layer.start
    free_after = free + demoted - promoted
    return ScheduleDecision(
        migrate_out=migrate_out,
        migrate_in=migrate_in,
        new_entry_tier=HBM if free_after >= 1 else DRAM,
    )


def decide_lookahead(state: PlacementState, step: Step, index: LookaheadIndex, ratio: float) -> ScheduleDecision:
    """Promote the top-R share of DRAM entries that the next W tokens will read."""
    return _decide_units(state, step, index, ratio, page_size=1)


def decide_page(
    state: PlacementState,
    step: Step,
    trace: DecodeTrace,
    page_size: int,
    window: int,
    ratio: float,
    index: Optional[LookaheadIndex] = None,
) -> ScheduleDecision:
    """Lookahead where pages of page_size tokens migrate as a whole."""
    if index is None:
        index = build_lookahead_index(trace, step, window)
    return _decide_units(state, step, index, ratio, page_size=page_size)


# ============================================================================
# Policy runners
# ============================================================================

class PlacementPolicy:
    """One policy bound to one trace; `decide` is called for every (n, l) in order."""

    kind = ""

    def __init__(self, trace: DecodeTrace):
        self.trace = trace

    @property
    def capacity_bound(self) -> bool:
        return self.kind != "unlimited"

    def decide(self, state: PlacementState, access: StepAccess) -> ScheduleDecision:
        raise NotImplementedError


class StaticRunner(PlacementPolicy):
    kind = "static"

    def decide(self, state, access):
        return decide_static(state, (access.n, access.l))


class UnlimitedRunner(PlacementPolicy):
    kind = "unlimited"

    def decide(self, state, access):
        return decide_unlimited(state, (access.n, access.l))


class ReactiveRunner(PlacementPolicy):
    kind = "reactive"

    def decide(self, state, access):
        return decide_reactive(state, (access.n, access.l), access)


class LookaheadRunner(PlacementPolicy):
    kind = "lookahead"

    def __init__(self, trace: DecodeTrace, window: int, ratio: float, page_size: int = 1):
        super().__init__(trace)
        self.window = window
        self.ratio = ratio
        self.page_size = page_size
        self._sliding = SlidingLookahead(trace, window)

    def decide(self, state, access):
        step = (access.n, access.l)
        if self.ratio <= 0.0:
            return decide_static(state, step)
        return _decide_units(state, step, self._sliding.index(step), self.ratio, self.page_size)


class PageRunner(LookaheadRunner):
    kind = "page"


def make_policy(spec, trace: DecodeTrace) -> PlacementPolicy:
    """Bind a policy spec (see kvtier.schemas.experiment) to a trace."""
    if isinstance(spec, UnlimitedPolicy):
        return UnlimitedRunner(trace)
    if isinstance(spec, StaticPolicy):
        return StaticRunner(trace)
    if isinstance(spec, ReactivePolicy):
        return ReactiveRunner(trace)
    if isinstance(spec, LookaheadPolicy):
        return LookaheadRunner(trace, spec.window, spec.ratio)
    if isinstance(spec, PagePolicy):
        return PageRunner(trace, spec.window, spec.ratio, page_size=spec.page_size)
    raise TypeError(f"no runner for policy {spec!r}; SA-guided runs resolve to a lookahead first")
