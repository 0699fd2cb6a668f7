"""
Annealing Service
Simulated-annealing search over the lookahead policy's window W and
migration ratio R.

One search is a single seeded Markov chain: proposals, evaluations and
acceptance draws happen strictly in order, so a fixed seed reproduces the
search log bit for bit.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd

from kvtier.schemas.errors import KVTierError
from kvtier.schemas.experiment import SAConfig
from kvtier.schemas.memory import MemoryConfig
from kvtier.services.policies import LookaheadRunner
from kvtier.services.simulator import simulate
from kvtier.services.trace import DecodeTrace

logger = logging.getLogger("kvtier")

MOVE_KINDS = ("window", "ratio", "diagonal")
MOVE_PROBS = (0.4, 0.4, 0.2)
WINDOW_DELTAS = (-2, -1, 1, 2)

LOG_COLUMNS = ("iter", "level", "temperature", "W", "R", "T_seconds", "accepted", "uniform_draw")


class Knobs(NamedTuple):
    """A point (W, R) of the search space."""
    window: int
    ratio: float


# ============================================================================
# Objective
# ============================================================================

def evaluate(trace: DecodeTrace, cfg: MemoryConfig, window: int, ratio: float) -> float:
    """
    Total decode latency of the lookahead policy with (W, R).

    Raises:
        KVTierError: the simulation failed; context gains the offending W and R
    """
    try:
        records = simulate(trace, cfg, LookaheadRunner(trace, window, ratio))
    except KVTierError as exc:
        exc.context.update({"window": window, "ratio": ratio})
        raise
    return math.fsum(r.t_step for r in records)


class Evaluator:
    """evaluate() memoized on (W, R) for the lifetime of one search."""

    def __init__(self, trace: DecodeTrace, cfg: MemoryConfig):
        self.trace = trace
        self.cfg = cfg
        self.memo: Dict[Knobs, float] = {}

    def __call__(self, knobs: Knobs) -> float:
        key = Knobs(int(knobs[0]), float(knobs[1]))
        if key not in self.memo:
            self.memo[key] = evaluate(self.trace, self.cfg, key.window, key.ratio)
        return self.memo[key]

    @property
    def evaluations(self) -> int:
        return len(self.memo)


# ============================================================================
# Moves and acceptance
# ============================================================================

def draw_move_kind(rng: np.random.Generator) -> str:
    return MOVE_KINDS[int(rng.choice(len(MOVE_KINDS), p=MOVE_PROBS))]


def clamp_knobs(window: int, ratio: float, config: SAConfig) -> Knobs:
    lo, hi = config.w_bounds
    return Knobs(
        window=int(min(max(window, lo), hi)),
        ratio=round(min(max(ratio, 0.0), 1.0), 10),
    )


def apply_move(current: Knobs, kind: str, window_delta: int, ratio_sign: int, config: SAConfig) -> Knobs:
    """Perturb `current` by one move of `kind` and clamp to the search box."""
    window, ratio = current
    if kind in ("window", "diagonal"):
        window += window_delta
    if kind in ("ratio", "diagonal"):
        ratio += ratio_sign * config.r_step
    return clamp_knobs(window, ratio, config)


def propose(rng: np.random.Generator, current: Knobs, config: SAConfig) -> Knobs:
    """
    Draw a neighbour of `current`.

    Window move (p=0.4): W +/- 1 or 2. Ratio move (p=0.4): R +/- r_step.
    Diagonal move (p=0.2): one of each, drawn independently.
    """
    kind = draw_move_kind(rng)
    window_delta = int(rng.choice(WINDOW_DELTAS)) if kind != "ratio" else 0
    ratio_sign = int(rng.choice((-1, 1))) if kind != "window" else 0
    return apply_move(Knobs(*current), kind, window_delta, ratio_sign, config)


def acceptance_probability(delta: float, temperature: float) -> float:
    """exp(-dT/C) for uphill moves, 1 otherwise."""
    if delta <= 0:
        return 1.0
    if temperature <= 0:
        return 0.0
    return math.exp(-delta / temperature)


def metropolis(delta: float, temperature: float, rng: np.random.Generator) -> Tuple[bool, float]:
    """Metropolis test; returns (accepted, uniform draw). A draw is made for every move."""
    draw = float(rng.random())
    return delta <= 0 or draw < acceptance_probability(delta, temperature), draw


def accept(delta: float, temperature: float, rng: np.random.Generator) -> bool:
    return metropolis(delta, temperature, rng)[0]


def calibrate_initial_temperature(
    trace: DecodeTrace,
    cfg: MemoryConfig,
    start: Knobs,
    config: SAConfig,
    rng: np.random.Generator,
    evaluator: Optional[Callable[[Knobs], float]] = None,
) -> float:
    """
    C0 such that an average uphill move from `start` is accepted with
    probability p0: C0 = mean(dT+) / -ln(p0).

    Falls back to 0.01 * T(start) when no sampled move goes uphill.
    """
    evaluator = evaluator or Evaluator(trace, cfg)
    base = evaluator(Knobs(*start))
    uphill = []
    for _ in range(config.calibration_samples):
        delta = evaluator(propose(rng, Knobs(*start), config)) - base
        if delta > 0:
            uphill.append(delta)
    if not uphill:
        return 0.01 * base
    return float(np.mean(uphill)) / -math.log(config.p0)


# ============================================================================
# Search
# ============================================================================

@dataclass(frozen=True)
class SALogRow:
    iter: int
    level: int
    temperature: float
    W: int
    R: float
    T_seconds: float
    accepted: bool
    uniform_draw: float


@dataclass
class SAResult:
    best: Knobs
    best_cost: float
    initial_temperature: float
    stop_reason: str
    evaluations: int
    log: List[SALogRow] = field(default_factory=list)

    def log_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(row) for row in self.log], columns=list(LOG_COLUMNS))


def run_sa(trace: DecodeTrace, cfg: MemoryConfig, config: SAConfig) -> SAResult:
    """
    Anneal (W, R) of the lookahead policy.

    Each temperature level runs iters_per_temp proposals, then C <- alpha * C.
    The search stops when the best cost improved by less than
    improve_threshold (relative) over the last level, when C drops below
    temp_min, or when max_iters proposals have been made.

    Returns:
        SAResult with the best-ever (W, R), its latency and the search log
    """
    rng = np.random.default_rng(config.seed)
    evaluator = Evaluator(trace, cfg)

    current = Knobs(*config.start)
    current_cost = evaluator(current)
    best, best_cost = current, current_cost

    temperature = calibrate_initial_temperature(trace, cfg, current, config, rng, evaluator)
    initial_temperature = temperature
    temp_min = config.temp_min if config.temp_min is not None else temperature * config.temp_min_factor

    log: List[SALogRow] = []
    iteration = 0
    level = 0
    level_best = best_cost
    stop_reason = ""
    while not stop_reason:
        accepted_here = 0
        for _ in range(config.iters_per_temp):
            if iteration >= config.max_iters:
                stop_reason = "max_iters"
                break
            candidate = propose(rng, current, config)
            cost = evaluator(candidate)
            accepted, draw = metropolis(cost - current_cost, temperature, rng)
            iteration += 1
            if accepted:
                accepted_here += 1
                current, current_cost = candidate, cost
                if cost < best_cost:
                    best, best_cost = candidate, cost
            log.append(SALogRow(
                iter=iteration,
                level=level,
                temperature=temperature,
                W=candidate.window,
                R=candidate.ratio,
                T_seconds=cost,
                accepted=accepted,
                uniform_draw=draw,
            ))

        level_data = {
            "level": level,
            "temperature": temperature,
            "best": tuple(best),
            "best_cost": best_cost,
            "accepted": accepted_here,
        }
        logger.debug(f"SA level: {level_data}")
        if stop_reason:
            break

        temperature *= config.alpha
        level += 1
        if (level_best - best_cost) / level_best < config.improve_threshold:
            stop_reason = "converged"
        elif temperature < temp_min:
            stop_reason = "temp_min"
        level_best = best_cost

    return SAResult(
        best=best,
        best_cost=best_cost,
        initial_temperature=initial_temperature,
        stop_reason=stop_reason,
        evaluations=evaluator.evaluations,
        log=log,
    )
