"""
Memory Model
Bandwidth-only latency of a decode step on the HBM + off-package DRAM system.

Byte counts are exact integers; latencies are floats in seconds.
"""
import math
from dataclasses import dataclass
from typing import Iterable, Tuple

from kvtier.schemas.memory import MemoryConfig


@dataclass(frozen=True, slots=True)
class StepTraffic:
    """Bytes moved by one (n, l) step."""
    hbm_read: int = 0
    hbm_write: int = 0
    dram_read: int = 0
    dram_write: int = 0
    migrate_out: int = 0
    migrate_in: int = 0

    def __post_init__(self):
        for name in self.__slots__:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def __add__(self, other: "StepTraffic") -> "StepTraffic":
        return StepTraffic(*(getattr(self, f) + getattr(other, f) for f in self.__slots__))


@dataclass(frozen=True)
class CapacityCheck:
    feasible: bool
    usage: float


def hbm_step_latency(traffic: StepTraffic, cfg: MemoryConfig) -> float:
    """t^h = (H^r + H^w + M^i + M^o) / B_h."""
    moved = traffic.hbm_read + traffic.hbm_write + traffic.migrate_in + traffic.migrate_out
    return moved / cfg.hbm_bandwidth


def dram_step_latency(traffic: StepTraffic, cfg: MemoryConfig) -> float:
    """
    t^e = E^r / min(B_k, B_d) + max(outbound lane, inbound lane, DRAM channel).

    The link is full duplex, so traffic leaving the GPU side (E^w + M^o) and
    traffic arriving (M^i) occupy separate lanes, while the DRAM channel
    serves all three.
    """
    outbound = (traffic.dram_write + traffic.migrate_out) / cfg.link_bandwidth
    inbound = traffic.migrate_in / cfg.link_bandwidth
    channel = (traffic.dram_write + traffic.migrate_in + traffic.migrate_out) / cfg.dram_bandwidth
    return traffic.dram_read / cfg.dram_read_bandwidth + max(outbound, inbound, channel)


def step_latency(traffic: StepTraffic, cfg: MemoryConfig) -> float:
    return max(hbm_step_latency(traffic, cfg), dram_step_latency(traffic, cfg))


def step_latencies(traffic: StepTraffic, cfg: MemoryConfig) -> Tuple[float, float, float]:
    """(t^h, t^e, t) for one step."""
    th = hbm_step_latency(traffic, cfg)
    te = dram_step_latency(traffic, cfg)
    return th, te, max(th, te)


def total_latency(per_step: Iterable[StepTraffic], cfg: MemoryConfig) -> float:
    """Sum of step latencies, compensated so long runs do not drift."""
    return math.fsum(step_latency(t, cfg) for t in per_step)


def check_capacity(hbm_resident_bytes: int, cfg: MemoryConfig) -> CapacityCheck:
    """HBM occupancy P_H and whether it stays within 100%."""
    return CapacityCheck(
        feasible=hbm_resident_bytes <= cfg.hbm_capacity,
        usage=hbm_resident_bytes / cfg.hbm_capacity,
    )
