"""
Memory Schemas
Bandwidths and capacities of the HBM + off-package DRAM system.
"""
from pydantic import BaseModel, Field

from kvtier.config import get_settings


def _default(name: str):
    return lambda: getattr(get_settings(), name)


class MemoryConfig(BaseModel):
    """
    Two-tier memory system.

    Bandwidths are bytes/s; the link bandwidth is per direction of a
    full-duplex link. Capacities are bytes.
    """

    model_config = {"frozen": True}

    hbm_bandwidth: float = Field(default_factory=_default("hbm_bandwidth"), gt=0, description="B_h")
    link_bandwidth: float = Field(default_factory=_default("link_bandwidth"), gt=0, description="B_k")
    dram_bandwidth: float = Field(default_factory=_default("dram_bandwidth"), gt=0, description="B_d")
    hbm_capacity: int = Field(default_factory=_default("hbm_capacity"), gt=0)
    dram_capacity: int = Field(default_factory=_default("dram_capacity"), gt=0)

    @property
    def dram_read_bandwidth(self) -> float:
        """Reads stream through both the link and the DRAM channel."""
        return min(self.link_bandwidth, self.dram_bandwidth)

    def kv_capacity_entries(self, weights_bytes: int, entry_bytes: int) -> int:
        """Whole KV entries that fit in HBM next to the resident weights."""
        return max(0, (self.hbm_capacity - weights_bytes) // entry_bytes)
