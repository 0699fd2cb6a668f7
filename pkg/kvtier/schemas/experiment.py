"""
Experiment Schemas
Policy selection, annealing parameters, sweeps and the experiment file.
"""
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, Field, field_validator, model_validator

from kvtier.config import get_settings
from kvtier.schemas.memory import MemoryConfig
from kvtier.schemas.trace import SynthTraceSpec


def _default(name: str):
    return lambda: getattr(get_settings(), name)


Seed = Annotated[int, Field(ge=0, lt=2**64)]


# ============================================================================
# Policies
# ============================================================================

class UnlimitedPolicy(BaseModel):
    """Everything in HBM, capacity ignored."""
    model_config = {"frozen": True}
    kind: Literal["unlimited"] = "unlimited"

    @property
    def label(self) -> str:
        return "unlimited"


class StaticPolicy(BaseModel):
    """Fill HBM in write order, never migrate."""
    model_config = {"frozen": True}
    kind: Literal["static"] = "static"

    @property
    def label(self) -> str:
        return "static"


class ReactivePolicy(BaseModel):
    """Promote on miss, evict least recently used."""
    model_config = {"frozen": True}
    kind: Literal["reactive"] = "reactive"

    @property
    def label(self) -> str:
        return "reactive"


class LookaheadPolicy(BaseModel):
    """Foresight policy ranking entries by access frequency over the next W tokens."""
    model_config = {"frozen": True}
    kind: Literal["lookahead"] = "lookahead"
    window: int = Field(ge=1, description="W, future decode tokens inspected")
    ratio: float = Field(ge=0.0, le=1.0, description="R, share of qualified entries migrated")

    @property
    def label(self) -> str:
        return f"lookahead(W={self.window},R={self.ratio:g})"


class PagePolicy(BaseModel):
    """Lookahead at page granularity."""
    model_config = {"frozen": True}
    kind: Literal["page"] = "page"
    page_size: int = Field(default_factory=_default("page_size"), ge=1)
    window: int = Field(default_factory=_default("page_window"), ge=1)
    ratio: float = Field(default_factory=_default("page_ratio"), ge=0.0, le=1.0)

    @property
    def label(self) -> str:
        return f"page(size={self.page_size},W={self.window},R={self.ratio:g})"


class SAGuidedPolicy(BaseModel):
    """Lookahead with (W, R) chosen by simulated annealing."""
    model_config = {"frozen": True}
    kind: Literal["sa"] = "sa"

    @property
    def label(self) -> str:
        return "sa"


PolicySpec = Annotated[
    Union[UnlimitedPolicy, StaticPolicy, ReactivePolicy, LookaheadPolicy, PagePolicy, SAGuidedPolicy],
    Field(discriminator="kind"),
]


# ============================================================================
# Annealing
# ============================================================================

class SAConfig(BaseModel):
    """Simulated-annealing search over the lookahead's (W, R)."""

    model_config = {"frozen": True}

    p0: float = Field(default_factory=_default("sa_p0"), gt=0.0, lt=1.0,
                      description="Target initial acceptance ratio")
    alpha: float = Field(default_factory=_default("sa_alpha"), gt=0.0, lt=1.0,
                         description="Cooling rate")
    improve_threshold: float = Field(default_factory=_default("sa_improve_threshold"), ge=0.0,
                                     description="Relative best-cost improvement cutoff between levels")
    temp_min: Optional[float] = Field(default=None, gt=0.0,
                                      description="Minimal temperature; defaults to C0 * temp_min_factor")
    temp_min_factor: float = Field(default_factory=_default("sa_temp_min_factor"), gt=0.0)
    iters_per_temp: int = Field(default_factory=_default("sa_iters_per_temp"), ge=1)
    max_iters: int = Field(default_factory=_default("sa_max_iters"), ge=1)
    w_bounds: Tuple[int, int] = Field(default_factory=_default("sa_w_bounds"))
    r_step: float = Field(default_factory=_default("sa_r_step"), gt=0.0, le=1.0)
    calibration_samples: int = Field(default_factory=_default("sa_calibration_samples"), ge=1)
    start_window: int = Field(default_factory=_default("sa_start_window"), ge=1)
    start_ratio: float = Field(default_factory=_default("sa_start_ratio"), ge=0.0, le=1.0)
    seed: int = Field(default=0, ge=0, lt=2**64)

    @field_validator("w_bounds")
    @classmethod
    def _check_bounds(cls, value: Tuple[int, int]) -> Tuple[int, int]:
        lo, hi = value
        if lo < 1 or hi < lo:
            raise ValueError("w_bounds must satisfy 1 <= low <= high")
        return value

    @property
    def start(self) -> Tuple[int, float]:
        lo, hi = self.w_bounds
        return min(max(self.start_window, lo), hi), self.start_ratio


# ============================================================================
# Experiment file
# ============================================================================

class SweepSpec(BaseModel):
    """One sensitivity axis of the synthetic trace."""
    model_config = {"frozen": True}
    axis: Literal["sparsity", "churn"]
    values: List[float] = Field(min_length=1)


class ExperimentConfig(BaseModel):
    """Top-level experiment file."""

    model_config = {"frozen": True}

    memory: MemoryConfig = Field(default_factory=MemoryConfig)
    trace: Union[SynthTraceSpec, str] = Field(
        description="Inline synthetic trace spec, or the path of a trace file"
    )
    policies: List[PolicySpec] = Field(min_length=1)
    sa: Optional[SAConfig] = None
    sweep: Optional[SweepSpec] = None
    output_dir: str = "results"
    seed: Seed = 0

    @model_validator(mode="after")
    def _sweep_needs_synthetic(self) -> "ExperimentConfig":
        if self.sweep is not None and not isinstance(self.trace, SynthTraceSpec):
            raise ValueError("sweep requires an inline synthetic trace")
        return self

    @property
    def trace_path(self) -> Optional[Path]:
        return Path(self.trace) if isinstance(self.trace, str) else None

    def sa_config(self) -> SAConfig:
        """Annealing settings, seeded from the experiment seed unless set explicitly."""
        if self.sa is None:
            return SAConfig(seed=self.seed)
        if "seed" not in self.sa.model_fields_set:
            return self.sa.model_copy(update={"seed": self.seed})
        return self.sa
