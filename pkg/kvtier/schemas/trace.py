"""
Trace Schemas
Header of a decode trace and the parameters of the synthetic generator.
"""
from pydantic import BaseModel, Field, model_validator


class TraceHeader(BaseModel):
    """Fixes the ranges of the decode-token index n and the layer index l."""

    model_config = {"frozen": True}

    num_layers: int = Field(ge=1, description="Transformer layers L")
    prompt_len: int = Field(ge=0, description="Prefill tokens P")
    decode_len: int = Field(ge=1, description="Decode tokens N")
    entry_bytes: int = Field(gt=0, description="Bytes of one KV entry (one token, one layer)")
    weight_bytes_per_layer: int = Field(
        default=0,
        ge=0,
        description="Weight bytes read from HBM at every (n, l) step"
    )

    @property
    def num_steps(self) -> int:
        return self.decode_len * self.num_layers

    @property
    def max_tokens(self) -> int:
        """Tokens whose KV exists by the end of decoding."""
        return self.prompt_len + self.decode_len

    @property
    def weights_bytes(self) -> int:
        return self.num_layers * self.weight_bytes_per_layer

    @property
    def kv_footprint_bytes(self) -> int:
        """KV bytes held once every decode step has written its entry."""
        return self.max_tokens * self.num_layers * self.entry_bytes


class SynthTraceSpec(BaseModel):
    """Parameters of the seeded synthetic access-set generator."""

    model_config = {"frozen": True}

    header: TraceHeader
    sparsity: float = Field(ge=0.0, lt=1.0, description="Fraction of past tokens skipped per step")
    churn: float = Field(ge=0.0, le=1.0, description="Fraction of the important set replaced per step")
    per_layer_independent: bool = Field(
        default=False,
        description="Evolve one important set per layer instead of sharing one across layers"
    )
    seed: int = Field(default=0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def _needs_prompt(self) -> "SynthTraceSpec":
        if self.header.prompt_len < 1:
            raise ValueError("header.prompt_len must be >= 1 for synthetic traces")
        return self

    def with_axis(self, axis: str, value: float) -> "SynthTraceSpec":
        """Copy with one sweep axis (sparsity or churn) replaced, revalidated."""
        return SynthTraceSpec.model_validate({**self.model_dump(), axis: value})
