import os

import hypothesis
import numpy as np
import pytest

from kvtier.schemas.memory import MemoryConfig
from kvtier.schemas.trace import SynthTraceSpec, TraceHeader
from kvtier.services.trace import DecodeTrace, StepAccess, synthesize_trace

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.register_profile("ci", max_examples=100, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "fast"))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long acceptance scenarios (deselect with -m 'not slow')")


def memory_for(header: TraceHeader, kv_entries: int, **overrides) -> MemoryConfig:
    """Memory system whose HBM holds the weights plus exactly `kv_entries` entries."""
    capacity = header.weights_bytes + kv_entries * header.entry_bytes
    return MemoryConfig(hbm_capacity=max(capacity, 1), **overrides)


def make_trace(header: TraceHeader, sets) -> DecodeTrace:
    """Trace from a list of per-step token lists, in (n, l) order."""
    L = header.num_layers
    steps = [
        StepAccess(n=i // L + 1, l=i % L, accessed=np.array(tokens, dtype=np.int64))
        for i, tokens in enumerate(sets)
    ]
    return DecodeTrace(header=header, steps=tuple(steps))


@pytest.fixture
def small_header() -> TraceHeader:
    return TraceHeader(num_layers=2, prompt_len=16, decode_len=12, entry_bytes=64, weight_bytes_per_layer=1024)


@pytest.fixture
def small_trace(small_header) -> DecodeTrace:
    return synthesize_trace(SynthTraceSpec(header=small_header, sparsity=0.5, churn=0.3, seed=11))


@pytest.fixture
def small_memory(small_header) -> MemoryConfig:
    """HBM room for a quarter of the final KV footprint."""
    total = small_header.max_tokens * small_header.num_layers
    return memory_for(small_header, total // 4)
