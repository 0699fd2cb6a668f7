"""
Trace tests: synthetic generator, score conversion and the text codec.
"""
import io

import numpy as np
import pytest
from hypothesis import given, strategies as st
from pydantic import ValidationError

from kvtier.schemas.errors import ScoreFormatError, SpecError, TraceFormatError
from kvtier.schemas.trace import SynthTraceSpec, TraceHeader
from kvtier.services.trace import (
    DecodeTrace,
    dumps_trace,
    important_set_size,
    read_scores,
    read_trace,
    scores_to_trace,
    summarize_trace,
    synthesize_trace,
    write_trace,
)


def header(L=1, P=4, N=3, E=16, W=0) -> TraceHeader:
    return TraceHeader(num_layers=L, prompt_len=P, decode_len=N, entry_bytes=E, weight_bytes_per_layer=W)


def spec(**kw) -> SynthTraceSpec:
    base = {"header": header(), "sparsity": 0.0, "churn": 0.0, "seed": 0}
    base.update(kw)
    return SynthTraceSpec(**base)


# ============================================================================
# Synthetic generator
# ============================================================================

def test_zero_sparsity_zero_churn_reads_every_past_token():
    trace = synthesize_trace(spec(header=header(L=2, P=4, N=3)))
    for s in trace.steps:
        assert s.accessed.tolist() == list(range(4 + s.n - 1))


def test_set_size_formula():
    trace = synthesize_trace(spec(header=header(L=3, P=10, N=1), sparsity=0.5, seed=3))
    assert [len(s) for s in trace.steps] == [5, 5, 5]
    assert important_set_size(0.5, 10) == 5
    assert important_set_size(0.99, 3) == 1


def test_full_churn_decorrelates_consecutive_steps():
    trace = synthesize_trace(spec(header=header(P=64, N=8), sparsity=0.75, churn=1.0, seed=7))
    jaccards = []
    for a, b in zip(trace.steps, trace.steps[1:]):
        inter = len(set(a.accessed.tolist()) & set(b.accessed.tolist()))
        jaccards.append(inter / len(set(a.accessed.tolist()) | set(b.accessed.tolist())))
    assert np.mean(jaccards) < 0.35


def test_zero_churn_sets_only_grow():
    trace = synthesize_trace(spec(header=header(L=2, P=20, N=10), sparsity=0.6, seed=5))
    L = trace.header.num_layers
    for prev, cur in zip(trace.steps, trace.steps[L:]):
        inter = np.intersect1d(prev.accessed, cur.accessed)
        smaller = prev.accessed if len(prev) <= len(cur) else cur.accessed
        assert np.array_equal(inter, smaller)


def test_shared_sets_across_layers():
    trace = synthesize_trace(spec(header=header(L=3, P=30, N=4), sparsity=0.5, churn=0.5, seed=1))
    for n in range(1, 5):
        assert np.array_equal(trace.step(n, 0).accessed, trace.step(n, 1).accessed)
        assert np.array_equal(trace.step(n, 0).accessed, trace.step(n, 2).accessed)


def test_per_layer_streams_differ():
    trace = synthesize_trace(
        spec(header=header(L=2, P=200, N=2), sparsity=0.5, churn=0.5, per_layer_independent=True, seed=9)
    )
    assert not np.array_equal(trace.step(1, 0).accessed, trace.step(1, 1).accessed)


def test_generator_is_deterministic():
    s = spec(header=header(L=2, P=32, N=16), sparsity=0.7, churn=0.4, seed=123)
    assert synthesize_trace(s) == synthesize_trace(s)
    assert synthesize_trace(s).digest == synthesize_trace(s).digest


def test_invalid_spec_names_the_bound():
    with pytest.raises(ValidationError) as err:
        spec(sparsity=1.0)
    assert "sparsity" in str(err.value)
    with pytest.raises(ValidationError):
        spec(churn=1.5)
    with pytest.raises(ValidationError):
        spec(header=header(P=0))


@given(
    L=st.integers(1, 3),
    P=st.integers(1, 40),
    N=st.integers(1, 12),
    sparsity=st.floats(0.0, 0.95),
    churn=st.floats(0.0, 1.0),
    independent=st.booleans(),
    seed=st.integers(0, 2**32),
)
def test_generated_traces_respect_invariants(L, P, N, sparsity, churn, independent, seed):
    s = SynthTraceSpec(
        header=header(L=L, P=P, N=N), sparsity=sparsity, churn=churn,
        per_layer_independent=independent, seed=seed,
    )
    trace = synthesize_trace(s)
    assert len(trace.steps) == N * L
    for st_ in trace.steps:
        assert st_.accessed[-1] < P + st_.n
        assert np.all(np.diff(st_.accessed) > 0)
        assert len(st_) == important_set_size(sparsity, P + st_.n - 1)
    assert read_trace(io.StringIO(dumps_trace(trace))) == trace


def test_summary():
    trace = synthesize_trace(spec(header=header(L=2, P=4, N=3)))
    summary = summarize_trace(trace)
    assert summary.steps == 6
    assert summary.kv_footprint_bytes == (4 + 3) * 2 * 16
    assert summary.mean_set_size == pytest.approx((4 + 5 + 6) / 3)
    assert 0.0 < summary.mean_jaccard <= 1.0


# ============================================================================
# Attention scores
# ============================================================================

def score_lines(rows):
    return io.StringIO("".join(f"{n} {l} {','.join(map(str, s))}\n" for n, l, s in rows))


def test_top_k_of_scores():
    trace = scores_to_trace(read_scores(score_lines([(1, 0, [0.1, 0.9, 0.3])])), 1 / 3, header(P=3, N=1))
    assert trace.steps[0].accessed.tolist() == [1, 2]


def test_zero_sparsity_keeps_everything():
    trace = scores_to_trace(read_scores(score_lines([(1, 0, [5.0, -1.0, 0.0])])), 0.0, header(P=3, N=1))
    assert trace.steps[0].accessed.tolist() == [0, 1, 2]


def test_score_ties_break_to_recent_token():
    trace = scores_to_trace(iter([(1, 0, np.array([0.5, 0.5, 0.2]))]), 0.7, header(P=3, N=1))
    assert trace.steps[0].accessed.tolist() == [1]


def test_score_sizes_follow_formula():
    rng = np.random.default_rng(0)
    h = header(L=2, P=5, N=4)
    rows = [(n, l, rng.random(5 + n - 1)) for n in range(1, 5) for l in range(2)]
    trace = scores_to_trace(iter(rows), 0.4, h)
    for s in trace.steps:
        assert len(s) == important_set_size(0.4, 5 + s.n - 1)


def test_score_errors_name_the_step():
    h = header(L=1, P=2, N=2)
    with pytest.raises(ScoreFormatError) as err:
        scores_to_trace(iter([(1, 0, np.ones(2))]), 0.5, h)
    assert err.value.context["n"] == 2
    with pytest.raises(ScoreFormatError):
        scores_to_trace(iter([(1, 0, np.ones(3))]), 0.5, h)
    with pytest.raises(ScoreFormatError):
        scores_to_trace(iter([(1, 0, np.array([1.0, np.nan]))]), 0.5, h)
    with pytest.raises(SpecError):
        scores_to_trace(iter([]), 1.0, h)


def test_malformed_score_line():
    with pytest.raises(ScoreFormatError):
        list(read_scores(io.StringIO("1 0 0.1,abc\n")))


# ============================================================================
# Codec
# ============================================================================

def test_round_trip_through_file(tmp_path):
    trace = synthesize_trace(spec(header=header(L=2, P=8, N=5, W=100), sparsity=0.5, churn=0.2, seed=4))
    path = tmp_path / "t.kvtrace"
    write_trace(trace, path)
    assert path.read_bytes().startswith(b"KVTRACE v1 L=2 P=8 N=5 E=16 W=100\n")
    assert read_trace(path) == trace


def parse(text: str) -> DecodeTrace:
    return read_trace(io.StringIO(text))


@pytest.mark.parametrize(
    "text, line, reason",
    [
        ("KVTRACE v2 L=1 P=2 N=1 E=16 W=0\n1 0 0\n", 1, "malformed header"),
        ("KVTRACE v1 L=1 P=2 N=1 E=16 W=0\n1 0 3\n", 2, "future token access"),
        ("KVTRACE v1 L=1 P=2 N=1 E=16 W=0\n", 2, "step count mismatch"),
        ("KVTRACE v1 L=1 P=2 N=1 E=16 W=0\n1 0 1,0\n", 2, "unsorted or duplicate tokens"),
        ("KVTRACE v1 L=1 P=2 N=1 E=16 W=0\n1 0 1,1\n", 2, "unsorted or duplicate tokens"),
        ("KVTRACE v1 L=1 P=2 N=1 E=16 W=0\n1 0 \n", 2, "empty access set"),
        ("KVTRACE v1 L=1 P=2 N=1 E=16 W=0\n1 0 x\n", 2, "malformed step line"),
        ("KVTRACE v1 L=2 P=2 N=1 E=16 W=0\n1 1 0\n1 0 0\n", 2, "step order"),
        ("KVTRACE v1 L=1 P=2 N=1 E=16 W=0\n1 0 0\n2 0 0\n", 3, "step count mismatch"),
        ("KVTRACE v1 L=1 P=2 N=1 E=16 W=0\n1 0 99999999999999999999\n", 2, "future token access"),
        ("KVTRACE v1 L=1 P=2 N=1 E=16 W=0\n1 0 0,99999999999999999999\n", 2, "future token access"),
    ],
)
def test_parse_errors(text, line, reason):
    with pytest.raises(TraceFormatError) as err:
        parse(text)
    assert err.value.line_no == line
    assert err.value.reason == reason


def test_undecodable_bytes_name_the_line(tmp_path):
    path = tmp_path / "t.kvtrace"
    path.write_bytes(b"KVTRACE v1 L=1 P=2 N=2 E=16 W=0\n1 0 0\n2 0 \xff\n")
    with pytest.raises(TraceFormatError) as err:
        read_trace(path)
    assert err.value.line_no == 3
    assert err.value.reason == "malformed step line"

    path.write_bytes(b"\xffKVTRACE v1 L=1 P=2 N=1 E=16 W=0\n1 0 0\n")
    with pytest.raises(TraceFormatError) as err:
        read_trace(path)
    assert err.value.line_no == 1


def test_undecodable_score_file(tmp_path):
    path = tmp_path / "scores.txt"
    path.write_bytes(b"1 0 0.1,\xff\n")
    with pytest.raises(ScoreFormatError) as err:
        list(read_scores(path))
    assert err.value.step == (1, 0)
    path.write_bytes(b"\xff 0 0.1\n")
    with pytest.raises(ScoreFormatError) as err:
        list(read_scores(path))
    assert err.value.step == (0, 0)


def test_trace_rejects_out_of_order_steps():
    h = header(L=1, P=2, N=2)
    steps = parse("KVTRACE v1 L=1 P=2 N=2 E=16 W=0\n1 0 0\n2 0 1\n").steps
    with pytest.raises(ValueError):
        DecodeTrace(header=h, steps=(steps[1], steps[0]))
