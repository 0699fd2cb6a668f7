"""
Decode Trace Service
Per-step KV access sets: the seeded synthetic generator, the attention-score
converter and the line-oriented trace file codec.
"""
import hashlib
import io
import math
import re
from contextlib import contextmanager
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator, List, Sequence, TextIO, Tuple, Union

import numpy as np

from kvtier.schemas.errors import ScoreFormatError, SpecError, TraceFormatError
from kvtier.schemas.trace import SynthTraceSpec, TraceHeader

PathOrStream = Union[str, Path, TextIO]

HEADER_RE = re.compile(
    r"^KVTRACE v1 L=(\d+) P=(\d+) N=(\d+) E=(\d+) W=(\d+)$"
)
STEP_RE = re.compile(r"^(\d+) (\d+) (\d+(?:,\d+)*)$")


@dataclass(frozen=True, eq=False)
class StepAccess:
    """Token indices whose layer-l KV entries are read while generating token n."""
    n: int
    l: int
    accessed: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.accessed, dtype=np.int64)
        if arr is self.accessed and not arr.flags.writeable:
            return
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "accessed", arr)

    def __eq__(self, other) -> bool:
        if not isinstance(other, StepAccess):
            return NotImplemented
        return (self.n, self.l) == (other.n, other.l) and np.array_equal(self.accessed, other.accessed)

    def __len__(self) -> int:
        return int(self.accessed.size)


@dataclass(frozen=True, eq=False)
class DecodeTrace:
    """All N*L steps of a decode run, ordered by (n, l)."""
    header: TraceHeader
    steps: Tuple[StepAccess, ...] = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        problem = _check_steps(self.header, self.steps)
        if problem is not None:
            index, reason = problem
            raise ValueError(f"step {index}: {reason}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, DecodeTrace):
            return NotImplemented
        return self.header == other.header and self.steps == other.steps

    def step(self, n: int, l: int) -> StepAccess:
        return self.steps[(n - 1) * self.header.num_layers + l]

    @cached_property
    def digest(self) -> str:
        """Content hash used by run fingerprints."""
        h = hashlib.sha256(self.header.model_dump_json().encode())
        for s in self.steps:
            h.update(np.int64(s.n).tobytes())
            h.update(np.int64(s.l).tobytes())
            h.update(s.accessed.tobytes())
        return h.hexdigest()


@dataclass
class TraceSummary:
    """Printable statistics of a trace."""
    steps: int
    kv_footprint_bytes: int
    mean_set_size: float
    mean_jaccard: float


def important_set_size(sparsity: float, past_tokens: int) -> int:
    """k = max(1, ceil((1 - sparsity) * past)); rounded first so 0.5 * 10 stays 5."""
    return max(1, math.ceil(round((1.0 - sparsity) * past_tokens, 9)))


def _check_steps(header: TraceHeader, steps: Sequence[StepAccess]):
    """Return (index, reason) of the first invariant violation, or None."""
    L, P = header.num_layers, header.prompt_len
    for i, s in enumerate(steps):
        expected = (i // L + 1, i % L)
        if (s.n, s.l) != expected or s.n > header.decode_len:
            return i, "step order"
        acc = s.accessed
        if acc.size == 0:
            return i, "empty access set"
        if acc[0] < 0:
            return i, "negative token index"
        if acc[-1] >= P + s.n:
            return i, "future token access"
        if acc.size > 1 and not np.all(acc[1:] > acc[:-1]):
            return i, "unsorted or duplicate tokens"
    if len(steps) != header.num_steps:
        return len(steps), "step count mismatch"
    return None


# ============================================================================
# Synthetic generation
# ============================================================================

def _evolve(rng: np.random.Generator, prev: np.ndarray, past: int, k: int, churn: float) -> np.ndarray:
    """Replace ceil(churn * |prev|) members with fresh ones, then resize to k."""
    members = prev
    if churn > 0.0 and members.size:
        replaced = math.ceil(round(churn * members.size, 9))
        outsiders = np.setdiff1d(np.arange(past), members, assume_unique=True)
        keep = rng.choice(members.size, size=members.size - replaced, replace=False)
        fresh = rng.choice(outsiders, size=min(replaced, outsiders.size), replace=False)
        members = np.union1d(members[keep], fresh)
    if members.size < k:
        outsiders = np.setdiff1d(np.arange(past), members, assume_unique=True)
        members = np.union1d(members, rng.choice(outsiders, size=k - members.size, replace=False))
    elif members.size > k:
        keep = rng.choice(members.size, size=k, replace=False)
        members = np.sort(members[keep])
    return members


def _stream(rng: np.random.Generator, spec: SynthTraceSpec) -> List[np.ndarray]:
    """Important set of every decode step for one generator stream."""
    P = spec.header.prompt_len
    sets = []
    current = None
    for n in range(1, spec.header.decode_len + 1):
        past = P + n - 1
        k = important_set_size(spec.sparsity, past)
        if current is None:
            current = np.sort(rng.choice(past, size=k, replace=False))
        else:
            current = _evolve(rng, current, past, k, spec.churn)
        current = current.astype(np.int64)
        current.setflags(write=False)
        sets.append(current)
    return sets


def synthesize_trace(spec: SynthTraceSpec) -> DecodeTrace:
    """
    Generate a deterministic trace from a seeded churn model.

    Args:
        spec: Validated generator parameters

    Returns:
        DecodeTrace whose step-n sets evolve from step n-1 by replace-then-resize
    """
    header = spec.header
    L = header.num_layers
    if spec.per_layer_independent:
        seeds = np.random.SeedSequence(spec.seed).spawn(L)
        per_layer = [_stream(np.random.default_rng(s), spec) for s in seeds]
    else:
        shared = _stream(np.random.default_rng(spec.seed), spec)
        per_layer = [shared] * L

    steps = [
        StepAccess(n=n, l=l, accessed=per_layer[l][n - 1])
        for n in range(1, header.decode_len + 1)
        for l in range(L)
    ]
    return DecodeTrace(header=header, steps=tuple(steps))


def summarize_trace(trace: DecodeTrace) -> TraceSummary:
    """Footprint, mean access-set size and mean consecutive-step Jaccard similarity."""
    L = trace.header.num_layers
    sizes = [len(s) for s in trace.steps]
    jaccards = []
    for i in range(L, len(trace.steps)):
        a, b = trace.steps[i - L].accessed, trace.steps[i].accessed
        inter = np.intersect1d(a, b, assume_unique=True).size
        jaccards.append(inter / (a.size + b.size - inter))
    return TraceSummary(
        steps=len(trace.steps),
        kv_footprint_bytes=trace.header.kv_footprint_bytes,
        mean_set_size=float(np.mean(sizes)),
        mean_jaccard=float(np.mean(jaccards)) if jaccards else 1.0,
    )


# ============================================================================
# Attention scores
# ============================================================================

def read_scores(source: PathOrStream) -> Iterator[Tuple[int, int, np.ndarray]]:
    """Yield (n, l, scores) from a score file: `<n> <l> <s1>,<s2>,...` per line."""
    with _open(source, "r") as stream:
        for line_no, line in enumerate(stream, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(" ")
            try:
                n, l = int(parts[0]), int(parts[1])
            except (IndexError, ValueError):
                raise ScoreFormatError((0, 0), f"line {line_no}: malformed step prefix")
            if len(parts) != 3:
                raise ScoreFormatError((n, l), f"line {line_no}: malformed score list")
            try:
                scores = np.array(parts[2].split(","), dtype=np.float64)
            except ValueError:
                raise ScoreFormatError((n, l), f"line {line_no}: malformed score list")
            yield n, l, scores


def scores_to_trace(
    scores: Iterator[Tuple[int, int, np.ndarray]],
    sparsity: float,
    header: TraceHeader,
) -> DecodeTrace:
    """
    Keep the top-k scored past tokens of every step.

    Ties go to the more recent (larger) token index.
    """
    if not 0.0 <= sparsity < 1.0:
        raise SpecError(f"sparsity must be in [0, 1), got {sparsity}")
    if header.prompt_len < 1:
        raise SpecError("header.prompt_len must be >= 1 to convert scores")

    L, P = header.num_layers, header.prompt_len
    steps = []
    stream = iter(scores)
    for n in range(1, header.decode_len + 1):
        past = P + n - 1
        k = important_set_size(sparsity, past)
        for l in range(L):
            try:
                got_n, got_l, row = next(stream)
            except StopIteration:
                raise ScoreFormatError((n, l), "missing step")
            if (got_n, got_l) != (n, l):
                raise ScoreFormatError((n, l), f"unexpected step ({got_n}, {got_l})")
            if row.size != past:
                raise ScoreFormatError((n, l), f"expected {past} scores, got {row.size}")
            if not np.all(np.isfinite(row)):
                raise ScoreFormatError((n, l), "non-finite score")
            order = np.lexsort((-np.arange(past), -row))
            steps.append(StepAccess(n=n, l=l, accessed=np.sort(order[:k])))
    for got_n, got_l, _ in stream:
        raise ScoreFormatError((got_n, got_l), "extra step after the last decode step")
    return DecodeTrace(header=header, steps=tuple(steps))


# ============================================================================
# Trace file codec
# ============================================================================

@contextmanager
def _open(target: PathOrStream, mode: str) -> Iterator[TextIO]:
    """Open a path, or pass an already-open text stream through untouched."""
    if isinstance(target, (str, Path)):
        # undecodable bytes survive as lone surrogates and fail the line grammar
        errors = "surrogateescape" if "r" in mode else "strict"
        with open(target, mode, encoding="utf-8", errors=errors, newline="\n") as handle:
            yield handle
    else:
        yield target


def format_header(header: TraceHeader) -> str:
    return (
        f"KVTRACE v1 L={header.num_layers} P={header.prompt_len} N={header.decode_len} "
        f"E={header.entry_bytes} W={header.weight_bytes_per_layer}"
    )


def write_trace(trace: DecodeTrace, destination: PathOrStream) -> None:
    """Write the trace in the KVTRACE v1 text format."""
    with _open(destination, "w") as out:
        out.write(format_header(trace.header) + "\n")
        for s in trace.steps:
            out.write(f"{s.n} {s.l} {','.join(map(str, s.accessed.tolist()))}\n")


def dumps_trace(trace: DecodeTrace) -> str:
    buf = io.StringIO()
    write_trace(trace, buf)
    return buf.getvalue()


def read_trace(source: PathOrStream) -> DecodeTrace:
    """
    Parse a KVTRACE v1 file.

    Raises:
        TraceFormatError: naming the first offending line and the reason
    """
    with _open(source, "r") as stream:
        first = stream.readline().rstrip("\n")
        match = HEADER_RE.match(first)
        if match is None:
            raise TraceFormatError(1, "malformed header")
        L, P, N, E, W = (int(g) for g in match.groups())
        try:
            header = TraceHeader(
                num_layers=L, prompt_len=P, decode_len=N, entry_bytes=E, weight_bytes_per_layer=W
            )
        except ValueError:
            raise TraceFormatError(1, "malformed header")

        steps = []
        line_no = 1
        for line_no, line in enumerate(stream, start=2):
            line = line.rstrip("\n")
            index = line_no - 2
            if index >= header.num_steps:
                raise TraceFormatError(line_no, "step count mismatch")
            match = STEP_RE.match(line)
            if match is None:
                raise TraceFormatError(line_no, "empty access set" if _is_empty_step(line) else "malformed step line")
            n, l = int(match.group(1)), int(match.group(2))
            if (n, l) != (index // L + 1, index % L):
                raise TraceFormatError(line_no, "step order")
            try:
                accessed = np.array(match.group(3).split(","), dtype=np.int64)
            except (OverflowError, ValueError):
                raise TraceFormatError(line_no, "future token access")
            if accessed.max() >= P + n:
                raise TraceFormatError(line_no, "future token access")
            if accessed.size > 1 and not np.all(accessed[1:] > accessed[:-1]):
                raise TraceFormatError(line_no, "unsorted or duplicate tokens")
            accessed.setflags(write=False)
            steps.append(StepAccess(n=n, l=l, accessed=accessed))

        if len(steps) != header.num_steps:
            raise TraceFormatError(len(steps) + 2, "step count mismatch")
    return DecodeTrace(header=header, steps=tuple(steps))


def _is_empty_step(line: str) -> bool:
    return re.match(r"^\d+ \d+ ?$", line) is not None
