"""Span traces: ingestion, rendering and per-function execution statistics.

Trace files hold one JSON object per record with the keys ``i`` (trace id),
``s`` (span id), ``b``/``e`` (begin/end epoch milliseconds), ``r`` (process),
``p`` (parent span ids) and ``d`` (function name)::

    {"i":"1b1bdfddac521ce8", "s":"df4646ae00070999", "b":1543260568612, ...}

Records are normally one per line, but a record may wrap across lines; the
reader decodes objects back to back and reports the line a bad record starts on.
"""

from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping

from .errors import (
    DanglingParent,
    InsufficientBaseline,
    MalformedRecord,
    NegativeDuration,
)

log = logging.getLogger(__name__)

RECORD_KEYS = ("i", "s", "b", "e", "r", "p", "d")


@dataclass(frozen=True)
class Span:
    trace_id: str
    span_id: str
    parent_ids: tuple[str, ...]
    begin_ms: int
    end_ms: int
    process: str
    function: str

    @property
    def duration_ms(self) -> int:
        return self.end_ms - self.begin_ms

    def overlaps(self, start_ms: int, end_ms: int) -> bool:
        return self.begin_ms <= end_ms and self.end_ms >= start_ms


@dataclass(frozen=True)
class SpanTrace:
    trace_id: str
    spans: tuple[Span, ...]

    @property
    def window(self) -> tuple[int, int] | None:
        """``(first begin, last end)``; None for an empty trace."""
        if not self.spans:
            return None
        return (min(s.begin_ms for s in self.spans), max(s.end_ms for s in self.spans))

    def by_id(self) -> dict[str, Span]:
        return {s.span_id: s for s in self.spans}

    def in_window(self, start_ms: int, end_ms: int) -> list[Span]:
        return [s for s in self.spans if s.overlaps(start_ms, end_ms)]


def _span_from_obj(obj, line: int) -> Span:
    if not isinstance(obj, dict):
        raise MalformedRecord(line, "record is not an object")
    unknown = set(obj) - set(RECORD_KEYS)
    if unknown:
        log.warning("line %d: ignoring unknown keys %s", line, sorted(unknown))
    missing = [k for k in RECORD_KEYS if k not in obj]
    if missing:
        raise MalformedRecord(line, f"missing keys {missing}")
    for key in ("i", "s", "r", "d"):
        if not isinstance(obj[key], str):
            raise MalformedRecord(line, f"{key!r} must be a string")
    for key in ("b", "e"):
        if not isinstance(obj[key], int) or isinstance(obj[key], bool):
            raise MalformedRecord(line, f"{key!r} must be an integer")
    parents = obj["p"]
    if not isinstance(parents, list) or not all(isinstance(p, str) for p in parents):
        raise MalformedRecord(line, "'p' must be an array of strings")
    if not obj["s"]:
        raise MalformedRecord(line, "empty span id")
    if obj["e"] < obj["b"]:
        raise NegativeDuration(line, obj["s"])
    return Span(
        trace_id=obj["i"],
        span_id=obj["s"],
        parent_ids=tuple(parents),
        begin_ms=obj["b"],
        end_ms=obj["e"],
        process=obj["r"],
        function=obj["d"],
    )


def parse_span_record(text: str) -> Span:
    """Parse a single record, without any trace-level checks."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(exc.lineno, exc.msg) from None
    return _span_from_obj(obj, 1)


def _iter_records(text: str):
    decoder = json.JSONDecoder()
    pos, n = 0, len(text)
    while True:
        while pos < n and text[pos] in " \t\r\n":
            pos += 1
        if pos >= n:
            return
        line = text.count("\n", 0, pos) + 1
        try:
            obj, end = decoder.raw_decode(text, pos)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(line, exc.msg) from None
        yield obj, line
        pos = end


def parse_span_trace(text: str, *, allow_dangling: bool = False) -> SpanTrace:
    """Parse a whole trace and check the forest invariants.

    ``allow_dangling`` accepts parent ids that point outside the capture, which
    happens for excerpts cut from a larger trace.
    """
    spans: list[Span] = []
    lines: dict[str, int] = {}
    for obj, line in _iter_records(text):
        span = _span_from_obj(obj, line)
        if span.span_id in lines:
            raise MalformedRecord(line, f"duplicate span id {span.span_id}")
        lines[span.span_id] = line
        spans.append(span)

    trace_ids = {s.trace_id for s in spans}
    if len(trace_ids) > 1:
        first = spans[0].trace_id
        odd = next(s for s in spans if s.trace_id != first)
        raise MalformedRecord(lines[odd.span_id], f"trace id {odd.trace_id} differs from {first}")

    known = set(lines)
    for span in spans:
        for parent in span.parent_ids:
            if parent not in known and not allow_dangling:
                raise DanglingParent(span.span_id, parent)
    _check_acyclic(spans, lines)
    return SpanTrace(trace_id=spans[0].trace_id if spans else "", spans=tuple(spans))


def _check_acyclic(spans: list[Span], lines: Mapping[str, int]) -> None:
    parents = {s.span_id: [p for p in s.parent_ids if p in lines] for s in spans}
    state: dict[str, int] = {}  # 1 = on stack, 2 = done
    for root in parents:
        if state.get(root) == 2:
            continue
        stack = [(root, iter(parents[root]))]
        state[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[node] = 2
                stack.pop()
            elif state.get(nxt) == 1:
                raise MalformedRecord(lines[nxt], f"parent cycle through span {nxt}")
            elif nxt not in state:
                state[nxt] = 1
                stack.append((nxt, iter(parents[nxt])))


def render_span(span: Span) -> str:
    obj = {
        "i": span.trace_id,
        "s": span.span_id,
        "b": span.begin_ms,
        "e": span.end_ms,
        "r": span.process,
        "p": list(span.parent_ids),
        "d": span.function,
    }
    return json.dumps(obj, separators=(", ", ":"), ensure_ascii=False)


def render_span_trace(trace: SpanTrace) -> str:
    return "".join(render_span(s) + "\n" for s in trace.spans)


# --------------------------------------------------------------------------
# statistics


@dataclass(frozen=True)
class FunctionStats:
    function: str
    durations_ms: tuple[int, ...]  # sorted, so equal multisets compare equal

    @classmethod
    def of(cls, function: str, durations: Iterable[int]) -> "FunctionStats":
        return cls(function, tuple(sorted(durations)))

    @property
    def invocation_count(self) -> int:
        return len(self.durations_ms)

    @property
    def mean_ms(self) -> float:
        if not self.durations_ms:
            return 0.0
        return math.fsum(self.durations_ms) / len(self.durations_ms)

    @property
    def max_ms(self) -> int:
        return max(self.durations_ms, default=0)

    @property
    def stddev_ms(self) -> float:
        """Population standard deviation."""
        n = len(self.durations_ms)
        if n == 0:
            return 0.0
        mean = self.mean_ms
        return math.sqrt(math.fsum((d - mean) ** 2 for d in self.durations_ms) / n)

    @property
    def median_ms(self) -> float:
        d = self.durations_ms
        if not d:
            return 0.0
        mid = len(d) // 2
        return float(d[mid]) if len(d) % 2 else (d[mid - 1] + d[mid]) / 2


def compute_function_stats(trace: SpanTrace) -> dict[str, FunctionStats]:
    durations: dict[str, list[int]] = defaultdict(list)
    for span in trace.spans:
        durations[span.function].append(span.duration_ms)
    return {fn: FunctionStats.of(fn, ds) for fn, ds in sorted(durations.items())}


class AnomalyKind(str, Enum):
    DURATION_SPIKE = "DurationSpike"
    FREQUENCY_SPIKE = "FrequencySpike"


@dataclass(frozen=True)
class AnomalyPolicy:
    """Thresholds for flagging abnormal functions against a baseline run.

    Invocation rates are counts per capture window; current and baseline
    captures are assumed to span comparable windows.
    """

    k_stddev: float = 3.0
    duration_factor: float = 2.0
    frequency_factor: float = 5.0
    min_baseline_samples: int = 5
    strict: bool = False
    alert_align_tolerance_ms: int = 1000
    match_tolerance: float = 0.10
    prune_tolerance_ms: int = 2000

    @classmethod
    def from_dict(cls, data: Mapping) -> "AnomalyPolicy":
        allowed = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in data.items() if k in allowed})


@dataclass(frozen=True)
class FunctionAnomaly:
    function: str
    kind: AnomalyKind
    magnitude: float


def compare_against_baseline(
    current: Mapping[str, FunctionStats],
    baseline: Mapping[str, FunctionStats],
    policy: AnomalyPolicy = AnomalyPolicy(),
) -> list[FunctionAnomaly]:
    """Flag duration and frequency spikes.

    A duration spike needs the current max to clear both ``mean + k*stddev``
    and ``duration_factor * max`` of the baseline, and is only evaluated when
    the baseline holds at least ``min_baseline_samples`` invocations.
    Magnitudes are ratios: current max over baseline max, current count over
    baseline count.
    """
    anomalies: list[FunctionAnomaly] = []
    for fn in sorted(current):
        cur = current[fn]
        base = baseline.get(fn)
        if base is None or base.invocation_count == 0:
            if policy.strict:
                raise InsufficientBaseline(fn)
            continue

        if base.invocation_count >= policy.min_baseline_samples and cur.invocation_count:
            bound = base.mean_ms + policy.k_stddev * base.stddev_ms
            if cur.max_ms > bound and cur.max_ms > policy.duration_factor * base.max_ms:
                ratio = cur.max_ms / base.max_ms if base.max_ms else math.inf
                anomalies.append(FunctionAnomaly(fn, AnomalyKind.DURATION_SPIKE, ratio))

        if cur.invocation_count > policy.frequency_factor * base.invocation_count:
            ratio = cur.invocation_count / base.invocation_count
            anomalies.append(FunctionAnomaly(fn, AnomalyKind.FREQUENCY_SPIKE, ratio))
    return anomalies
