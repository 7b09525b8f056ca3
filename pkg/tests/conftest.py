from __future__ import annotations

from pathlib import Path

import pytest

from tdrill.trace import Span, SpanTrace

FIXTURES = Path(__file__).parent / "fixtures"


def fixture_text(name: str) -> str:
    return (FIXTURES / name).read_text(encoding="utf-8")


def make_trace(rows, trace_id: str = "t1", process: str = "P") -> SpanTrace:
    """Build a trace from ``(function, begin, end)`` or ``(function, begin, end, parents)`` rows."""
    spans = []
    for n, row in enumerate(rows):
        fn, b, e = row[:3]
        parents = tuple(row[3]) if len(row) > 3 else ()
        spans.append(Span(trace_id, f"s{n}", parents, b, e, process, fn))
    return SpanTrace(trace_id, tuple(spans))


def durations_trace(spec: dict[str, list[int]], trace_id: str = "t1", gap: int = 10) -> SpanTrace:
    """One span per duration, laid end to end, for each function."""
    rows, t = [], 1000
    for fn, durations in spec.items():
        for d in durations:
            rows.append((fn, t, t + d))
            t += d + gap
    return make_trace(rows, trace_id)


@pytest.fixture(scope="session")
def bundles(tmp_path_factory):
    """The sixteen benchmark bundles plus the hard-coded one, generated once."""
    from tdrill.faultlab.generator import generate, hard_coded_spec, table2_specs

    root = tmp_path_factory.mktemp("bundles")
    out = {}
    for spec in table2_specs() + [hard_coded_spec()]:
        out[spec.name] = generate(spec, root / spec.name)
    return out
