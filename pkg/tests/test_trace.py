from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import durations_trace, fixture_text, make_trace
from tdrill.errors import DanglingParent, InsufficientBaseline, MalformedRecord, NegativeDuration
from tdrill.trace import (
    AnomalyKind,
    AnomalyPolicy,
    FunctionStats,
    Span,
    SpanTrace,
    compare_against_baseline,
    compute_function_stats,
    parse_span_trace,
    render_span_trace,
)

SAMPLE_LINE = (
    '{"i":"1b1bdfddac521ce8","s":"df4646ae00070999","b":1543260568612,"e":1543260568654,'
    '"r":"RunJar","p":["84d19776da97fe78"],"d":"...ClientProtocol.getDatanodeReport"}'
)


def test_single_line_record_duration():
    tr = parse_span_trace(SAMPLE_LINE, allow_dangling=True)
    (span,) = tr.spans
    assert span.duration_ms == 42
    assert span.trace_id == "1b1bdfddac521ce8"
    assert span.parent_ids == ("84d19776da97fe78",)
    assert span.process == "RunJar"


def test_wrapped_fixture_record():
    tr = parse_span_trace(fixture_text("sample_record.trace"), allow_dangling=True)
    (span,) = tr.spans
    assert span.duration_ms == 42
    assert span.function == "org.apache.hadoop.hdfs.protocol.ClientProtocol.getDatanodeReport"


def test_dangling_parent_rejected_by_default():
    with pytest.raises(DanglingParent):
        parse_span_trace(SAMPLE_LINE)


def test_empty_input():
    tr = parse_span_trace("")
    assert tr.spans == ()
    assert tr.window is None


def test_zero_duration_accepted():
    tr = parse_span_trace('{"i":"a","s":"x","b":1000,"e":1000,"r":"P","p":[],"d":"f"}')
    assert tr.spans[0].duration_ms == 0


def test_negative_duration():
    with pytest.raises(NegativeDuration):
        parse_span_trace('{"i":"a","s":"x","b":1000,"e":999,"r":"P","p":[],"d":"f"}')


def test_malformed_record_reports_line():
    text = '{"i":"a","s":"x","b":1,"e":2,"r":"P","p":[],"d":"f"}\n{"i":"a","s":"y","b":'
    with pytest.raises(MalformedRecord) as ei:
        parse_span_trace(text)
    assert ei.value.line == 2


def test_cycle_rejected():
    text = "\n".join([
        '{"i":"a","s":"x","b":1,"e":2,"r":"P","p":["y"],"d":"f"}',
        '{"i":"a","s":"y","b":1,"e":2,"r":"P","p":["x"],"d":"g"}',
    ])
    with pytest.raises(MalformedRecord):
        parse_span_trace(text)


def test_mixed_trace_ids_rejected():
    text = "\n".join([
        '{"i":"a","s":"x","b":1,"e":2,"r":"P","p":[],"d":"f"}',
        '{"i":"b","s":"y","b":1,"e":2,"r":"P","p":[],"d":"g"}',
    ])
    with pytest.raises(MalformedRecord):
        parse_span_trace(text)


def test_unknown_keys_logged(caplog):
    tr = parse_span_trace('{"i":"a","s":"x","b":1,"e":2,"r":"P","p":[],"d":"f","zz":1}')
    assert tr.spans[0].function == "f"
    assert "zz" in caplog.text


def test_stats_by_hand():
    stats = compute_function_stats(durations_trace({"f": [10, 20, 30]}))
    f = stats["f"]
    assert (f.invocation_count, f.mean_ms, f.max_ms) == (3, 20, 30)
    assert f.stddev_ms == pytest.approx((200 / 3) ** 0.5)


def test_stats_keys_complete():
    assert set(compute_function_stats(durations_trace({"f": [1], "g": [2, 3]}))) == {"f", "g"}
    assert compute_function_stats(SpanTrace("t", ())) == {}


def _stats(fn, durations):
    return {fn: FunctionStats.of(fn, durations)}


def test_duration_spike_magnitude():
    base = _stats("f", [40, 60] + [50] * 6)
    f = base["f"]
    assert (f.mean_ms, f.stddev_ms, f.max_ms) == (50, 5, 60)
    cur = _stats("f", [120000])
    (a,) = compare_against_baseline(cur, base)
    assert a.kind is AnomalyKind.DURATION_SPIKE
    assert a.magnitude == pytest.approx(2000.0)


def test_frequency_spike_magnitude():
    (a,) = compare_against_baseline(_stats("f", [100] * 40), _stats("f", [100] * 2))
    assert a.kind is AnomalyKind.FREQUENCY_SPIKE
    assert a.magnitude == pytest.approx(20.0)


def test_small_baseline_gates_duration_only():
    # two baseline samples: too few for the duration check, enough for frequency
    assert compare_against_baseline(_stats("f", [9000]), _stats("f", [100, 100])) == []


def test_strict_policy_requires_baseline():
    with pytest.raises(InsufficientBaseline):
        compare_against_baseline(_stats("g", [1]), {}, AnomalyPolicy(strict=True))
    assert compare_against_baseline(_stats("g", [1]), {}) == []


span_rows = st.lists(
    st.tuples(
        st.sampled_from(["f", "g", "h.x", "ünï"]),
        st.integers(0, 10**13),
        st.integers(0, 10**6),
    ),
    max_size=25,
)


def _trace_from(rows):
    spans = [Span("tid", f"s{i}", (), b, b + d, "Proc", fn) for i, (fn, b, d) in enumerate(rows)]
    if spans:
        spans[-1] = Span("tid", spans[-1].span_id, (spans[0].span_id,) if len(spans) > 1 else (),
                         spans[-1].begin_ms, spans[-1].end_ms, "Proc", spans[-1].function)
    return SpanTrace("tid" if spans else "", tuple(spans))


@given(span_rows)
def test_render_parse_round_trip(rows):
    tr = _trace_from(rows)
    assert parse_span_trace(render_span_trace(tr)) == tr


@given(span_rows)
def test_duration_is_end_minus_begin(rows):
    for s in parse_span_trace(render_span_trace(_trace_from(rows))).spans:
        assert s.duration_ms == s.end_ms - s.begin_ms >= 0


@settings(max_examples=60)
@given(span_rows, span_rows, st.randoms())
def test_comparison_permutation_invariant(cur_rows, base_rows, rnd):
    cur, base = _trace_from(cur_rows), _trace_from(base_rows)
    want = compare_against_baseline(compute_function_stats(cur), compute_function_stats(base))
    shuffled = list(cur.spans)
    rnd.shuffle(shuffled)
    got = compare_against_baseline(
        compute_function_stats(SpanTrace(cur.trace_id, tuple(shuffled))), compute_function_stats(base)
    )
    assert got == want


@given(span_rows)
def test_self_comparison_is_quiet(rows):
    stats = compute_function_stats(_trace_from(rows))
    assert compare_against_baseline(stats, stats) == []
