from __future__ import annotations

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from tdrill.errors import AmbiguousAnomaly
from tdrill.misused import (
    AffectedFunction,
    Direction,
    cross_validate,
    differentiate,
    identify_affected_functions,
    matches_value,
    resolve,
)
from tdrill.taint import Origin, TaintedUse, TimeoutVariable
from tdrill.trace import AnomalyKind, FunctionStats

DUR, FREQ = AnomalyKind.DURATION_SPIKE, AnomalyKind.FREQUENCY_SPIKE
F = "TransferFsImage.doGetUrl"


def _affected(durations, kinds=(FREQ,), fn=F):
    return AffectedFunction(fn, frozenset(kinds), FunctionStats.of(fn, durations), None)


def _use(ident, value, fn=F):
    return TaintedUse(fn, TimeoutVariable(ident, Origin.CONFIG_KEY, value))


def test_hdfs4301_shape_is_frequency_spike():
    current = {F: FunctionStats.of(F, [59800 + 15 * i for i in range(40)])}
    baseline = {F: FunctionStats.of(F, [31000, 33000])}
    (a,) = identify_affected_functions(current, baseline)
    assert a.kinds == {FREQ}
    assert a.magnitude == pytest.approx(20)
    assert differentiate(a) is Direction.TOO_SMALL


def test_rpc_client_hang_is_duration_spike():
    fn = "RpcRetryingCaller.callWithRetries"
    current = {fn: FunctionStats.of(fn, [120_000])}
    baseline = {fn: FunctionStats.of(fn, [20, 25, 30, 35, 40, 45])}
    (a,) = identify_affected_functions(current, baseline)
    assert a.kinds == {DUR}
    assert differentiate(a) is Direction.TOO_LARGE


def test_no_anomalies():
    s = {F: FunctionStats.of(F, [10, 11, 12, 13, 14])}
    assert identify_affected_functions(s, s) == []


def test_affected_sorted_by_magnitude():
    base = {"a": FunctionStats.of("a", [10]), "b": FunctionStats.of("b", [10])}
    cur = {"a": FunctionStats.of("a", [10] * 6), "b": FunctionStats.of("b", [10] * 30)}
    assert [a.function for a in identify_affected_functions(cur, base)] == ["b", "a"]


def test_ambiguous_both_kinds():
    with pytest.raises(AmbiguousAnomaly) as ei:
        differentiate(_affected([1], (DUR, FREQ)))
    assert set(ei.value.directions) == {Direction.TOO_LARGE, Direction.TOO_SMALL}


def test_ambiguous_resolved_by_surviving_candidate():
    a = _affected([600] * 10, (DUR, FREQ))
    v = resolve(a, [_use("x.timeout", 580)])  # below the max, so only too-small survives
    assert v.direction is Direction.TOO_SMALL and v.variable.id == "x.timeout"


def test_hdfs4301_too_small_selects_transfer_timeout():
    a = _affected([59800, 59950, 60000, 60050, 60100])
    v = cross_validate(a, Direction.TOO_SMALL, [_use("dfs.image.transfer.timeout", 60000), _use("dfs.client.socket-timeout", 200000)])
    assert v.variable.id == "dfs.image.transfer.timeout"
    assert v.alternates == ()


def test_too_large_keeps_two_hours():
    a = _affected([100, 120_000], (DUR,))
    v = cross_validate(a, Direction.TOO_LARGE, [_use("dfs.client.socket-timeout", 7_200_000)])
    assert v.variable.effective_value_ms == 7_200_000


def test_too_large_rejects_smaller_value():
    a = _affected([120_000], (DUR,))
    assert cross_validate(a, Direction.TOO_LARGE, [_use("x.timeout", 119_999)]).hard_coded


def test_no_candidates_is_hard_coded():
    v = cross_validate(_affected([600] * 5), Direction.TOO_SMALL, [])
    assert v.hard_coded and v.variable is None


def test_closest_then_lexicographic():
    a = _affected([1000] * 5)
    v = cross_validate(a, Direction.TOO_SMALL, [_use("b.timeout", 1050), _use("a.timeout", 950), _use("c.timeout", 1010)])
    assert v.variable.id == "c.timeout"
    assert [x.id for x in v.alternates] == ["a.timeout", "b.timeout"]


@given(st.floats(1, 1e7), st.floats(1, 1e7), st.floats(0.01, 0.5))
def test_tolerance_rule(d, v, tol):
    assert matches_value(d, v, tol) == (abs(d - v) <= tol * v)


values = st.integers(1, 10**7)


@given(st.lists(values, min_size=1, max_size=8), st.lists(values, min_size=0, max_size=5), values,
       st.sampled_from(list(Direction)))
def test_non_matching_candidate_is_inert(durations, cand_values, extra, direction):
    a = _affected(durations, (DUR if direction is Direction.TOO_LARGE else FREQ,))
    uses = [_use(f"v{i}.timeout", x) for i, x in enumerate(cand_values)]
    base = cross_validate(a, direction, uses)
    if direction is Direction.TOO_LARGE:
        assume(extra < a.observed.max_ms)
    else:
        assume(not matches_value(a.observed.median_ms, extra, 0.10))
    more = cross_validate(a, direction, uses + [_use("zz.extra.timeout", extra)])
    assert more.variable == base.variable


@given(st.lists(values, min_size=1, max_size=8), st.lists(values, min_size=1, max_size=6))
def test_verdict_evidence_holds(durations, cand_values):
    a = _affected(durations, (DUR,))
    uses = [_use(f"v{i}.timeout", x) for i, x in enumerate(cand_values)]
    v = cross_validate(a, Direction.TOO_LARGE, uses)
    if v.variable:
        assert a.observed.max_ms <= v.variable.effective_value_ms
    v = cross_validate(a, Direction.TOO_SMALL, uses)
    if v.variable:
        assert matches_value(a.observed.median_ms, v.variable.effective_value_ms, 0.10)
