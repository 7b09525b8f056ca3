"""Misused-timeout analysis: affected functions, direction and variable."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

from .errors import AmbiguousAnomaly
from .taint import TaintedUse, TimeoutVariable
from .trace import AnomalyKind, AnomalyPolicy, FunctionStats, compare_against_baseline


class Direction(str, Enum):
    TOO_LARGE = "TooLarge"
    TOO_SMALL = "TooSmall"


@dataclass(frozen=True)
class AffectedFunction:
    function: str
    kinds: frozenset[AnomalyKind]
    observed: FunctionStats
    baseline: FunctionStats | None
    magnitude: float = 0.0


@dataclass(frozen=True)
class MisusedVerdict:
    direction: Direction
    affected: AffectedFunction
    variable: TimeoutVariable | None  # None means a hard-coded value is suspected
    evidence: str
    alternates: tuple[TimeoutVariable, ...] = field(default=())

    @property
    def hard_coded(self) -> bool:
        return self.variable is None


def identify_affected_functions(
    current: Mapping[str, FunctionStats],
    baseline: Mapping[str, FunctionStats],
    policy: AnomalyPolicy = AnomalyPolicy(),
) -> list[AffectedFunction]:
    """Wrap baseline anomalies per function, strongest first."""
    grouped: dict[str, list] = {}
    for anomaly in compare_against_baseline(current, baseline, policy):
        grouped.setdefault(anomaly.function, []).append(anomaly)
    out = [
        AffectedFunction(
            function=fn,
            kinds=frozenset(a.kind for a in anomalies),
            observed=current[fn],
            baseline=baseline.get(fn),
            magnitude=max(a.magnitude for a in anomalies),
        )
        for fn, anomalies in grouped.items()
    ]
    out.sort(key=lambda a: (-a.magnitude, a.function))
    return out


def differentiate(affected: AffectedFunction) -> Direction:
    """Longer executions point at a too-large value, more frequent ones at too-small."""
    dur = AnomalyKind.DURATION_SPIKE in affected.kinds
    freq = AnomalyKind.FREQUENCY_SPIKE in affected.kinds
    if dur and freq:
        raise AmbiguousAnomaly(affected.function, (Direction.TOO_LARGE, Direction.TOO_SMALL))
    if dur:
        return Direction.TOO_LARGE
    if freq:
        return Direction.TOO_SMALL
    raise ValueError(f"{affected.function} carries no anomaly")


def matches_value(observed_ms: float, value_ms: float, tolerance: float) -> bool:
    return abs(observed_ms - value_ms) <= tolerance * value_ms


def cross_validate(
    affected: AffectedFunction,
    direction: Direction,
    candidates: Sequence[TaintedUse],
    tolerance: float = 0.10,
) -> MisusedVerdict:
    """Keep the candidates whose value is consistent with the observed times.

    Too large: the value is at least the longest observed execution (tracing
    may have stopped before the timeout fired).  Too small: the typical
    (median) execution lies within ``tolerance`` of the value.  The closest
    survivor wins, ties broken by variable id.
    """
    observed_max = affected.observed.max_ms
    observed_typ = affected.observed.median_ms
    scored: list[tuple[float, str, TimeoutVariable]] = []
    for use in candidates:
        var = use.variable
        value = var.effective_value_ms
        if value is None:
            continue
        if direction is Direction.TOO_LARGE:
            if value >= observed_max:
                scored.append((value - observed_max, var.id, var))
        elif value > 0 and matches_value(observed_typ, value, tolerance):
            scored.append((abs(observed_typ - value), var.id, var))
    scored.sort(key=lambda s: (s[0], s[1]))

    if direction is Direction.TOO_LARGE:
        relation = f"max observed {observed_max} ms <= value"
    else:
        relation = f"median observed {observed_typ:g} ms within {tolerance:.0%} of value"
    if not scored:
        tried = ", ".join(sorted(u.variable.id for u in candidates)) or "none"
        return MisusedVerdict(
            direction,
            affected,
            None,
            f"no tainted variable satisfies {relation} (candidates: {tried})",
        )
    best = scored[0][2]
    return MisusedVerdict(
        direction,
        affected,
        best,
        f"{best.id} = {best.effective_value_ms} ms; {relation}",
        alternates=tuple(s[2] for s in scored[1:]),
    )


def resolve(
    affected: AffectedFunction,
    candidates: Sequence[TaintedUse],
    tolerance: float = 0.10,
) -> MisusedVerdict:
    """differentiate + cross_validate, settling ambiguous anomalies.

    When both spikes are present each direction is tried; a direction with a
    surviving variable is preferred, too-large first.
    """
    try:
        direction = differentiate(affected)
    except AmbiguousAnomaly as amb:
        verdicts = [cross_validate(affected, d, candidates, tolerance) for d in amb.directions]
        return next((v for v in verdicts if not v.hard_coded), verdicts[0])
    return cross_validate(affected, direction, candidates, tolerance)
