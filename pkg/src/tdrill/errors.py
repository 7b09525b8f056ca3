"""Exception hierarchy shared by every analysis stage."""

from __future__ import annotations


class TdrillError(Exception):
    """Base class. ``stage`` is filled in by the pipeline when it re-raises."""

    stage: str | None = None


class InputError(TdrillError):
    """Malformed or missing input files."""


# trace ingestion
class MalformedRecord(InputError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


class DanglingParent(InputError):
    def __init__(self, span_id: str, parent_id: str):
        super().__init__(f"span {span_id} references unknown parent {parent_id}")
        self.span_id = span_id
        self.parent_id = parent_id


class NegativeDuration(InputError):
    def __init__(self, line: int, span_id: str):
        super().__init__(f"line {line}: span {span_id} ends before it begins")
        self.line = line


class InsufficientBaseline(TdrillError):
    def __init__(self, function: str):
        super().__init__(f"no baseline statistics for {function}")
        self.function = function


# drilldown
class EmptyWindow(TdrillError):
    pass


# misused analysis
class AmbiguousAnomaly(TdrillError):
    def __init__(self, function: str, directions):
        super().__init__(f"{function} shows both duration and frequency spikes")
        self.function = function
        self.directions = tuple(directions)


# taint
class UnresolvedId(InputError):
    def __init__(self, ident: str, where: str):
        super().__init__(f"unresolved id {ident!r} in {where}")
        self.ident = ident


class DuplicateKey(InputError):
    def __init__(self, key: str):
        super().__init__(f"configuration key {key!r} defined twice")
        self.key = key


class UnitError(InputError):
    pass


# thread dumps
class MalformedFrame(InputError):
    def __init__(self, line: int, text: str):
        super().__init__(f"line {line}: cannot parse {text.strip()!r}")
        self.line = line


class EmptyDump(InputError):
    pass


class InsufficientDumps(TdrillError):
    pass


class NoCommonFunction(TdrillError):
    def __init__(self, threads):
        threads = tuple(threads)
        super().__init__("no common application frame in thread(s): " + ", ".join(threads))
        self.threads = threads


class NoSurvivor(TdrillError):
    pass


# patch planning
class UnknownCallsite(TdrillError):
    pass


class AlreadyPatched(TdrillError):
    pass


# prediction
class Underdetermined(TdrillError):
    def __init__(self, samples: int, terms: int):
        super().__init__(f"{samples} samples cannot determine {terms} polynomial terms")
        self.samples = samples
        self.terms = terms


class NonPositiveObservation(TdrillError):
    pass


class NegativePrediction(TdrillError):
    def __init__(self, value_ms: float):
        super().__init__(f"predicted timeout {value_ms:.3f} ms is not positive")
        self.value_ms = value_ms


class UnderestimationWarning(UserWarning):
    """Padding ratio came out negative; the prediction is shrunk below the fit."""


class DegenerateFeaturesWarning(UserWarning):
    """Design matrix was rank deficient; a minimum-norm solution was used."""


# validation
class LaunchFailure(TdrillError):
    pass


class Inconclusive(TdrillError):
    """The pipeline ran but could not settle on a root cause."""
