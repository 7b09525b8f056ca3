"""Drill-down orchestration: classify the bug, dispatch, assemble a Diagnosis."""

from __future__ import annotations

import json
import logging
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import (
    EmptyWindow,
    Inconclusive,
    InputError,
    NoSurvivor,
    TdrillError,
    UnknownCallsite,
)
from .misused import Direction, MisusedVerdict, identify_affected_functions, resolve
from .patch import ApiCatalog, Callsite, LoopSite, PatchPlan, load_catalog, plan_blocking_fix, plan_loop_fix
from .predictor import Dataset, PaddingMode, Prediction, load_dataset, recommend
from .stacks import (
    DEFAULT_FRAMEWORK_PREFIXES,
    HangType,
    RootCauseCandidate,
    StackDump,
    classify_hang,
    common_innermost,
    function_matches,
    parse_thread_dumps,
    prune_background,
    survivors,
)
from .taint import (
    Edge,
    Origin,
    TaintFactBase,
    TimeoutVariable,
    load_facts,
    propagate,
    seed_timeout_variables,
    tainted_uses,
)
from .trace import AnomalyPolicy, SpanTrace, compute_function_stats, parse_span_trace

log = logging.getLogger(__name__)

BUNDLE_SCHEMA = "tdrill-bundle/1"

# Timer, timed-wait and timed-I/O entry points.  Matching is exact, or by
# prefix when the pattern names an enclosing class/package or ends in "*".
DEFAULT_TIMEOUT_PATTERNS = (
    "java.net.Socket.connect",
    "java.net.Socket.setSoTimeout",
    "java.net.URLConnection.setConnectTimeout",
    "java.net.URLConnection.setReadTimeout",
    "java.net.HttpURLConnection.setConnectTimeout",
    "java.net.HttpURLConnection.setReadTimeout",
    "java.nio.channels.Selector.select",
    "java.lang.Object.wait",
    "java.lang.Thread.join",
    "java.util.Timer",
    "java.util.concurrent.Future.get",
    "java.util.concurrent.FutureTask.get",
    "java.util.concurrent.CountDownLatch.await",
    "java.util.concurrent.BlockingQueue.poll",
    "java.util.concurrent.BlockingQueue.offer",
    "java.util.concurrent.ScheduledExecutorService.schedule",
    "java.util.concurrent.locks.Condition.await",
    "java.util.concurrent.locks.Lock.tryLock",
    "org.apache.hadoop.net.NetUtils.connect",
    "org.apache.hadoop.ipc.Client.getTimeout",
    "org.apache.hadoop.util.Timer",
    "org.apache.flume.instrumentation.MonitorCounterGroup",
)


@dataclass(frozen=True)
class AnomalyAlert:
    alert_time_ms: int
    affected_process: str
    window_start_ms: int
    window_end_ms: int
    features: Mapping[str, float] | None = None  # runtime metrics for the prediction query
    impact: str | None = None

    def __post_init__(self):
        if not self.window_start_ms <= self.alert_time_ms <= self.window_end_ms:
            raise InputError(
                f"alert time {self.alert_time_ms} outside window "
                f"[{self.window_start_ms}, {self.window_end_ms}]"
            )

    @property
    def window(self) -> tuple[int, int]:
        return self.window_start_ms, self.window_end_ms

    def to_dict(self) -> dict:
        d = {
            "alert_time_ms": self.alert_time_ms,
            "affected_process": self.affected_process,
            "window": [self.window_start_ms, self.window_end_ms],
        }
        if self.features is not None:
            d["features"] = dict(self.features)
        if self.impact is not None:
            d["impact"] = self.impact
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "AnomalyAlert":
        try:
            start, end = d["window"]
            return cls(
                int(d["alert_time_ms"]), str(d["affected_process"]), int(start), int(end),
                {k: float(v) for k, v in d["features"].items()} if d.get("features") else None,
                d.get("impact"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"bad alert document: {exc}") from exc


def load_alert(path: str | Path) -> AnomalyAlert:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot load alert {path}: {exc}") from exc
    return AnomalyAlert.from_dict(doc)


@dataclass(frozen=True)
class TimeoutFunctionRegistry:
    patterns: tuple[str, ...] = DEFAULT_TIMEOUT_PATTERNS

    def __post_init__(self):
        if any(not p.strip() for p in self.patterns):
            raise InputError("registry patterns must be non-empty")

    def matches(self, function: str) -> bool:
        for p in self.patterns:
            if p.endswith("*"):
                if function.startswith(p[:-1]):
                    return True
            elif function == p or function.startswith(p + "."):
                return True
        return False

    def extend(self, patterns: Iterable[str]) -> "TimeoutFunctionRegistry":
        return TimeoutFunctionRegistry(tuple(dict.fromkeys(self.patterns + tuple(patterns))))

    @classmethod
    def from_file(cls, path: str | Path, include_defaults: bool = True) -> "TimeoutFunctionRegistry":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        pats = tuple(l.strip() for l in lines if l.strip() and not l.lstrip().startswith("#"))
        return cls().extend(pats) if include_defaults else cls(pats)


class BugClass(str, Enum):
    MISUSED = "Misused"
    MISSING = "Missing"


class BugCategory(str, Enum):
    MISUSED_TOO_LARGE = "MisusedTooLarge"
    MISUSED_TOO_SMALL = "MisusedTooSmall"
    MISSING_TIMEOUT = "MissingTimeout"
    HARD_CODED_SUSPECTED = "HardCodedSuspected"


def classify_bug(
    trace: SpanTrace,
    alert: AnomalyAlert,
    registry: TimeoutFunctionRegistry = TimeoutFunctionRegistry(),
    tolerance_ms: int = 0,
) -> BugClass:
    """Misused when timeout machinery ran inside the alert window."""
    start, end = alert.window
    inside = trace.in_window(start - tolerance_ms, end + tolerance_ms)
    if not inside:
        raise EmptyWindow(f"no spans overlap the alert window [{start}, {end}]")
    if any(registry.matches(s.function) for s in inside):
        return BugClass.MISUSED
    return BugClass.MISSING


# --------------------------------------------------------------------------
# diagnosis record


def _variable_to_dict(v: TimeoutVariable) -> dict:
    return {
        "id": v.id,
        "origin": v.origin.value,
        "effective_value_ms": v.effective_value_ms,
        "taint_path": [[e.kind, e.src, e.dst] for e in v.taint_path],
        "default_constant": v.default_constant,
    }


def _variable_from_dict(d: Mapping) -> TimeoutVariable:
    return TimeoutVariable(
        d["id"], Origin(d["origin"]), d.get("effective_value_ms"),
        tuple(Edge(*e) for e in d.get("taint_path", ())), d.get("default_constant"),
    )


def _candidate_to_dict(c: RootCauseCandidate) -> dict:
    return {
        "function": c.function,
        "thread": c.thread,
        "file": c.file,
        "lines": sorted(c.line_numbers_observed),
        "is_background": c.is_background,
        "hang_type": c.hang_type.value if c.hang_type else None,
    }


def _candidate_from_dict(d: Mapping) -> RootCauseCandidate:
    return RootCauseCandidate(
        d["function"], d["thread"], d.get("file"), frozenset(d["lines"]), d["is_background"],
        HangType(d["hang_type"]) if d.get("hang_type") else None,
    )


@dataclass(frozen=True)
class Diagnosis:
    bug_category: BugCategory
    root_cause_function: str
    misused_variable: TimeoutVariable | None = None
    hang_type: HangType | None = None
    patch_plan: PatchPlan | None = None
    prediction: Prediction | None = None
    diagnosis_time_ms: float = 0.0
    direction: Direction | None = None  # set for misused and hard-coded verdicts
    buggy_value_ms: int | None = None
    impact: str | None = None
    evidence: tuple[str, ...] = ()
    alternates: tuple[str, ...] = ()
    candidates: tuple[RootCauseCandidate, ...] = ()

    def __post_init__(self):
        misused = self.bug_category in (BugCategory.MISUSED_TOO_LARGE, BugCategory.MISUSED_TOO_SMALL)
        if misused and self.misused_variable is None:
            raise ValueError("misused diagnosis needs a variable")
        if self.bug_category is BugCategory.HARD_CODED_SUSPECTED and self.misused_variable is not None:
            raise ValueError("hard-coded diagnosis cannot name a variable")
        if self.bug_category is BugCategory.MISSING_TIMEOUT and (self.hang_type is None or self.patch_plan is None):
            raise ValueError("missing-timeout diagnosis needs hang type and patch plan")

    @property
    def recommended_value_ms(self) -> float | None:
        return self.prediction.t_predict_ms if self.prediction else None

    def to_dict(self) -> dict:
        return {
            "bug_category": self.bug_category.value,
            "root_cause_function": self.root_cause_function,
            "misused_variable": _variable_to_dict(self.misused_variable) if self.misused_variable else None,
            "hang_type": self.hang_type.value if self.hang_type else None,
            "patch_plan": self.patch_plan.to_dict() if self.patch_plan else None,
            "prediction": self.prediction.to_dict() if self.prediction else None,
            "diagnosis_time_ms": self.diagnosis_time_ms,
            "direction": self.direction.value if self.direction else None,
            "buggy_value_ms": self.buggy_value_ms,
            "impact": self.impact,
            "evidence": list(self.evidence),
            "alternates": list(self.alternates),
            "candidates": [_candidate_to_dict(c) for c in self.candidates],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Diagnosis":
        return cls(
            bug_category=BugCategory(d["bug_category"]),
            root_cause_function=d["root_cause_function"],
            misused_variable=_variable_from_dict(d["misused_variable"]) if d.get("misused_variable") else None,
            hang_type=HangType(d["hang_type"]) if d.get("hang_type") else None,
            patch_plan=PatchPlan.from_dict(d["patch_plan"]) if d.get("patch_plan") else None,
            prediction=Prediction.from_dict(d["prediction"]) if d.get("prediction") else None,
            diagnosis_time_ms=d.get("diagnosis_time_ms", 0.0),
            direction=Direction(d["direction"]) if d.get("direction") else None,
            buggy_value_ms=d.get("buggy_value_ms"),
            impact=d.get("impact"),
            evidence=tuple(d.get("evidence", ())),
            alternates=tuple(d.get("alternates", ())),
            candidates=tuple(_candidate_from_dict(c) for c in d.get("candidates", ())),
        )


# --------------------------------------------------------------------------
# inputs


@dataclass(frozen=True)
class DrilldownInputs:
    trace: SpanTrace
    alert: AnomalyAlert
    baseline: SpanTrace | None = None
    dumps: tuple[StackDump, ...] = ()
    facts: TaintFactBase | None = None
    catalog: ApiCatalog | None = None
    dataset: Dataset | None = None
    interrupted: SpanTrace | None = None
    termination_time_ms: int | None = None
    sources: Mapping[str, str] = field(default_factory=dict)  # file name -> pseudo-source text
    config_path: str = "conf/timeout-site.xml"
    config_text: str | None = None
    registry: TimeoutFunctionRegistry = TimeoutFunctionRegistry()
    policy: AnomalyPolicy = AnomalyPolicy()
    padding_mode: PaddingMode = PaddingMode.SAFE
    framework_prefixes: tuple[str, ...] = DEFAULT_FRAMEWORK_PREFIXES


def _read(path: str | Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc


def load_inputs(
    *,
    trace: str | Path,
    alert: str | Path,
    baseline: str | Path | None = None,
    dumps: str | Path | None = None,
    config: Sequence[str | Path] = (),
    facts: str | Path | None = None,
    catalog: str | Path | None = None,
    dataset: str | Path | None = None,
    interrupted: str | Path | None = None,
    termination_time_ms: int | None = None,
    sources: Mapping[str, str | Path] | None = None,
    policy: AnomalyPolicy = AnomalyPolicy(),
    padding_mode: PaddingMode | str = PaddingMode.SAFE,
    registry: TimeoutFunctionRegistry = TimeoutFunctionRegistry(),
) -> DrilldownInputs:
    """Parse every referenced file; errors carry the ingestion stage."""
    with stage("ingest"):
        cfg = [Path(c) for c in config]
        return DrilldownInputs(
            trace=parse_span_trace(_read(trace)),
            alert=load_alert(alert),
            baseline=parse_span_trace(_read(baseline)) if baseline else None,
            dumps=tuple(parse_thread_dumps(_read(dumps))) if dumps else (),
            facts=load_facts(cfg, facts) if (cfg or facts) else None,
            catalog=load_catalog(catalog) if catalog else None,
            dataset=load_dataset(dataset) if dataset else None,
            interrupted=parse_span_trace(_read(interrupted)) if interrupted else None,
            termination_time_ms=termination_time_ms,
            sources={name: _read(p) for name, p in (sources or {}).items()},
            config_path=cfg[0].name if cfg else "conf/timeout-site.xml",
            config_text=_read(cfg[0]) if cfg and cfg[0].suffix == ".xml" else None,
            registry=registry,
            policy=policy,
            padding_mode=PaddingMode(padding_mode),
        )


def load_bundle(directory: str | Path, **overrides) -> DrilldownInputs:
    """Load a bundle directory described by its ``bundle.json``."""
    root = Path(directory)
    try:
        doc = json.loads(_read(root / "bundle.json"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{root / 'bundle.json'}: {exc}") from exc
    if doc.get("schema") != BUNDLE_SCHEMA:
        raise InputError(f"unsupported bundle schema {doc.get('schema')!r}")

    def p(key):
        return root / doc[key] if doc.get(key) else None

    kwargs = dict(
        trace=p("trace"),
        alert=p("alert"),
        baseline=p("baseline"),
        dumps=p("dumps"),
        config=[root / c for c in doc.get("config", [])],
        facts=p("facts"),
        catalog=p("catalog"),
        dataset=p("dataset"),
        interrupted=p("interrupted"),
        termination_time_ms=doc.get("termination_time_ms"),
        sources={name: root / rel for name, rel in doc.get("sources", {}).items()},
    )
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return load_inputs(**kwargs)


# --------------------------------------------------------------------------
# pipeline


@contextmanager
def stage(name: str):
    """Tag any analysis error escaping the block with the pipeline stage."""
    try:
        yield
    except TdrillError as exc:
        if exc.stage is None:
            exc.stage = name
        raise


def _impact(alert: AnomalyAlert, category: BugCategory, direction: Direction | None) -> str:
    if alert.impact:
        return alert.impact
    if category is BugCategory.MISSING_TIMEOUT:
        return "Hang"
    return "Job failure" if direction is Direction.TOO_SMALL else "Slowdown"


def _predict(inputs: DrilldownInputs, evidence: list[str]) -> Prediction | None:
    if inputs.dataset is None:
        evidence.append("no training dataset; timeout value not predicted")
        return None
    if not inputs.alert.features:
        evidence.append("alert carries no runtime features; timeout value not predicted")
        return None
    with stage("predict"):
        return recommend(inputs.dataset, inputs.alert.features, inputs.padding_mode)


def _misused(inputs: DrilldownInputs) -> dict:
    with stage("affected-functions"):
        if inputs.baseline is None:
            raise InputError("misused-timeout analysis needs a baseline trace (--baseline)")
        start, end = inputs.alert.window
        tol = inputs.policy.alert_align_tolerance_ms
        current = compute_function_stats(SpanTrace(inputs.trace.trace_id, tuple(
            inputs.trace.in_window(start - tol, end + tol))))
        base = compute_function_stats(inputs.baseline)
        affected = identify_affected_functions(current, base, inputs.policy)
    if not affected:
        raise Inconclusive("timeout machinery ran but no function deviates from the baseline")

    with stage("taint"):
        facts = inputs.facts
        tainted = propagate(facts, seed_timeout_variables(facts)) if facts else {}

    verdicts: list[MisusedVerdict] = []
    with stage("cross-validate"):
        for af in affected:
            uses = tainted_uses(facts, tainted, [af.function]) if facts else []
            verdicts.append(resolve(af, uses, inputs.policy.match_tolerance))
    chosen = next((v for v in verdicts if not v.hard_coded), None)
    if chosen is None:
        app = [v for v in verdicts if not inputs.registry.matches(v.affected.function)]
        chosen = (app or verdicts)[0]
    evidence = [chosen.evidence]
    if chosen.hard_coded:
        category = BugCategory.HARD_CODED_SUSPECTED
        evidence.append("the affected function reads no configurable timeout; a hard-coded value is suspected")
    elif chosen.direction is Direction.TOO_LARGE:
        category = BugCategory.MISUSED_TOO_LARGE
    else:
        category = BugCategory.MISUSED_TOO_SMALL
    others = [v.affected.function for v in verdicts if v is not chosen]
    if others:
        evidence.append("other affected functions: " + ", ".join(others))
    prediction = _predict(inputs, evidence)
    return dict(
        bug_category=category,
        root_cause_function=chosen.affected.function,
        misused_variable=chosen.variable,
        direction=chosen.direction,
        buggy_value_ms=chosen.variable.effective_value_ms if chosen.variable else None,
        prediction=prediction,
        evidence=tuple(evidence),
        alternates=tuple(v.id for v in chosen.alternates),
    )


def _find_callsite(catalog: ApiCatalog, cand: RootCauseCandidate) -> Callsite:
    line = next(iter(cand.line_numbers_observed)) if cand.line_numbers_observed else None
    if line is not None:
        cs = catalog.callsite_at(cand.file, line, cand.function)
        if cs is not None:
            return cs
    matches = [c for c in catalog.callsites if function_matches(c.function, cand.function)]
    if len(matches) == 1:
        return matches[0]
    raise UnknownCallsite(
        f"catalog has no callsite for {cand.function} at {cand.file}:{line}"
    )


def _missing(inputs: DrilldownInputs) -> dict:
    with stage("stack-analysis"):
        if len(inputs.dumps) == 0:
            raise InputError(
                "missing-timeout bug needs sequential thread dumps; pass --dumps with at least 2 captures"
            )
        cands = common_innermost(inputs.dumps, inputs.framework_prefixes)
        cands = [replace(c, hang_type=classify_hang(c)) for c in cands]

    evidence: list[str] = []
    with stage("prune"):
        if inputs.interrupted is not None:
            termination = inputs.termination_time_ms
            if termination is None:
                window = inputs.interrupted.window
                termination = window[1] if window else inputs.alert.window_end_ms
            base = compute_function_stats(inputs.baseline) if inputs.baseline else None
            cands = prune_background(
                cands, inputs.interrupted, inputs.alert.alert_time_ms, termination,
                base, inputs.policy.prune_tolerance_ms,
            )
        alive = survivors(cands)
        if not alive:
            raise NoSurvivor("every candidate looks like a long-running background thread")
    if len(alive) > 1:
        evidence.append("several candidates survived pruning: " + ", ".join(c.function for c in alive))
    root = min(alive, key=lambda c: (c.thread != "main", c.thread, c.function))
    evidence.append(
        f"{root.function} is the innermost common frame of thread {root.thread!r}; "
        f"lines observed {sorted(root.line_numbers_observed)}"
    )

    prediction = _predict(inputs, evidence)
    timeout_ms = math.ceil(prediction.t_predict_ms) if prediction else 0
    with stage("patch"):
        if root.hang_type is HangType.INFINITE_LOOP:
            site = LoopSite(root.function, root.file, tuple(sorted(root.line_numbers_observed)))
            plan = plan_loop_fix(
                site, source=inputs.sources.get(root.file or ""), config_text=inputs.config_text,
                config_path=inputs.config_path, timeout_ms=timeout_ms,
            )
        else:
            if inputs.catalog is None:
                raise InputError("blocking-call fix needs an API catalog (--catalog)")
            cs = _find_callsite(inputs.catalog, root)
            plan = plan_blocking_fix(
                cs, inputs.catalog, source=inputs.sources.get(cs.file), config_text=inputs.config_text,
                config_path=inputs.config_path, timeout_ms=timeout_ms,
            )
    return dict(
        bug_category=BugCategory.MISSING_TIMEOUT,
        root_cause_function=root.function,
        hang_type=root.hang_type,
        patch_plan=plan,
        prediction=prediction,
        evidence=tuple(evidence),
        candidates=tuple(cands),
    )


def run_drilldown(inputs: DrilldownInputs) -> Diagnosis:
    """Classify, dispatch to the misused or missing analyzer, and time it."""
    t0 = time.perf_counter()
    with stage("classify"):
        kind = classify_bug(inputs.trace, inputs.alert, inputs.registry, inputs.policy.alert_align_tolerance_ms)
    log.info("classified as %s", kind.value)
    fields = _misused(inputs) if kind is BugClass.MISUSED else _missing(inputs)
    elapsed = (time.perf_counter() - t0) * 1000.0
    return Diagnosis(
        diagnosis_time_ms=elapsed,
        impact=_impact(inputs.alert, fields["bug_category"], fields.get("direction")),
        **fields,
    )
