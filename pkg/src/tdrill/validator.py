"""Patch validation by re-running the bug-triggering workload and its tests.

Workloads report liveness on stdout, one token per line::

    HEARTBEAT                 alive, not necessarily progressing
    PROGRESS <what>           a unit of work finished
    ATTEMPT-FAILED <what>     one attempt timed out or failed
    DONE                      the workload finished

Test suites print ``PASS <name>`` / ``FAIL <name>`` lines; the suite passes
iff it exits with status 0.
"""

from __future__ import annotations

import json
import math
import os
import queue
import signal
import subprocess
import sys
import tempfile
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

from .errors import InputError, LaunchFailure
from .patch import PatchPlan

SCENARIO_SCHEMA = "tdrill-scenario/1"
INJECT_SCHEMA = "tdrill-inject/1"
DEFAULT_GRACE_MS = 2000


class SignatureKind(str, Enum):
    HANG_BEYOND = "HangBeyond"
    REPEATED_FAILURE = "RepeatedFailure"
    SLOWDOWN_BEYOND = "SlowdownBeyond"


@dataclass(frozen=True)
class BugSignature:
    kind: SignatureKind
    ms: int | None = None  # HangBeyond: no-progress bound
    count: int | None = None  # RepeatedFailure
    window_ms: int | None = None  # RepeatedFailure
    factor: float | None = None  # SlowdownBeyond, over the baseline wall time
    baseline_ms: int | None = None  # SlowdownBeyond

    def __post_init__(self):
        k = self.kind
        ok = (
            (k is SignatureKind.HANG_BEYOND and _pos(self.ms))
            or (k is SignatureKind.REPEATED_FAILURE and _pos(self.count) and _pos(self.window_ms))
            or (k is SignatureKind.SLOWDOWN_BEYOND and _pos(self.factor) and _pos(self.baseline_ms))
        )
        if not ok:
            raise InputError(f"signature {k.value} needs positive parameters")

    @classmethod
    def hang_beyond(cls, ms: int) -> "BugSignature":
        return cls(SignatureKind.HANG_BEYOND, ms=ms)

    @classmethod
    def repeated_failure(cls, count: int, window_ms: int) -> "BugSignature":
        return cls(SignatureKind.REPEATED_FAILURE, count=count, window_ms=window_ms)

    @classmethod
    def slowdown_beyond(cls, baseline_ms: int, factor: float = 3.0) -> "BugSignature":
        return cls(SignatureKind.SLOWDOWN_BEYOND, factor=factor, baseline_ms=baseline_ms)

    @property
    def threshold_ms(self) -> float:
        """Time after which the signature can no longer be told apart from the budget."""
        if self.kind is SignatureKind.HANG_BEYOND:
            return self.ms
        if self.kind is SignatureKind.SLOWDOWN_BEYOND:
            return self.factor * self.baseline_ms
        return self.window_ms

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value}
        for k in ("ms", "count", "window_ms", "factor", "baseline_ms"):
            v = getattr(self, k)
            if v is not None:
                d[k] = v
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "BugSignature":
        try:
            kind = SignatureKind(d["kind"])
        except (KeyError, ValueError) as exc:
            raise InputError(f"bad signature {d!r}") from exc
        if kind is SignatureKind.SLOWDOWN_BEYOND and "factor" not in d:
            d = {**d, "factor": 3.0}
        return cls(kind, **{k: d[k] for k in ("ms", "count", "window_ms", "factor", "baseline_ms") if k in d})


def _pos(x) -> bool:
    return x is not None and x > 0


@dataclass(frozen=True)
class Scenario:
    name: str
    workload: tuple[str, ...]  # argv; may use {python} {bundle} {sandbox} {inject}
    signature: BugSignature
    budget_ms: int
    tests: tuple[str, ...] | None = None
    grace_ms: int = DEFAULT_GRACE_MS
    inject_key: str | None = None  # config key the predicted value is written to
    base_dir: str = "."
    env: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.budget_ms <= 0:
            raise InputError("scenario budget must be positive")
        if self.budget_ms <= self.signature.threshold_ms:
            raise InputError(
                f"budget {self.budget_ms} ms must exceed the signature threshold "
                f"{self.signature.threshold_ms:g} ms"
            )

    def to_dict(self) -> dict:
        return {
            "schema": SCENARIO_SCHEMA,
            "name": self.name,
            "workload": list(self.workload),
            "tests": list(self.tests) if self.tests is not None else None,
            "signature": self.signature.to_dict(),
            "budget_ms": self.budget_ms,
            "grace_ms": self.grace_ms,
            "inject_key": self.inject_key,
            "env": dict(self.env),
        }

    @classmethod
    def from_dict(cls, d: Mapping, base_dir: str | Path = ".") -> "Scenario":
        if d.get("schema") != SCENARIO_SCHEMA:
            raise InputError(f"unsupported scenario schema {d.get('schema')!r}")
        try:
            return cls(
                name=d["name"],
                workload=tuple(d["workload"]),
                signature=BugSignature.from_dict(d["signature"]),
                budget_ms=int(d["budget_ms"]),
                tests=tuple(d["tests"]) if d.get("tests") is not None else None,
                grace_ms=int(d.get("grace_ms", DEFAULT_GRACE_MS)),
                inject_key=d.get("inject_key"),
                base_dir=str(Path(base_dir).resolve()),
                env=dict(d.get("env", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"bad scenario document: {exc}") from exc


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot load scenario {path}: {exc}") from exc
    return Scenario.from_dict(doc, path.parent)


@dataclass(frozen=True)
class Injection:
    """What the patch hook hands the workload: config overrides plus the plan."""

    config: Mapping[str, int] = field(default_factory=dict)
    plan: PatchPlan | None = None

    def to_dict(self) -> dict:
        return {
            "schema": INJECT_SCHEMA,
            "config": dict(self.config),
            "plan": self.plan.to_dict() if self.plan else None,
        }

    @classmethod
    def build(cls, scenario: Scenario, plan: PatchPlan | None, value_ms: float | None,
              key: str | None = None) -> "Injection":
        config: dict[str, int] = {}
        if value_ms is not None:
            target = key or (plan.new_config_key if plan else None) or scenario.inject_key
            if target is None:
                raise InputError("no configuration key to inject the timeout value into")
            config[target] = int(math.ceil(value_ms))
        return cls(config, plan)


@dataclass(frozen=True)
class RunRecord:
    signature_matched: bool
    wall_ms: float
    exit_status: int | None  # None when killed
    budget_exceeded: bool = False
    evidence: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "signature_matched": self.signature_matched,
            "wall_ms": self.wall_ms,
            "exit_status": self.exit_status,
            "budget_exceeded": self.budget_exceeded,
            "evidence": list(self.evidence),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunRecord":
        return cls(d["signature_matched"], d["wall_ms"], d["exit_status"], d.get("budget_exceeded", False),
                   tuple(d.get("evidence", ())))


@dataclass(frozen=True)
class TestResults:
    passed: bool
    results: tuple[tuple[str, bool], ...] = ()
    vacuous: bool = False
    exit_status: int | None = 0

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "results": [[n, ok] for n, ok in self.results],
            "vacuous": self.vacuous,
            "exit_status": self.exit_status,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TestResults":
        return cls(d["passed"], tuple((n, ok) for n, ok in d.get("results", ())), d.get("vacuous", False),
                   d.get("exit_status"))


class Outcome(str, Enum):
    FIXED = "Fixed"
    PARTIAL_FIX = "PartialFix"
    NOT_FIXED = "NotFixed"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class Verdict:
    outcome: Outcome
    bug_reproduced: bool | None
    tests_passed: bool | None
    evidence: tuple[str, ...] = ()
    run: RunRecord | None = None
    tests: TestResults | None = None

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome.value,
            "bug_reproduced": self.bug_reproduced,
            "tests_passed": self.tests_passed,
            "evidence": list(self.evidence),
            "run": self.run.to_dict() if self.run else None,
            "tests": self.tests.to_dict() if self.tests else None,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Verdict":
        return cls(
            Outcome(d["outcome"]), d.get("bug_reproduced"), d.get("tests_passed"),
            tuple(d.get("evidence", ())),
            RunRecord.from_dict(d["run"]) if d.get("run") else None,
            TestResults.from_dict(d["tests"]) if d.get("tests") else None,
        )


def verdict_for(bug_reproduced: bool, tests_passed: bool) -> Outcome:
    if bug_reproduced:
        return Outcome.NOT_FIXED
    return Outcome.FIXED if tests_passed else Outcome.PARTIAL_FIX


# --------------------------------------------------------------------------
# process management


def _expand(argv: Sequence[str], mapping: Mapping[str, str]) -> list[str]:
    out = []
    for arg in argv:
        for k, v in mapping.items():
            arg = arg.replace("{" + k + "}", v)
        out.append(arg)
    return out


def _child_env(scenario: Scenario) -> dict[str, str]:
    env = dict(os.environ)
    pkg_root = str(Path(__file__).resolve().parent.parent)
    env["PYTHONPATH"] = pkg_root + (os.pathsep + env["PYTHONPATH"] if env.get("PYTHONPATH") else "")
    env["PYTHONUNBUFFERED"] = "1"
    env.update(scenario.env)
    return env


def _launch(argv: list[str], cwd: str, env: Mapping[str, str]) -> subprocess.Popen:
    try:
        return subprocess.Popen(
            argv, cwd=cwd, env=dict(env), stdout=subprocess.PIPE, stderr=subprocess.STDOUT,
            stdin=subprocess.DEVNULL, text=True, bufsize=1, start_new_session=os.name == "posix",
        )
    except OSError as exc:
        raise LaunchFailure(f"cannot launch {argv[0]!r}: {exc.strerror or exc}") from exc


def _pump(stream, q: queue.Queue, t0: float):
    for line in stream:
        q.put(((time.monotonic() - t0) * 1000.0, line.rstrip("\n")))
    q.put(None)


def _kill(proc: subprocess.Popen, grace_ms: int):
    # the workload leads its own session; take down any helpers it spawned
    if os.name == "posix":
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except (ProcessLookupError, PermissionError):
            proc.kill()
    else:
        proc.kill()
    try:
        proc.wait(timeout=grace_ms / 1000.0)
    except subprocess.TimeoutExpired:  # pragma: no cover - kill is not ignorable
        pass


def _prepare_sandbox(scenario: Scenario, injection: Injection, sandbox: str) -> dict[str, str]:
    inject_path = Path(sandbox) / "inject.json"
    inject_path.write_text(json.dumps(injection.to_dict(), indent=1), encoding="utf-8")
    return {"python": sys.executable, "bundle": scenario.base_dir, "sandbox": sandbox, "inject": str(inject_path)}


def reproduce(
    scenario: Scenario,
    plan: PatchPlan | None = None,
    value_ms: float | None = None,
    key: str | None = None,
) -> RunRecord:
    """Run the workload once under the triggering condition, watching for the bug."""
    if not scenario.workload:
        return RunRecord(False, 0.0, 0, evidence=("empty workload; nothing to run",))
    injection = Injection.build(scenario, plan, value_ms, key)
    sig = scenario.signature
    with tempfile.TemporaryDirectory(prefix="tdrill-run-") as sandbox:
        argv = _expand(scenario.workload, _prepare_sandbox(scenario, injection, sandbox))
        t0 = time.monotonic()
        proc = _launch(argv, sandbox, _child_env(scenario))
        q: queue.Queue = queue.Queue()
        reader = threading.Thread(target=_pump, args=(proc.stdout, q, t0), daemon=True)
        reader.start()

        last_progress = 0.0
        failures: deque[float] = deque()
        evidence: list[str] = []
        matched = False
        budget_exceeded = False
        eof = False
        while True:
            try:
                item = q.get(timeout=0.02)
            except queue.Empty:
                item = ()
            now = (time.monotonic() - t0) * 1000.0
            if item is None:
                eof = True
            elif item:
                ts, line = item
                token = line.split(" ", 1)[0]
                if token in ("PROGRESS", "DONE"):
                    last_progress = ts
                elif token == "ATTEMPT-FAILED":
                    failures.append(ts)
                    if sig.kind is SignatureKind.REPEATED_FAILURE:
                        while failures and ts - failures[0] > sig.window_ms:
                            failures.popleft()
                        if len(failures) >= sig.count:
                            matched = True
                            evidence.append(f"{len(failures)} failed attempts within {sig.window_ms} ms")
            if not matched and proc.poll() is None:
                if sig.kind is SignatureKind.HANG_BEYOND and now - last_progress > sig.ms:
                    matched = True
                    evidence.append(f"no progress for {now - last_progress:.0f} ms (> {sig.ms} ms)")
                elif sig.kind is SignatureKind.SLOWDOWN_BEYOND and now > sig.factor * sig.baseline_ms:
                    matched = True
                    evidence.append(f"still running after {now:.0f} ms (> {sig.factor:g} x {sig.baseline_ms} ms)")
            if matched and proc.poll() is None:
                _kill(proc, scenario.grace_ms)
            if proc.poll() is None and now > scenario.budget_ms:
                budget_exceeded = True
                evidence.append(f"budget of {scenario.budget_ms} ms exceeded; killed")
                _kill(proc, scenario.grace_ms)
            if eof and proc.poll() is not None:
                break
            if proc.poll() is not None and item == () and not reader.is_alive():
                break
        wall = (time.monotonic() - t0) * 1000.0
        status = proc.returncode
        killed = matched or budget_exceeded
        if sig.kind is SignatureKind.SLOWDOWN_BEYOND and not matched and wall > sig.factor * sig.baseline_ms:
            matched = True
            evidence.append(f"finished in {wall:.0f} ms (> {sig.factor:g} x {sig.baseline_ms} ms)")
        if not killed:
            evidence.append(f"workload exited with status {status} after {wall:.0f} ms")
        return RunRecord(
            signature_matched=matched or budget_exceeded,
            wall_ms=wall,
            exit_status=None if killed else status,
            budget_exceeded=budget_exceeded,
            evidence=tuple(evidence),
        )


def parse_test_output(text: str) -> list[tuple[str, bool]]:
    results = []
    for line in text.splitlines():
        head, _, name = line.strip().partition(" ")
        if head in ("PASS", "FAIL") and name:
            results.append((name.strip(), head == "PASS"))
    return results


def run_tests(
    scenario: Scenario,
    plan: PatchPlan | None = None,
    value_ms: float | None = None,
    key: str | None = None,
) -> TestResults:
    if not scenario.tests:
        return TestResults(True, (), vacuous=True, exit_status=None)
    injection = Injection.build(scenario, plan, value_ms, key)
    with tempfile.TemporaryDirectory(prefix="tdrill-test-") as sandbox:
        argv = _expand(scenario.tests, _prepare_sandbox(scenario, injection, sandbox))
        proc = _launch(argv, sandbox, _child_env(scenario))
        try:
            out, _ = proc.communicate(timeout=(scenario.budget_ms + scenario.grace_ms) / 1000.0)
        except subprocess.TimeoutExpired:
            _kill(proc, scenario.grace_ms)
            out = proc.stdout.read() if proc.stdout else ""
            results = parse_test_output(out or "")
            return TestResults(False, tuple(results) + (("<suite budget>", False),), exit_status=None)
        results = parse_test_output(out or "")
        return TestResults(proc.returncode == 0, tuple(results), exit_status=proc.returncode)


def validate(
    scenario: Scenario,
    plan: PatchPlan | None = None,
    value_ms: float | None = None,
    key: str | None = None,
) -> Verdict:
    """Re-run the triggering workload, then the suite, and map to a verdict."""
    try:
        run = reproduce(scenario, plan, value_ms, key)
    except LaunchFailure as exc:
        return Verdict(Outcome.INCONCLUSIVE, None, None, (f"workload: {exc}",))
    try:
        tests = run_tests(scenario, plan, value_ms, key)
    except LaunchFailure as exc:
        return Verdict(Outcome.INCONCLUSIVE, run.signature_matched, None, run.evidence + (f"tests: {exc}",), run)
    evidence = list(run.evidence)
    if tests.vacuous:
        evidence.append("empty test suite; passes vacuously")
    failed = [n for n, ok in tests.results if not ok]
    if failed:
        evidence.append("failed tests: " + ", ".join(failed))
    outcome = verdict_for(run.signature_matched, tests.passed)
    return Verdict(outcome, run.signature_matched, tests.passed, tuple(evidence), run, tests)
