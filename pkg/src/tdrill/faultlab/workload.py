"""Interpreter for faultlab workload scripts.

``run`` replays the bug-triggering workload; ``test`` runs the scenario's
suite under normal conditions and prints ``PASS``/``FAIL`` lines.  Timeout
values come from the script's buggy configuration unless the injection file
(written by the validator) overrides them, and a patch plan in the injection
file changes how loops and blocking calls behave.

Script ops::

    call             remote call bounded by a timeout variable; retries or fails over
    loop_until_flag  polling loop, exits when the flag is set (or never)
    block            blocking call, returns after need_ms (or never)
    sleep, progress  plain pacing and progress markers
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

WORKLOAD_SCHEMA = "tdrill-workload/1"
HEARTBEAT_MS = 100
BLOCKING_SUPPORT = {"ReplaceWithOverload": "overload", "InsertSetters": "setters", "AsyncWrapper": None}


class JobFailure(Exception):
    pass


class TestDeadline(Exception):
    pass


class TimedOut(Exception):
    """The inserted timeout fired; callers treat it as a handled error."""


def _matches(a: str, b: str) -> bool:
    return a == b or a.endswith("." + b) or b.endswith("." + a)


class Runtime:
    def __init__(self, script: dict, injection: dict, *, verbose: bool, deadline: float | None = None):
        self.timeouts = dict(script.get("timeouts", {}))
        self.config = {k: int(v) for k, v in (injection.get("config") or {}).items()}
        self.plan = injection.get("plan")
        self.verbose = verbose
        self.deadline = deadline

    def emit(self, text: str):
        if self.verbose:
            print(text, flush=True)

    def sleep(self, ms: float | None):
        """Sleep ``ms`` (None = forever), heartbeating and honoring the deadline."""
        end = None if ms is None else time.monotonic() + ms / 1000.0
        while True:
            now = time.monotonic()
            if self.deadline is not None and now >= self.deadline:
                raise TestDeadline()
            if end is not None and now >= end:
                return
            step = HEARTBEAT_MS / 1000.0
            if end is not None:
                step = min(step, end - now)
            if self.deadline is not None:
                step = min(step, max(self.deadline - now, 0.0))
            time.sleep(max(step, 0.0))
            if end is None or time.monotonic() < end:
                self.emit("HEARTBEAT")

    def timeout_of(self, ident: str) -> int:
        if ident in self.config:
            return self.config[ident]
        if ident not in self.timeouts:
            raise JobFailure(f"script references unknown timeout {ident}")
        return int(self.timeouts[ident])

    def plan_timeout(self) -> int:
        key = self.plan.get("new_config_key")
        return self.config.get(key, int(self.plan.get("default_timeout_ms") or 0))

    # ops -----------------------------------------------------------------

    def op_call(self, op: dict):
        fn = op["function"]
        need = op.get("need_ms")
        for attempt in range(1, int(op.get("attempts", 1)) + 1):
            t = self.timeout_of(op["timeout"])
            if need is not None and t >= need:
                self.sleep(need)
                self.emit(f"PROGRESS {fn}")
                return
            self.sleep(t)
            self.emit(f"ATTEMPT-FAILED {fn} attempt {attempt} timed out after {t} ms")
            if op.get("then") == "failover":
                self.sleep(op.get("failover_ms", 0))
                self.emit(f"PROGRESS {fn} failover")
                return
        raise JobFailure(f"{fn} failed after {op.get('attempts', 1)} attempts")

    def _guard_ms(self, fn: str) -> int | None:
        p = self.plan
        if p and p.get("strategy") == "LoopGuard" and _matches(p["target_function"], fn):
            return self.plan_timeout()
        return None

    def op_loop_until_flag(self, op: dict):
        fn = op["function"]
        flag_after = op.get("flag_after_ms")
        iteration = op.get("iteration_ms", 50)
        guard = self._guard_ms(fn)
        start = time.monotonic()
        timed_out = False
        while True:
            self.sleep(iteration)
            elapsed = (time.monotonic() - start) * 1000.0
            # the loop body polls its exit condition before the guard runs
            if flag_after is not None and elapsed >= flag_after:
                break
            if guard is not None and guard > 0 and elapsed >= guard:
                timed_out = True
                break
        if timed_out:
            self.emit(f"TIMEOUT {fn} after {guard} ms")
            if op.get("buffered_events") and op.get("check_flushed"):
                # the guard escapes the loop but leaves buffered events unflushed
                raise JobFailure(f"{op['buffered_events']} buffered events were not flushed")
            if op.get("timeout_is_failure"):
                raise JobFailure(f"{fn} timed out under normal conditions")
        self.emit(f"PROGRESS {fn}")

    def _bound_ms(self, fn: str, callee: str | None, supports) -> int | None:
        p = self.plan
        if not p or p.get("strategy") not in BLOCKING_SUPPORT or not _matches(p["target_function"], fn):
            return None
        site = p.get("site") or {}
        if callee and site.get("method") and not callee.endswith("." + site["method"]):
            return None
        need = BLOCKING_SUPPORT[p["strategy"]]
        if need is not None and need not in supports:
            return None  # the patched API does not honor the timeout
        return self.plan_timeout()

    def op_block(self, op: dict):
        fn = op["function"]
        need = op.get("need_ms")
        bound = self._bound_ms(fn, op.get("callee"), set(op.get("supports", ())))
        if bound is None or bound <= 0 or (need is not None and need <= bound):
            self.sleep(need)
            self.emit(f"PROGRESS {fn}")
            return
        self.sleep(bound)
        self.emit(f"TIMEOUT {fn} after {bound} ms")
        if op.get("timeout_is_failure"):
            raise JobFailure(f"{fn} timed out under normal conditions")
        self.emit(f"PROGRESS {fn} recovered")

    def op_sleep(self, op: dict):
        self.sleep(op["ms"])

    def op_progress(self, op: dict):
        self.emit(f"PROGRESS {op.get('what', '')}".rstrip())

    def execute(self, ops):
        for op in ops:
            handler = getattr(self, "op_" + op["op"], None)
            if handler is None:
                raise JobFailure(f"unknown op {op['op']!r}")
            handler(op)


def load_script(path: str | Path) -> dict:
    script = json.loads(Path(path).read_text(encoding="utf-8"))
    if script.get("schema") != WORKLOAD_SCHEMA:
        raise SystemExit(f"unsupported workload schema {script.get('schema')!r}")
    return script


def load_injection(path: str | Path | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def run(script: dict, injection: dict) -> int:
    rt = Runtime(script, injection, verbose=True)
    try:
        rt.execute(script.get("run", []))
    except JobFailure as exc:
        print(f"FAILED {exc}", flush=True)
        return 1
    print("DONE", flush=True)
    return 0


def run_suite(script: dict, injection: dict) -> int:
    failed = 0
    for test in script.get("tests", []):
        limit = test.get("limit_ms")
        deadline = time.monotonic() + limit / 1000.0 if limit else None
        rt = Runtime(script, injection, verbose=False, deadline=deadline)
        try:
            rt.execute(test["ops"])
            ok = True
        except (JobFailure, TestDeadline):
            ok = False
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} {test['name']}", flush=True)
    return 1 if failed else 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="tdrill-workload", description=__doc__.splitlines()[0])
    ap.add_argument("mode", choices=("run", "test"))
    ap.add_argument("--bundle", required=True, help="scenario bundle directory")
    ap.add_argument("--inject", help="injection file written by the validator")
    ap.add_argument("--script", default="workload.json", help="script file inside the bundle")
    args = ap.parse_args(argv)
    script = load_script(Path(args.bundle) / args.script)
    injection = load_injection(args.inject)
    return run(script, injection) if args.mode == "run" else run_suite(script, injection)


if __name__ == "__main__":
    sys.exit(main())
