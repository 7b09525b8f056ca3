from __future__ import annotations

import itertools
import json
import sys
import time

import pytest

from tdrill.drilldown import load_bundle, run_drilldown
from tdrill.errors import InputError
from tdrill.validator import (
    BugSignature,
    Injection,
    Outcome,
    Scenario,
    Verdict,
    load_scenario,
    parse_test_output,
    reproduce,
    validate,
    verdict_for,
)

PY = "{python}"


def scenario(workload_code, sig, tests_code=None, budget=4000, **kw):
    wl = (PY, "-c", workload_code) if workload_code is not None else ()
    tests = (PY, "-c", tests_code) if tests_code is not None else None
    return Scenario("t", wl, sig, budget, tests, grace_ms=500, **kw)


HANG = "import time\nprint('PROGRESS', flush=True)\ntime.sleep(30)"
QUICK = "print('PROGRESS'); print('DONE')"
FAILING = "import time\nfor _ in range(5):\n    print('ATTEMPT-FAILED', flush=True); time.sleep(0.05)"
SUITE_OK = "print('PASS a'); print('PASS b')"
SUITE_BAD = "import sys; print('PASS a'); print('FAIL b'); sys.exit(1)"


@pytest.mark.parametrize("reproduced,passed,expected", [
    (True, True, Outcome.NOT_FIXED), (True, False, Outcome.NOT_FIXED),
    (False, True, Outcome.FIXED), (False, False, Outcome.PARTIAL_FIX),
])
def test_verdict_table(reproduced, passed, expected):
    assert verdict_for(reproduced, passed) is expected


def test_hang_detected_and_killed_early():
    t0 = time.monotonic()
    run = reproduce(scenario(HANG, BugSignature.hang_beyond(300)))
    assert run.signature_matched and run.exit_status is None
    assert time.monotonic() - t0 < 3.0


def test_quick_run_is_clean():
    run = reproduce(scenario(QUICK, BugSignature.hang_beyond(300)))
    assert not run.signature_matched and run.exit_status == 0


def test_repeated_failure_needs_count_within_window():
    assert reproduce(scenario(FAILING, BugSignature.repeated_failure(3, 1000))).signature_matched
    assert not reproduce(scenario(FAILING, BugSignature.repeated_failure(6, 1000))).signature_matched


def test_slowdown_after_exit():
    code = "import time\ntime.sleep(0.4)\nprint('DONE')"
    assert reproduce(scenario(code, BugSignature.slowdown_beyond(100, 2.0))).signature_matched
    assert not reproduce(scenario(code, BugSignature.slowdown_beyond(1000, 2.0))).signature_matched


def test_budget_kill_counts_as_reproduced():
    code = "import time\nwhile True:\n    print('PROGRESS', flush=True); time.sleep(0.05)"
    run = reproduce(scenario(code, BugSignature.hang_beyond(300), budget=600))
    assert run.budget_exceeded and run.signature_matched


def test_verdicts_end_to_end():
    assert validate(scenario(QUICK, BugSignature.hang_beyond(300), SUITE_OK)).outcome is Outcome.FIXED
    partial = validate(scenario(QUICK, BugSignature.hang_beyond(300), SUITE_BAD))
    assert partial.outcome is Outcome.PARTIAL_FIX
    assert any("failed tests: b" in e for e in partial.evidence)
    assert validate(scenario(HANG, BugSignature.hang_beyond(300), SUITE_OK)).outcome is Outcome.NOT_FIXED


def test_empty_workload_and_vacuous_suite():
    v = validate(scenario(None, BugSignature.hang_beyond(300)))
    assert v.outcome is Outcome.FIXED and v.tests.vacuous
    assert any("vacuous" in e for e in v.evidence)


def test_launch_failure_is_inconclusive():
    s = Scenario("t", ("/nonexistent/binary",), BugSignature.hang_beyond(300), 2000)
    v = validate(s)
    assert v.outcome is Outcome.INCONCLUSIVE and v.bug_reproduced is None


def test_budget_must_exceed_threshold():
    with pytest.raises(InputError):
        Scenario("t", (), BugSignature.hang_beyond(3000), 2000)


def test_injection_key_resolution():
    s = scenario(QUICK, BugSignature.hang_beyond(300), inject_key="x.timeout")
    assert Injection.build(s, None, 12.2).config == {"x.timeout": 13}
    assert Injection.build(s, None, 12, key="y").config == {"y": 12}
    with pytest.raises(InputError):
        Injection.build(scenario(QUICK, BugSignature.hang_beyond(300)), None, 5)


def test_parse_test_output():
    assert parse_test_output("noise\nPASS a\nFAIL  b \nPASS\n") == [("a", True), ("b", False)]


def test_repeat_is_deterministic():
    s = scenario(QUICK, BugSignature.hang_beyond(300), SUITE_BAD)
    outcomes = {validate(s).outcome for _ in range(3)}
    assert outcomes == {Outcome.PARTIAL_FIX}


def test_verdict_round_trip():
    v = validate(scenario(QUICK, BugSignature.hang_beyond(300), SUITE_OK))
    assert Verdict.from_dict(json.loads(json.dumps(v.to_dict()))) == v


@pytest.mark.slow
def test_yarn_loop_guard_at_1130ms(bundles):
    path = bundles["yarn-1630-v2.2.0"]
    d = run_drilldown(load_bundle(path))
    s = load_scenario(path / "scenario.json")
    assert validate(s).outcome is Outcome.NOT_FIXED
    v = validate(s, d.patch_plan, 1130)
    assert v.outcome is Outcome.FIXED, v.evidence


def test_kill_reaches_spawned_helpers(tmp_path):
    pidfile = tmp_path / "pid"
    code = (
        "import subprocess, sys, time\n"
        "p = subprocess.Popen([sys.executable, '-c', 'import time; time.sleep(60)'])\n"
        f"open({str(pidfile)!r}, 'w').write(str(p.pid))\n"
        "print('PROGRESS', flush=True)\n"
        "time.sleep(60)\n"
    )
    t0 = time.monotonic()
    assert reproduce(scenario(code, BugSignature.hang_beyond(300))).signature_matched
    # an orphan holding the output pipe would stall the run until it exits
    assert time.monotonic() - t0 < 10
    pid = int(pidfile.read_text())
    deadline = time.monotonic() + 3
    while time.monotonic() < deadline:
        try:
            with open(f"/proc/{pid}/stat") as fh:
                if fh.read().split(")")[-1].split()[0] == "Z":
                    break
        except FileNotFoundError:
            break
        time.sleep(0.05)
    else:
        pytest.fail(f"helper {pid} outlived the workload")
