from __future__ import annotations

import itertools
import re

import pytest

from catalogs import (
    CLIENT_SRC, CONNECT, CONNECT_T, DAEMON, SO_TIMEOUT, SOCKET, m, socket_callsite, socket_catalog,
)
from tdrill.errors import AlreadyPatched, InputError, UnknownCallsite
from tdrill.patch import (
    GUARD_CONDITION,
    ApiCatalog,
    Callsite,
    LoopSite,
    PatchPlan,
    Strategy,
    default_config_key,
    find_overload_with_timeout,
    find_timeout_setters,
    key_constant_name,
    plan_blocking_fix,
    plan_loop_fix,
)
from tdrill.stacks import HangType

YARN_SRC = """\
public class YarnClientImpl {
  public ApplicationId submitApplication(ApplicationSubmissionContext ctx) throws YarnException, IOException {
    rmClient.submitApplication(request);
    while (true) {
      YarnApplicationState state = getApplicationReport(appId).getYarnApplicationState();
      if (!state.equals(YarnApplicationState.NEW)) {
        break;
      }
      Thread.sleep(statePollIntervalMillis);
    }
    return appId;
  }
}
"""
YARN_SITE = LoopSite("YarnClientImpl.submitApplication", "YarnClientImpl.java", (5, 9))

EDITLOG_SRC = """\
public class EditLogTailer {
  private void triggerActiveLogRoll() throws IOException {
    getActiveNodeProxy().rollEditLog();
  }
}
"""


def _editlog_catalog():
    return ApiCatalog.from_dict({
        "classes": {
            "NamenodeProtocol": [m("rollEditLog", throws=["java.io.IOException"], returns="CheckpointSignature")],
            "EditLogTailer": [m("triggerActiveLogRoll", throws=["java.io.IOException"])],
        },
        "callsites": [{"function": "EditLogTailer.triggerActiveLogRoll", "file": "EditLogTailer.java", "line": 3,
                       "class": "NamenodeProtocol", "method": "rollEditLog",
                       "receiver": "getActiveNodeProxy()", "expression": "getActiveNodeProxy().rollEditLog()"}],
    })


def _conn_catalog():
    return ApiCatalog.from_dict({
        "classes": {"java.net.URLConnection": [
            m("connect", throws=["java.io.IOException"]), m("setConnectTimeout", [("int", "timeout")]),
            m("setReadTimeout", [("int", "timeout")]), m("setDoOutput", [("boolean", "b")]),
        ]},
        "callsites": [{"function": "WebHdfsFileSystem.getHttpUrlConnection", "file": "W.java", "line": 3,
                       "class": "java.net.URLConnection", "method": "connect", "receiver": "conn",
                       "expression": "conn.connect()"}],
    })


def test_overload_found():
    cat = socket_catalog(CONNECT, CONNECT_T)
    sig = find_overload_with_timeout(cat, socket_callsite(cat))
    assert sig.param_types == ("java.net.SocketAddress", "int")


def test_no_overload():
    cat = socket_catalog(CONNECT)
    assert find_overload_with_timeout(cat, socket_callsite(cat)) is None


def test_overload_tie_is_deterministic_and_noted():
    alt = m("connect", [("java.net.SocketAddress", "endpoint"), ("long", "timeoutMs")], ["java.io.IOException"])
    picks = set()
    for order in itertools.permutations([CONNECT, CONNECT_T, alt]):
        cat = socket_catalog(*order)
        picks.add(find_overload_with_timeout(cat, socket_callsite(cat)).signature())
        plan = plan_blocking_fix(socket_callsite(cat), cat)
        assert any("overload tie" in n for n in plan.notes)
    assert len(picks) == 1


def test_setters_found_and_case_folded():
    cat = _conn_catalog()
    names = [s.name for s in find_timeout_setters(cat, cat.callsites[0])]
    assert names == ["setConnectTimeout", "setReadTimeout"]
    odd = socket_catalog(CONNECT, m("SetSocketTimeOut", [("int", "t")]), DAEMON)
    assert [s.name for s in find_timeout_setters(odd, socket_callsite(odd))] == ["SetSocketTimeOut"]
    only_daemon = socket_catalog(CONNECT, DAEMON)
    assert find_timeout_setters(only_daemon, socket_callsite(only_daemon)) == []


def test_unknown_class():
    cat = socket_catalog(CONNECT)
    bogus = Callsite("demo.Client.open", "Client.java", 6, "no.Such", "connect")
    with pytest.raises(UnknownCallsite):
        find_timeout_setters(cat, bogus)
    with pytest.raises(UnknownCallsite):
        plan_blocking_fix(bogus, cat)


def test_ladder_demotes_one_rung_at_a_time():
    full = socket_catalog(CONNECT, CONNECT_T, SO_TIMEOUT)
    no_overload = socket_catalog(CONNECT, SO_TIMEOUT)
    bare = socket_catalog(CONNECT, DAEMON)
    got = [plan_blocking_fix(socket_callsite(c), c, source=CLIENT_SRC).strategy for c in (full, no_overload, bare)]
    assert got == [Strategy.REPLACE_WITH_OVERLOAD, Strategy.INSERT_SETTERS, Strategy.ASYNC_WRAPPER]


def test_overload_plan_diff():
    cat = socket_catalog(CONNECT, CONNECT_T)
    plan = plan_blocking_fix(socket_callsite(cat), cat, source=CLIENT_SRC, timeout_ms=250)
    assert "+    sock.connect(addr, timeout);" in plan.rendered_diff
    assert plan.replacement == "java.net.Socket.connect(java.net.SocketAddress endpoint, int timeout)"
    assert plan.new_config_key == "connect.timeout"
    assert "conf.getLong(CONNECT_TIMEOUT_KEY, 250L)" in plan.rendered_diff


def test_setter_plan_binds_both():
    cat = _conn_catalog()
    src = "class W {\n  HttpURLConnection open() throws IOException {\n    conn.connect();\n  }\n}\n"
    plan = plan_blocking_fix(cat.callsites[0], cat, source=src, timeout_ms=900)
    assert plan.strategy is Strategy.INSERT_SETTERS
    assert "+    conn.setConnectTimeout((int) timeout);" in plan.rendered_diff
    assert "+    conn.setReadTimeout((int) timeout);" in plan.rendered_diff
    with pytest.raises(AlreadyPatched):
        plan_blocking_fix(cat.callsites[0], cat, source=plan.patched_source)


def test_async_wrapper_plan():
    cat = _editlog_catalog()
    plan = plan_blocking_fix(cat.callsites[0], cat, source=EDITLOG_SRC, timeout_ms=171)
    assert plan.strategy is Strategy.ASYNC_WRAPPER
    assert plan.wrapper == "rollEditLogWithTimeout"
    assert plan.exception == "java.io.IOException"
    d = plan.rendered_diff
    assert "+    rollEditLogWithTimeout();" in d
    assert "throws IOException" in d and "future.get(timeout, TimeUnit.MILLISECONDS)" in d
    # cancel, then throw, then shut down in finally
    assert d.index("future.cancel(true)") < d.index("throw new IOException") < d.index("executor.shutdown()")
    assert plan.new_config_key == "roll.edit.log.timeout"
    with pytest.raises(AlreadyPatched):
        plan_blocking_fix(cat.callsites[0], cat, source=plan.patched_source)


def test_async_wrapper_without_declared_exception():
    cat = ApiCatalog.from_dict({
        "classes": {"H": [m("executeMethod", [("HttpMethod", "m")], returns="int")]},
        "callsites": [{"function": "J.notify", "file": "J.java", "line": 1, "class": "H",
                       "method": "executeMethod", "receiver": "c", "expression": "c.executeMethod(x)"}],
    })
    plan = plan_blocking_fix(cat.callsites[0], cat)
    assert plan.exception == "java.lang.RuntimeException"
    assert any("unchecked" in n for n in plan.notes)


def test_loop_guard_shape():
    plan = plan_loop_fix(YARN_SITE, source=YARN_SRC, timeout_ms=1130, config_key="poll.timeout")
    d = plan.rendered_diff
    assert plan.strategy is Strategy.LOOP_GUARD and plan.hang_type is HangType.INFINITE_LOOP
    assert GUARD_CONDITION == "timeout > 0 && elapsed >= timeout"
    assert f"+      if ({GUARD_CONDITION}) {{" in d
    assert 'POLL_TIMEOUT_KEY = "poll.timeout"' in d
    assert "<name>poll.timeout</name>" in d and "<value>1130</value>" in d
    assert "Breaking infinite polling!" in d
    assert d.index("long st = System.currentTimeMillis();") < d.index("while (true)")


def test_loop_guard_keeps_existing_break():
    plan = plan_loop_fix(YARN_SITE, source=YARN_SRC, timeout_ms=10)
    patched = plan.patched_source
    assert "break;" in patched
    assert patched.index("break;") < patched.index("elapsed >= timeout")
    assert "-" not in [l[:1] for l in plan.rendered_diff.splitlines() if not l.startswith("---")]


def test_loop_guard_idempotence():
    plan = plan_loop_fix(YARN_SITE, source=YARN_SRC, timeout_ms=10)
    with pytest.raises(AlreadyPatched):
        plan_loop_fix(YARN_SITE, source=plan.patched_source, timeout_ms=10)


def _guard(timeout, elapsed):
    expr = GUARD_CONDITION.replace("&&", "and")
    return eval(expr, {}, {"timeout": timeout, "elapsed": elapsed})


@pytest.mark.parametrize("timeout,elapsed,fires", [
    (0, 10**9, False), (-1, 5, False), (100, 99, False), (100, 100, True), (100, 101, True),
])
def test_guard_semantics(timeout, elapsed, fires):
    assert _guard(timeout, elapsed) is fires


def test_existing_config_gets_property_block():
    cfg = "<configuration>\n <property>\n  <name>a</name>\n  <value>1</value>\n </property>\n</configuration>\n"
    plan = plan_loop_fix(YARN_SITE, source=YARN_SRC, timeout_ms=5, config_text=cfg, config_path="site.xml")
    assert "+++ b/site.xml" in plan.rendered_diff
    assert "<name>submit.application.timeout</name>" in plan.rendered_diff


def test_every_plan_has_a_key_and_binding():
    for plan in (
        plan_loop_fix(YARN_SITE),
        plan_blocking_fix(*(lambda c: (c.callsites[0], c))(_editlog_catalog())),
        plan_blocking_fix(*(lambda c: (c.callsites[0], c))(_conn_catalog())),
    ):
        assert plan.new_config_key.endswith("timeout")
        assert plan.key_constant in plan.timeout_param_binding
        assert PatchPlan.from_dict(plan.to_dict()) == plan
        assert plan.strategy.admissible_for(plan.hang_type)


def test_call_not_in_source():
    cat = _editlog_catalog()
    with pytest.raises(InputError):
        plan_blocking_fix(cat.callsites[0], cat, source="class X {\n}\n")


def test_naming():
    assert default_config_key("rollEditLog") == "roll.edit.log.timeout"
    assert default_config_key("run", "org.apache.flume.source.ExecSource$ExecRunnable") == "exec.runnable.run.timeout"
    assert key_constant_name("poll.timeout") == "POLL_TIMEOUT_KEY"
    assert key_constant_name("rolledits") == "ROLLEDITS_TIMEOUT_KEY"


def test_catalog_rejects_duplicate_signature():
    with pytest.raises(InputError):
        ApiCatalog.from_dict({"classes": {"C": [m("f", [("int", "a")]), m("f", [("int", "b")])]}})
