"""Scenario bundle generator.

Each :class:`ScenarioSpec` describes one synthetic bug: where it lives, what
timeout variable (if any) is wrong, and a true feature model giving the
execution time the work really needs.  :func:`generate` writes a bundle whose
traces, dumps, configuration, facts, catalog, dataset, pseudo-source and
workload script all agree with that ground truth, plus a manifest recording
it.  Generation draws only from ``random.Random(seed)``.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from ..errors import TdrillError
from ..trace import Span, SpanTrace, render_span_trace

MANIFEST_SCHEMA = "tdrill-manifest/1"
CATEGORIES = ("too-large", "too-small", "missing-loop", "missing-blocking", "hard-coded")
EPOCH_BASE = 1543260000000
FRAMEWORK_IDLE = (
    ("sun.nio.ch.EPollArrayWrapper.epollWait", None),
    ("sun.nio.ch.SelectorImpl.select", "SelectorImpl.java:97"),
)
BACKGROUND_THREADS = (
    ("IPC Server listener on 8020", "org.apache.hadoop.ipc.Server$Listener.run", "Server.java:675"),
    ("IPC Server Responder", "org.apache.hadoop.ipc.Server$Responder.doRunLoop", "Server.java:835"),
    ("Socket Reader #1 for port 8020", "org.apache.hadoop.ipc.Server$Listener$Reader.run", "Server.java:566"),
)


class IoFailure(TdrillError):
    pass


@dataclass(frozen=True)
class FeatureModel:
    """True execution time (ms) as a polynomial of runtime features."""

    names: tuple[str, ...]
    terms: Mapping[tuple[int, ...], float]
    low: tuple[float, ...]
    high: tuple[float, ...]
    query: tuple[float, ...]  # features at the time of the bug
    jitter: float = 0.01  # multiplicative, non-negative, on historical samples
    samples: int = 30

    def __call__(self, x: Sequence[float]) -> float:
        return sum(c * math.prod(v ** p for v, p in zip(x, e)) for e, c in self.terms.items())


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    bug_id: str
    category: str
    function: str
    process: str
    model: FeatureModel
    impact: str
    seed: int = 0
    # misused
    variable: str | None = None
    variable_is_key: bool = True
    default_constant: str | None = None
    default_ms: int | None = None
    configured_raw: str | None = None  # None: key left unconfigured
    registry_span: str | None = None
    decoy: tuple[str, str] | None = None  # (key, raw value)
    # missing
    strategy: str | None = None
    source_file: str | None = None
    source: str | None = None  # pseudo-source, "@@A"/"@@B" mark observed lines
    callee_class: str | None = None
    callee_method: str | None = None
    receiver: str | None = None
    expression: str | None = None
    callee_methods: tuple[dict, ...] = ()
    callee_frames: tuple[str, ...] = ()
    enclosing_throws: tuple[str, ...] = ()
    supports: tuple[str, ...] = ()
    partial_fix: bool = False
    description: str = ""

    @property
    def misused(self) -> bool:
        return self.category in ("too-large", "too-small", "hard-coded")

    @property
    def true_need_ms(self) -> float:
        return self.model(self.model.query)

    @property
    def expected_category(self) -> str:
        return {
            "too-large": "MisusedTooLarge",
            "too-small": "MisusedTooSmall",
            "missing-loop": "MissingTimeout",
            "missing-blocking": "MissingTimeout",
            "hard-coded": "HardCodedSuspected",
        }[self.category]


# --------------------------------------------------------------------------
# catalog of the sixteen scenarios


def _lin(a: float, b: float, lo: float, hi: float, q: float, name: str, **kw) -> FeatureModel:
    return FeatureModel((name,), {(0,): a, (1,): b}, (lo,), (hi,), (q,), **kw)


def _quad2(c: Mapping[tuple[int, int], float], names, lo, hi, q, **kw) -> FeatureModel:
    return FeatureModel(tuple(names), dict(c), tuple(lo), tuple(hi), tuple(q), **kw)


_YARN_LOOP_SRC = """\
package org.apache.hadoop.yarn.client.api.impl;

public class YarnClientImpl {
  public ApplicationId submitApplication(ApplicationSubmissionContext appContext)
      throws YarnException, IOException {
    ApplicationId applicationId = appContext.getApplicationId();
    rmClient.submitApplication(request);
    while (true) {
      YarnApplicationState state =
          getApplicationReport(applicationId).getYarnApplicationState();@@A
      if (!state.equals(YarnApplicationState.NEW)
          && !state.equals(YarnApplicationState.NEW_SAVING)) {
        break;
      }
      Thread.sleep(statePollIntervalMillis);@@B
    }
    return applicationId;
  }
}
"""

_FLUME_LOOP_SRC = """\
package org.apache.flume.source;

public class ExecSource {
  private static class ExecRunnable {
    public Integer run() throws Exception {
      List<Event> eventList = new ArrayList<Event>();
      while (true) {
        String line = reader.readLine();@@A
        if (line == null) {
          continue;@@B
        }
        eventList.add(EventBuilder.withBody(line.getBytes(charset)));
        if (eventList.size() >= bufferCount) {
          flushEventBatch(eventList);
        }
      }
    }
  }
}
"""

_EDITLOG_SRC = """\
package org.apache.hadoop.hdfs.server.namenode.ha;

public class EditLogTailer {
  private void triggerActiveLogRoll() {
    LOG.info("Triggering log roll on remote NameNode " + activeAddr);
    try {
      getActiveNodeProxy().rollEditLog();@@A
      lastRollTriggerTxId = lastLoadedTxnId;
    } catch (IOException ioe) {
      LOG.warn("Unable to trigger a roll of the active NN", ioe);
    }
  }
}
"""

_WEBHDFS_SRC = """\
package org.apache.hadoop.hdfs.web;

public class WebHdfsFileSystem {
  private HttpURLConnection getHttpUrlConnection(URL url) throws IOException {
    final HttpURLConnection conn = (HttpURLConnection) url.openConnection();
    conn.setRequestMethod(op.getType().toString());
    conn.connect();@@A
    return conn;
  }
}
"""

_NOTIFIER_SRC = """\
package org.apache.hadoop.mapred;

public class JobEndNotifier {
  private static int httpNotification(String uri) throws IOException {
    URI url = new URI(uri, false);
    HttpClient httpClient = new HttpClient();
    GetMethod method = new GetMethod(url.getEscapedURI());
    method.setRequestHeader("Accept", "*/*");
    return httpClient.executeMethod(method);@@A
  }
}
"""


def _m(name, params=(), throws=(), returns="void"):
    return {"name": name, "params": [{"type": t, "name": n} for t, n in params],
            "throws": list(throws), "returns": returns}


def table2_specs(seed: int = 0) -> list[ScenarioSpec]:
    """Sixteen specs mirroring the benchmark rows: 7 too-large, 4 too-small, 5 missing."""
    s = seed
    tl = [
        ScenarioSpec(
            "hadoop-9106", "Hadoop-9106", "too-large",
            "org.apache.hadoop.ipc.Client$Connection.setupConnection", "RunJar",
            _lin(60.0, 1.5, 20, 160, 110, "input_mb"), "Slowdown", s + 1,
            variable="ipc.client.connect.timeout", default_constant="IPC_CLIENT_CONNECT_TIMEOUT_DEFAULT",
            default_ms=20000, configured_raw="20s", registry_span="org.apache.hadoop.net.NetUtils.connect",
            decoy=("ipc.client.connect.max.retries.on.timeouts", "45"),
        ),
        ScenarioSpec(
            "hadoop-11252", "Hadoop-11252", "too-large",
            "org.apache.hadoop.ipc.Client.call", "RunJar",
            _quad2({(0, 0): 40.0, (1, 0): 0.8, (0, 1): 0.5, (1, 1): 0.01}, ("input_mb", "rpc_qps"),
                   (10, 20), (150, 200), (90, 120)), "Hang", s + 2,
            variable="ipc.client.rpc-timeout.ms", default_constant="IPC_CLIENT_RPC_TIMEOUT_DEFAULT",
            default_ms=0, configured_raw="2147483647", registry_span="org.apache.hadoop.ipc.Client.getTimeout",
            decoy=("ipc.ping.timeout", "1000"),
        ),
        ScenarioSpec(
            "hdfs-10223", "HDFS-10223", "too-large",
            "org.apache.hadoop.hdfs.protocol.datatransfer.sasl.SaslDataTransferClient.peerSend", "DataNode",
            _lin(50.0, 0.9, 50, 250, 170, "block_mb"), "Hang", s + 3,
            variable="dfs.client.socket-timeout", default_constant="DFS_CLIENT_SOCKET_TIMEOUT_DEFAULT",
            default_ms=60000, configured_raw="2h", registry_span="java.net.Socket.setSoTimeout",
            decoy=("dfs.datanode.socket.write.timeout", "480"),
        ),
        ScenarioSpec(
            "mapreduce-4089", "MapReduce-4089", "too-large",
            "org.apache.hadoop.mapred.TaskHeartbeatHandler$PingChecker.run", "MRAppMaster",
            _quad2({(0, 0): 100.0, (1, 0): 2.0, (2, 0): 0.02}, ("map_tasks", "reducers"),
                   (5, 1), (80, 8), (60, 4)), "Slowdown", s + 4,
            variable="mapreduce.task.timeout", default_constant="DEFAULT_TASK_TIMEOUT",
            default_ms=600000, configured_raw="5min", registry_span="java.lang.Object.wait",
        ),
        ScenarioSpec(
            "yarn-1630-v2.3.0", "Yarn-1630 (v2.3.0)", "too-large",
            "org.apache.hadoop.yarn.client.api.impl.YarnClientImpl.killApplication", "YarnClient",
            _lin(90.0, 4.0, 2, 40, 30, "running_apps"), "Hang", s + 5,
            variable="yarn.client.application-client-protocol.poll-timeout-ms",
            default_constant="DEFAULT_CLIENT_APPLICATION_CLIENT_PROTOCOL_POLL_TIMEOUT_MS",
            default_ms=2147483647, configured_raw=None, registry_span="org.apache.hadoop.util.Timer.monotonicNow",
            decoy=("yarn.client.nodemanager-connect.max-wait-ms", "900"),
        ),
        ScenarioSpec(
            "hbase-15645", "HBase-15645", "too-large",
            "org.apache.hadoop.hbase.client.RpcRetryingCallerImpl.callWithRetries", "YCSBClient",
            _quad2({(0, 0): 70.0, (1, 0): 0.002, (0, 1): 1.1}, ("ops_per_sec", "row_kb"),
                   (1000, 1), (50000, 64), (30000, 16)), "Slowdown", s + 6,
            variable="hbase.rpc.timeout", default_constant="DEFAULT_HBASE_RPC_TIMEOUT",
            default_ms=60000, configured_raw="20min", registry_span="java.util.concurrent.Future.get",
            decoy=("hbase.client.scanner.timeout.period", "150"),
        ),
        ScenarioSpec(
            "hbase-17341", "HBase-17341", "too-large",
            "org.apache.hadoop.hbase.replication.regionserver.ReplicationSource.terminate", "RegionServer",
            _lin(30.0, 0.6, 10, 150, 125, "queued_edits"), "Slowdown", s + 7,
            variable="DEFAULT_TERMINATION_TIMEOUT_MS", variable_is_key=False,
            default_ms=300000, registry_span="java.lang.Thread.join",
        ),
    ]
    ts = [
        ScenarioSpec(
            "hadoop-10695", "Hadoop-10695", "too-small",
            "org.apache.hadoop.crypto.key.kms.KMSClientProvider.call", "KMSClient",
            _lin(200.0, 8.0, 10, 60, 120, "keys_per_batch"), "Job failure", s + 8,
            variable="hadoop.security.kms.client.timeout", default_constant="KMS_CLIENT_TIMEOUT_DEFAULT",
            default_ms=60000, configured_raw="600", registry_span="java.net.URLConnection.setReadTimeout",
            decoy=("hadoop.security.kms.client.encrypted.key.cache.expiry.timeout", "43200000"),
        ),
        ScenarioSpec(
            "hdfs-4301", "HDFS-4301", "too-small",
            "org.apache.hadoop.hdfs.server.namenode.TransferFsImage.doGetUrl", "SecondaryNameNode",
            _quad2({(0, 0): 150.0, (1, 0): 6.0, (0, 1): 4.0, (1, 1): 0.02}, ("image_mb", "traffic_mbps"),
                   (10, 5), (80, 40), (120, 60)), "Job failure", s + 9,
            variable="dfs.image.transfer.timeout", default_constant="DFS_IMAGE_TRANSFER_TIMEOUT_DEFAULT",
            default_ms=60000, configured_raw="600", registry_span="java.net.URLConnection.setReadTimeout",
            decoy=("dfs.client.socket-timeout", "60000"),
        ),
        ScenarioSpec(
            "hdfs-9887", "HDFS-9887", "too-small",
            "org.apache.hadoop.hdfs.web.URLConnectionFactory.openConnection", "WebHdfsClient",
            _lin(100.0, 0.035, 2000, 15000, 28000, "payload_kb"), "Job failure", s + 10,
            variable="dfs.webhdfs.socket.read-timeout", default_constant="DFS_WEBHDFS_SOCKET_READ_TIMEOUT_DEFAULT",
            default_ms=60000, configured_raw="600", registry_span="java.net.URLConnection.setConnectTimeout",
            decoy=("dfs.webhdfs.socket.connect-timeout", "60s"),
        ),
        ScenarioSpec(
            "mapreduce-6263", "MapReduce-6263", "too-small",
            "org.apache.hadoop.mapred.YARNRunner.killJob", "JobClient",
            _quad2({(0, 0): 300.0, (1, 0): 5.0, (2, 0): 0.05}, ("containers", "nodes"),
                   (5, 2), (60, 12), (95, 20)), "Job failure", s + 11,
            variable="yarn.app.mapreduce.am.hard-kill-timeout-ms",
            default_constant="DEFAULT_MR_AM_HARD_KILL_TIMEOUT_MS",
            default_ms=10000, configured_raw="800", registry_span="org.apache.hadoop.util.Timer.now",
        ),
    ]
    ms = [
        ScenarioSpec(
            "hdfs-3180", "HDFS-3180", "missing-blocking",
            "org.apache.hadoop.hdfs.web.WebHdfsFileSystem.getHttpUrlConnection", "WebHdfsClient",
            _lin(60.0, 0.02, 1000, 9000, 6000, "payload_kb"), "Hang", s + 12,
            strategy="InsertSetters", source_file="WebHdfsFileSystem.java", source=_WEBHDFS_SRC,
            callee_class="java.net.URLConnection", callee_method="connect", receiver="conn",
            expression="conn.connect()",
            callee_methods=(
                _m("connect", throws=("java.io.IOException",)),
                _m("setConnectTimeout", (("int", "timeout"),)),
                _m("setReadTimeout", (("int", "timeout"),)),
                _m("getInputStream", throws=("java.io.IOException",), returns="java.io.InputStream"),
            ),
            callee_frames=(
                "java.net.PlainSocketImpl.socketConnect(Native Method)",
                "java.net.Socket.connect(Socket.java:579)",
                "sun.net.www.http.HttpClient.openServer(HttpClient.java:378)",
                "sun.net.www.protocol.http.HttpURLConnection.connect(HttpURLConnection.java:932)",
            ),
            enclosing_throws=("java.io.IOException",), supports=("setters",),
        ),
        ScenarioSpec(
            "hdfs-4176", "HDFS-4176", "missing-blocking",
            "org.apache.hadoop.hdfs.server.namenode.ha.EditLogTailer.triggerActiveLogRoll", "StandbyNameNode",
            _lin(80.0, 0.3, 50, 400, 300, "edits_pending"), "Hang", s + 13,
            strategy="AsyncWrapper", source_file="EditLogTailer.java", source=_EDITLOG_SRC,
            callee_class="org.apache.hadoop.hdfs.server.protocol.NamenodeProtocol", callee_method="rollEditLog",
            receiver="getActiveNodeProxy()", expression="getActiveNodeProxy().rollEditLog()",
            callee_methods=(
                _m("rollEditLog", throws=("java.io.IOException",),
                   returns="org.apache.hadoop.hdfs.server.namenode.CheckpointSignature"),
                _m("versionRequest", throws=("java.io.IOException",)),
            ),
            callee_frames=(
                "sun.nio.ch.EPollArrayWrapper.epollWait(Native Method)",
                "java.lang.Object.wait(Native Method)",
                "com.sun.proxy.$Proxy12.rollEditLog(Unknown Source:1)",
            ),
        ),
        ScenarioSpec(
            "mapreduce-5066", "MapReduce-5066", "missing-blocking",
            "org.apache.hadoop.mapred.JobEndNotifier.httpNotification", "JobTracker",
            _lin(40.0, 1.2, 5, 100, 80, "payload_kb"), "Hang", s + 14,
            strategy="AsyncWrapper", source_file="JobEndNotifier.java", source=_NOTIFIER_SRC,
            callee_class="org.apache.commons.httpclient.HttpClient", callee_method="executeMethod",
            receiver="httpClient", expression="httpClient.executeMethod(method)",
            callee_methods=(
                _m("executeMethod", (("org.apache.commons.httpclient.HttpMethod", "method"),),
                   ("java.io.IOException",), "int"),
                _m("executeMethod", (("org.apache.commons.httpclient.HostConfiguration", "hostconfig"),
                                     ("org.apache.commons.httpclient.HttpMethod", "method")),
                   ("java.io.IOException",), "int"),
                _m("getParams", returns="org.apache.commons.httpclient.params.HttpClientParams"),
            ),
            callee_frames=(
                "java.net.SocketInputStream.socketRead0(Native Method)",
                "java.net.SocketInputStream.read(SocketInputStream.java:152)",
                "java.io.BufferedInputStream.fill(BufferedInputStream.java:235)",
            ),
            enclosing_throws=("java.io.IOException",),
        ),
        ScenarioSpec(
            "yarn-1630-v2.2.0", "Yarn-1630 (v2.2.0)", "missing-loop",
            "org.apache.hadoop.yarn.client.api.impl.YarnClientImpl.submitApplication", "YarnClient",
            _lin(700.0, 20.0, 5, 25, 20, "queued_apps", jitter=0.012), "Hang", s + 15,
            strategy="LoopGuard", source_file="YarnClientImpl.java", source=_YARN_LOOP_SRC,
            callee_frames=("com.sun.proxy.$Proxy17.getApplicationReport(Unknown Source:1)",
                           "java.lang.Thread.sleep(Native Method)"),
        ),
        ScenarioSpec(
            "flume-1819", "Flume-1819", "missing-loop",
            "org.apache.flume.source.ExecSource$ExecRunnable.run", "FlumeAgent",
            _lin(150.0, 0.5, 100, 1200, 900, "events_per_batch"), "Hang", s + 16,
            strategy="LoopGuard", source_file="ExecSource.java", source=_FLUME_LOOP_SRC,
            callee_frames=("java.io.BufferedReader.readLine(BufferedReader.java:317)",
                           "java.lang.Thread.yield(Native Method)"),
            partial_fix=True,
        ),
    ]
    return tl + ts + ms


def hard_coded_spec(seed: int = 0) -> ScenarioSpec:
    return ScenarioSpec(
        "hbase-hardcoded", "HBase-hardcoded", "hard-coded",
        "org.apache.hadoop.hbase.regionserver.HRegion.waitForFlushes", "RegionServer",
        _lin(50.0, 2.0, 5, 50, 30, "memstores"), "Slowdown", seed + 17,
        registry_span="java.lang.Object.wait",
        decoy=("hbase.regionserver.flush.timeout", "900"),
    )


def specs_for(category: str, seed: int = 0) -> list[ScenarioSpec]:
    if category == "all":
        return table2_specs(seed)
    if category == "hard-coded":
        return [hard_coded_spec(seed)]
    if category == "missing":
        return [s for s in table2_specs(seed) if s.category.startswith("missing")]
    found = [s for s in table2_specs(seed) if s.category == category or s.name == category]
    if not found:
        raise ValueError(f"unknown category {category!r}; choose from {', '.join(CATEGORIES + ('all',))}")
    return found


# --------------------------------------------------------------------------
# artifact builders


class _Ids:
    def __init__(self, rng: random.Random):
        self.rng = rng

    def __call__(self) -> str:
        return f"{self.rng.getrandbits(64):016x}"


def _split_marked(source: str) -> tuple[str, dict[str, int]]:
    lines, marks = [], {}
    for i, line in enumerate(source.splitlines(), 1):
        for tag in ("@@A", "@@B"):
            if tag in line:
                marks[tag[2:]] = i
                line = line.replace(tag, "")
        lines.append(line)
    return "\n".join(lines) + "\n", marks


def _short_class(qualified_fn: str) -> tuple[str, str]:
    cls, _, method = qualified_fn.rpartition(".")
    return cls, method


def _training(spec: ScenarioSpec, rng: random.Random) -> list[tuple[tuple[float, ...], float]]:
    m = spec.model
    rows = []
    for _ in range(m.samples):
        x = tuple(round(rng.uniform(lo, hi), 3) for lo, hi in zip(m.low, m.high))
        y = m(x) * (1.0 + rng.uniform(0.0, m.jitter))
        rows.append((x, round(y, 3)))
    return rows


def _dataset_csv(spec: ScenarioSpec, rows) -> str:
    out = [",".join(spec.model.names + ("observed_ms",))]
    out += [",".join([repr(v) for v in x] + [repr(y)]) for x, y in rows]
    return "\n".join(out) + "\n"


def _span(ids, trace_id, begin, end, process, fn, parents=()) -> Span:
    return Span(trace_id, ids(), tuple(parents), int(begin), int(end), process, fn)


def _traces(spec: ScenarioSpec, rng: random.Random, ids: _Ids, t0: int, alert_ms: int):
    """Baseline and current traces (and for missing bugs, the interrupted one)."""
    need = spec.true_need_ms
    cls, _ = _short_class(spec.function)
    helper = cls + ".logStatus"

    def one_run(trace_id: str, start: int, kind: str):
        spans: list[Span] = []
        root_fn = cls.rsplit(".", 1)[0] + ".Driver.main"
        body: list[Span] = []
        t = start + 5
        n_helper = 5
        if kind == "baseline":
            count = 8 if spec.category in ("too-large", "hard-coded") else 2
            if spec.category.startswith("missing"):
                count = 6
            for _ in range(count):
                d = need * rng.uniform(0.9, 1.05)
                body.append(_span(ids, trace_id, t, t + d, spec.process, spec.function))
                t += d + rng.randint(20, 60)
        elif spec.category in ("too-large", "hard-coded"):
            for _ in range(2):
                d = need * rng.uniform(0.9, 1.05)
                body.append(_span(ids, trace_id, t, t + d, spec.process, spec.function))
                t += d + rng.randint(20, 60)
            t = max(t, alert_ms - 300)
            # tracing was stopped before the oversized timeout fired
            stuck = rng.randint(3800, 4200)
            body.append(_span(ids, trace_id, t, t + stuck, spec.process, spec.function))
            t += stuck + 10
        elif spec.category == "too-small":
            t = max(t, alert_ms - 1500)
            value = _buggy_ms(spec)
            for _ in range(rng.randint(14, 22)):
                d = value * rng.uniform(1.0, 1.02)
                body.append(_span(ids, trace_id, t, t + d, spec.process, spec.function))
                t += d + rng.randint(5, 20)
        else:
            for _ in range(2):
                d = need * rng.uniform(0.9, 1.05)
                body.append(_span(ids, trace_id, t, t + d, spec.process, spec.function))
                t += d + rng.randint(20, 60)
            t = max(t, alert_ms - 200)
            body.append(_span(ids, trace_id, t, t + 4000, spec.process, spec.function))
            t += 4010
        end = t + 20
        root = _span(ids, trace_id, start, end, spec.process, root_fn)
        spans.append(root)
        for b in body:
            spans.append(Span(b.trace_id, b.span_id, (root.span_id,), b.begin_ms, b.end_ms, b.process, b.function))
            if spec.registry_span and spec.misused:
                # the timed primitive runs inside each invocation
                spans.append(_span(ids, trace_id, b.begin_ms + 1, b.end_ms, spec.process, spec.registry_span,
                                   (b.span_id,)))
        step = max((end - start) // (n_helper + 1), 1)
        for k in range(n_helper):
            b = start + (k + 1) * step
            spans.append(_span(ids, trace_id, b, b + rng.randint(2, 6), spec.process, helper, (root.span_id,)))
        return SpanTrace(trace_id, tuple(spans))

    baseline = one_run(ids(), t0 - 120_000, "baseline")
    current = one_run(ids(), alert_ms - 2500, "current")
    return baseline, current


def _interrupted(spec: ScenarioSpec, rng: random.Random, ids: _Ids, alert_ms: int, termination_ms: int):
    trace_id = ids()
    spans = []
    for _, fn, _ in BACKGROUND_THREADS:
        begin = alert_ms - rng.randint(600_000, 900_000)
        spans.append(_span(ids, trace_id, begin, termination_ms - rng.randint(0, 150), spec.process, fn))
    begin = alert_ms + rng.randint(-300, 300)
    spans.append(_span(ids, trace_id, begin, termination_ms - rng.randint(0, 200), spec.process, spec.function))
    return SpanTrace(trace_id, tuple(spans))


def _hms(epoch_ms: int) -> str:
    day_ms = epoch_ms % 86_400_000
    h, rem = divmod(day_ms // 1000, 3600)
    m, s = divmod(rem, 60)
    return f"{h:02d}:{m:02d}:{s:02d}"


def _frame(fn: str, loc: str | None) -> str:
    return f" at {fn}({loc or 'Native Method'})"


def _raw_frame(text: str) -> str:
    return f" at {text}"


def _dumps(spec: ScenarioSpec, rng: random.Random, alert_ms: int, marks: Mapping[str, int], count: int = 5) -> str:
    cls, _ = _short_class(spec.function)
    file = spec.source_file
    caller = cls.rsplit(".", 1)[0] + ".Driver.main"
    blocks = []
    for k in range(count):
        when = alert_ms + 1000 * (k + 1)
        out = [f"//Stack trace dump {k + 1} at time {_hms(when)}"]
        tid = 0x7F3A5C000000 + 0x1000 * rng.randint(1, 255)
        out.append(f'"main" #1 prio=5 os_prio=0 tid=0x{tid:012x} nid=0x{rng.randint(256, 4095):x} runnable [0x00007f3a6b1fe000]')
        out.append("java.lang.Thread.State: RUNNABLE")
        if spec.category == "missing-loop":
            line = marks["A"] if k % 2 == 0 else marks["B"]
            out.append(_raw_frame(spec.callee_frames[k % 2]))
        else:
            line = marks["A"]
            out.extend(_raw_frame(f) for f in spec.callee_frames)
        out.append(_frame(spec.function, f"{file}:{line}"))
        out.append(_frame(caller, "Driver.java:51"))
        for n, (name, fn, loc) in enumerate(BACKGROUND_THREADS, start=20):
            out.append("")
            out.append(f'"{name}" #{n} daemon prio=5 os_prio=0 tid=0x{tid + n:012x} nid=0x{n * 7:x} runnable [0x00007f3a4c5d{n:04x}]')
            out.append("java.lang.Thread.State: RUNNABLE")
            out.extend(_frame(f, l) for f, l in FRAMEWORK_IDLE)
            out.append(_frame(fn, loc))
        blocks.append("\n".join(out))
    return "\n\n".join(blocks) + "\n"


def _buggy_ms(spec: ScenarioSpec) -> int | None:
    from ..taint import parse_duration_ms

    if spec.configured_raw is not None:
        return parse_duration_ms(spec.configured_raw)
    return spec.default_ms


def _config_xml(spec: ScenarioSpec) -> str:
    props = []
    if spec.misused and spec.variable and spec.variable_is_key and spec.configured_raw is not None:
        props.append((spec.variable, spec.configured_raw))
    if spec.decoy:
        props.append(spec.decoy)
    props.append(("io.file.buffer.size", "4096"))
    out = ['<?xml version="1.0"?>', "<configuration>"]
    for k, v in props:
        out += [" <property>", f"  <name>{k}</name>", f"  <value>{v}</value>", " </property>"]
    out.append("</configuration>")
    return "\n".join(out) + "\n"


def _facts(spec: ScenarioSpec) -> str:
    cls, method = _short_class(spec.function)
    simple = cls.rsplit(".", 1)[-1]
    out = ["# tdrill-facts v1", f"# {spec.bug_id}"]
    local = f"{simple}.{method}.timeout"
    uses: list[str] = []
    if spec.category == "hard-coded":
        out += ["CONST FLUSH_WAIT_MS 3000", f"VAR {simple}.{method}.waitMs",
                f"EDGE assign FLUSH_WAIT_MS {simple}.{method}.waitMs"]
        uses.append(f"{simple}.{method}.waitMs")
    elif spec.misused:
        out.append(f"VAR {local}")
        if spec.variable_is_key:
            if spec.default_constant:
                out.append(f"CONST {spec.default_constant} {spec.default_ms}")
                out.append(f"KEY {spec.variable} {spec.default_constant}")
                out.append(f"EDGE assign {spec.default_constant} {local}")
            else:
                out.append(f"KEY {spec.variable}")
            out.append(f"EDGE read-config {spec.variable} {local}")
        else:
            out.append(f"CONST {spec.variable} {spec.default_ms}")
            out.append(f"EDGE assign {spec.variable} {local}")
        # the local is handed to the timed primitive
        param = f"{simple}.{method}.timeoutArg"
        out += [f"VAR {param}", f"EDGE pass-arg {local} {param}"]
        uses.append(local)
    if spec.decoy:
        dv = f"{simple}.{method}.auxTimeout"
        out += [f"VAR {dv}", f"EDGE read-config {spec.decoy[0]} {dv}"]
        uses.append(dv)
    out += ["CONST DEFAULT_BUFFER_SIZE 4096", "VAR Driver.main.bufferSize",
            "EDGE read-config io.file.buffer.size Driver.main.bufferSize"]
    out += [f"USE {spec.function} {u}" for u in uses]
    out.append("USE Driver.main Driver.main.bufferSize")
    return "\n".join(out) + "\n"


def _catalog(spec: ScenarioSpec, marks: Mapping[str, int]) -> dict:
    doc = {"schema": "tdrill-catalog/1", "classes": {}, "callsites": []}
    if spec.category == "missing-blocking":
        doc["classes"][spec.callee_class] = list(spec.callee_methods)
        cls, method = _short_class(spec.function)
        doc["classes"][cls] = [_m(method, throws=spec.enclosing_throws)]
        doc["callsites"].append({
            "function": spec.function, "file": spec.source_file, "line": marks["A"],
            "class": spec.callee_class, "method": spec.callee_method,
            "arg_types": None, "receiver": spec.receiver, "expression": spec.expression,
            "config_key": None,
        })
    return doc


def _workload(spec: ScenarioSpec) -> dict:
    need = int(math.ceil(spec.true_need_ms))
    small = int(math.ceil(spec.model([lo for lo in spec.model.low])))
    doc: dict = {"schema": "tdrill-workload/1", "name": spec.name, "timeouts": {}, "run": [], "tests": []}
    fn = spec.function
    if spec.category == "too-large":
        doc["timeouts"][spec.variable] = _buggy_ms(spec)
        call = {"op": "call", "function": fn, "timeout": spec.variable, "attempts": 1}
        doc["run"] = [
            {**call, "need_ms": need},
            {**call, "need_ms": None, "then": "failover", "failover_ms": 100},
            {**call, "need_ms": need},
        ]
        doc["tests"] = [
            {"name": "healthy_calls", "ops": [{**call, "need_ms": need}, {**call, "need_ms": small}]},
            {"name": "dead_endpoint_failover", "limit_ms": 1500,
             "ops": [{**call, "need_ms": None, "then": "failover", "failover_ms": 100}]},
        ]
    elif spec.category == "too-small":
        doc["timeouts"][spec.variable] = _buggy_ms(spec)
        call = {"op": "call", "function": fn, "timeout": spec.variable}
        doc["run"] = [{**call, "need_ms": need, "attempts": 6}]
        doc["tests"] = [
            {"name": "small_workload", "ops": [{**call, "need_ms": small, "attempts": 1}]},
            {"name": "large_workload", "ops": [{**call, "need_ms": need, "attempts": 1}]},
        ]
    elif spec.category == "missing-loop":
        loop = {"op": "loop_until_flag", "function": fn, "iteration_ms": 50}
        doc["run"] = [{**loop, "flag_after_ms": None}]
        doc["tests"] = [
            {"name": "normal_poll_completes", "ops": [{**loop, "flag_after_ms": need, "timeout_is_failure": True}]},
            {"name": "stuck_poll_escapes", "limit_ms": 6000, "ops": [{**loop, "flag_after_ms": None}]},
        ]
        if spec.partial_fix:
            doc["tests"].append({
                "name": "flush_on_timeout", "limit_ms": 6000,
                "ops": [{**loop, "flag_after_ms": None, "buffered_events": 3, "check_flushed": True}],
            })
    elif spec.category == "missing-blocking":
        blk = {"op": "block", "function": fn, "callee": f"{spec.callee_class}.{spec.callee_method}",
               "supports": list(spec.supports)}
        doc["run"] = [{**blk, "need_ms": None}]
        doc["tests"] = [
            {"name": "normal_call_completes", "ops": [{**blk, "need_ms": need, "timeout_is_failure": True}]},
            {"name": "stuck_call_escapes", "limit_ms": 6000, "ops": [{**blk, "need_ms": None}]},
        ]
    return doc


def _scenario(spec: ScenarioSpec) -> dict:
    need = spec.true_need_ms
    if spec.category == "too-small":
        sig = {"kind": "RepeatedFailure", "count": 3, "window_ms": 5000}
    elif spec.category == "too-large" and spec.impact == "Slowdown":
        baseline = int(3 * need + 100 + 300)
        sig = {"kind": "SlowdownBeyond", "factor": 3.0, "baseline_ms": baseline}
    elif spec.category.startswith("missing"):
        sig = {"kind": "HangBeyond", "ms": 2500}
    else:
        sig = {"kind": "HangBeyond", "ms": 2000}
    runner = ["{python}", "-m", "tdrill.faultlab.workload"]
    return {
        "schema": "tdrill-scenario/1",
        "name": spec.name,
        "workload": runner + ["run", "--bundle", "{bundle}", "--inject", "{inject}"],
        "tests": runner + ["test", "--bundle", "{bundle}", "--inject", "{inject}"],
        "signature": sig,
        "budget_ms": 10000,
        "grace_ms": 2000,
        "inject_key": spec.variable if spec.misused else None,
        "env": {},
    }


def _manifest(spec: ScenarioSpec) -> dict:
    hang = None
    if spec.category == "missing-loop":
        hang = "InfiniteLoop"
    elif spec.category == "missing-blocking":
        hang = "BlockingCall"
    outcome = None
    if spec.category != "hard-coded":
        outcome = "PartialFix" if spec.partial_fix else "Fixed"
    return {
        "schema": MANIFEST_SCHEMA,
        "name": spec.name,
        "bug_id": spec.bug_id,
        "category": spec.category,
        "expected_category": spec.expected_category,
        "root_cause_function": spec.function,
        "variable": spec.variable if spec.category in ("too-large", "too-small") else None,
        "buggy_value_ms": _buggy_ms(spec) if spec.category in ("too-large", "too-small") else None,
        "hang_type": hang,
        "strategy": spec.strategy,
        "true_need_ms": spec.true_need_ms,
        "impact": spec.impact,
        "expected_outcome": outcome,
        "seed": spec.seed,
    }


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def render_bundle(spec: ScenarioSpec) -> dict[str, str]:
    """All bundle files as ``{relative path: text}``; pure in ``spec``."""
    if spec.category not in CATEGORIES:
        raise ValueError(f"unknown category {spec.category!r}")
    rng = random.Random(spec.seed)
    ids = _Ids(rng)
    t0 = EPOCH_BASE + rng.randrange(0, 86_400_000)
    alert_ms = t0 + 60_000
    files: dict[str, str] = {}

    baseline, current = _traces(spec, rng, ids, t0, alert_ms)
    files["baseline.trace"] = render_span_trace(baseline)
    files["trace.trace"] = render_span_trace(current)
    alert = {
        "alert_time_ms": alert_ms,
        "affected_process": spec.process,
        "window": [alert_ms - 2000, max(alert_ms + 3000, current.window[1])],
        "features": dict(zip(spec.model.names, spec.model.query)),
        "impact": spec.impact,
    }
    files["alert.json"] = _dump_json(alert)
    files["site.xml"] = _config_xml(spec)
    files["facts.txt"] = _facts(spec)
    files["dataset.csv"] = _dataset_csv(spec, _training(spec, rng))

    bundle = {
        "schema": "tdrill-bundle/1",
        "trace": "trace.trace",
        "baseline": "baseline.trace",
        "alert": "alert.json",
        "config": ["site.xml"],
        "facts": "facts.txt",
        "dataset": "dataset.csv",
        "catalog": "catalog.json",
        "scenario": "scenario.json",
        "manifest": "manifest.json",
        "sources": {},
    }
    marks: dict[str, int] = {}
    if spec.category.startswith("missing"):
        source, marks = _split_marked(spec.source)
        files[f"src/{spec.source_file}"] = source
        bundle["sources"] = {spec.source_file: f"src/{spec.source_file}"}
        files["dumps.txt"] = _dumps(spec, rng, alert_ms, marks)
        termination = alert_ms + 6000
        files["interrupted.trace"] = render_span_trace(_interrupted(spec, rng, ids, alert_ms, termination))
        bundle.update(dumps="dumps.txt", interrupted="interrupted.trace", termination_time_ms=termination)
    files["catalog.json"] = _dump_json(_catalog(spec, marks))
    files["workload.json"] = _dump_json(_workload(spec))
    files["scenario.json"] = _dump_json(_scenario(spec))
    files["manifest.json"] = _dump_json(_manifest(spec))
    files["bundle.json"] = _dump_json(bundle)
    return files


def generate(spec: ScenarioSpec, out_dir: str | Path) -> Path:
    """Write the bundle for ``spec`` into ``out_dir`` and return the directory."""
    out = Path(out_dir)
    try:
        for rel, text in render_bundle(spec).items():
            path = out / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write bundle to {out}: {exc.strerror or exc}") from exc
    return out


def generate_many(category: str, seed: int, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    return [generate(s, out / s.name) for s in specs_for(category, seed)]
