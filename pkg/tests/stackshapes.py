"""The four-thread MapReduce-5066 shape used by pruning tests."""

from __future__ import annotations

from tdrill.stacks import StackDump, StackFrame, ThreadStack
from tdrill.trace import Span, SpanTrace

ALERT = 36_690_000  # 10:11:30
TERMINATION = ALERT + 6_000
BACKGROUND = {
    "IPC Server listener": "org.apache.hadoop.ipc.Server$Listener.run",
    "IPC Server Responder": "org.apache.hadoop.ipc.Server$Responder.doRunLoop",
    "Socket Reader #1": "org.apache.hadoop.ipc.Server$Listener$Reader.run",
}
NOTIFY = "JobEndNotifier.httpNotification"


def dumps(count: int = 3) -> list[StackDump]:
    out = []
    for k in range(count):
        threads = [ThreadStack("main", "RUNNABLE", (
            StackFrame("java.net.SocketInputStream.socketRead0", None, None),
            StackFrame(NOTIFY, "JobEndNotifier.java", 138),
            StackFrame("JobEndNotifier.localRunnerNotification", "JobEndNotifier.java", 148),
        ), " #1 prio=5")]
        for name, fn in BACKGROUND.items():
            threads.append(ThreadStack(name, "RUNNABLE", (
                StackFrame("sun.nio.ch.EPollArrayWrapper.epollWait", None, None),
                StackFrame(fn, "Server.java", 600 + k % 2),
            ), " #20 daemon prio=5"))
        out.append(StackDump(ALERT + 1000 * (k + 1), tuple(threads)))
    return out


def interrupted() -> SpanTrace:
    spans = [Span("it", "n", (), ALERT + 120, TERMINATION - 40, "JobTracker",
                  "org.apache.hadoop.mapred." + NOTIFY)]
    for i, fn in enumerate(BACKGROUND.values()):
        spans.append(Span("it", f"b{i}", (), ALERT - 700_000, TERMINATION - 10, "JobTracker", fn))
    return SpanTrace("it", tuple(spans))
