"""Sequential thread-dump analysis for hangs caused by missing timeouts.

Grammar accepted by :func:`parse_thread_dump` (a jstack subset)::

    //Stack trace dump 1 at time 12:11:30          optional capture comment
    "main" #1 prio=5 os_prio=0 tid=... nid=... runnable [...]
    java.lang.Thread.State: RUNNABLE
     at java.lang.Thread.sleep(Native Method)
     at YarnClientImpl.submitApplication(buggycode.java:75)

Thread blocks are separated by blank lines.  Frames are listed innermost
first.  ``...`` elision lines, ``- locked <...>`` monitor lines and ``/* */``
annotations are skipped.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .errors import EmptyDump, InsufficientDumps, MalformedFrame, NoCommonFunction
from .trace import FunctionStats, SpanTrace

DEFAULT_FRAMEWORK_PREFIXES = ("java.", "javax.", "jdk.", "sun.", "com.sun.", "kotlin.", "scala.")

_HEADER_RE = re.compile(r'^"(?P<name>[^"]*)"(?P<rest>.*)$')
_STATE_RE = re.compile(r"^\s*java\.lang\.Thread\.State:\s*(?P<state>.+?)\s*$")
_FRAME_RE = re.compile(r"^\s*at\s+(?P<fn>[^\s(]+)\((?P<loc>[^)]*)\)\s*$")
_TIME_RE = re.compile(r"^//.*?(\d{1,2}):(\d{2}):(\d{2})(?:\.(\d{1,3}))?")
_DUMP_SPLIT_RE = re.compile(r"^//\s*Stack trace dump", re.MULTILINE)


@dataclass(frozen=True)
class StackFrame:
    function: str
    file: str | None  # None for native frames
    line: int | None  # None for native frames

    @property
    def native(self) -> bool:
        return self.file is None

    def render(self) -> str:
        loc = "Native Method" if self.native else f"{self.file}:{self.line}"
        return f" at {self.function}({loc})"


@dataclass(frozen=True)
class ThreadStack:
    name: str
    state: str | None
    frames: tuple[StackFrame, ...]  # innermost first
    header: str = ""  # remainder of the header line after the quoted name


@dataclass(frozen=True)
class StackDump:
    capture_time_ms: int | None
    threads: tuple[ThreadStack, ...]
    label: str | None = None  # the leading "//..." comment, verbatim

    def thread(self, name: str) -> ThreadStack | None:
        return next((t for t in self.threads if t.name == name), None)


def _parse_frame(text: str, lineno: int) -> StackFrame:
    m = _FRAME_RE.match(text)
    if not m:
        raise MalformedFrame(lineno, text)
    fn, loc = m.group("fn"), m.group("loc").strip()
    if loc == "Native Method":
        return StackFrame(fn, None, None)
    file, sep, num = loc.rpartition(":")
    if not sep or not num.isdigit() or int(num) <= 0 or not file:
        raise MalformedFrame(lineno, text)
    return StackFrame(fn, file, int(num))


def parse_thread_dump(text: str) -> StackDump:
    threads: list[ThreadStack] = []
    label = None
    capture = None
    cur: dict | None = None

    def close():
        nonlocal cur
        if cur is not None:
            if not cur["frames"]:
                raise MalformedFrame(cur["line"], f'thread "{cur["name"]}" has no frames')
            threads.append(ThreadStack(cur["name"], cur["state"], tuple(cur["frames"]), cur["header"]))
        cur = None

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip()
        stripped = line.strip()
        if not stripped:
            close()
            continue
        if stripped.startswith("//"):
            if label is None and not threads and cur is None:
                label = stripped
                m = _TIME_RE.match(stripped)
                if m:
                    h, mi, s, frac = m.groups()
                    capture = ((int(h) * 60 + int(mi)) * 60 + int(s)) * 1000 + int((frac or "0").ljust(3, "0"))
            continue
        if stripped in ("...", "…") or stripped.startswith(("/*", "- ")):
            continue
        m = _HEADER_RE.match(stripped)
        if m:
            close()
            cur = {"name": m.group("name"), "header": m.group("rest"), "state": None, "frames": [], "line": lineno}
            continue
        if cur is None:
            raise MalformedFrame(lineno, line)
        m = _STATE_RE.match(line)
        if m:
            cur["state"] = m.group("state")
            continue
        cur["frames"].append(_parse_frame(line, lineno))
    close()
    if not threads:
        raise EmptyDump("no thread blocks found")
    return StackDump(capture, tuple(threads), label)


def parse_thread_dumps(text: str) -> list[StackDump]:
    """Split a file holding several ``//Stack trace dump`` sections."""
    starts = [m.start() for m in _DUMP_SPLIT_RE.finditer(text)]
    if not starts:
        return [parse_thread_dump(text)]
    bounds = starts + [len(text)]
    return [parse_thread_dump(text[a:b]) for a, b in zip(bounds, bounds[1:])]


def render_thread_dump(dump: StackDump) -> str:
    out = []
    if dump.label is not None:
        out.append(dump.label)
    for i, t in enumerate(dump.threads):
        if i:
            out.append("")
        out.append(f'"{t.name}"{t.header}')
        if t.state is not None:
            out.append(f"java.lang.Thread.State: {t.state}")
        out.extend(f.render() for f in t.frames)
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# analysis


class HangType(str, Enum):
    INFINITE_LOOP = "InfiniteLoop"
    BLOCKING_CALL = "BlockingCall"


@dataclass(frozen=True)
class RootCauseCandidate:
    function: str
    thread: str
    file: str | None
    line_numbers_observed: frozenset[int]
    is_background: bool = False
    hang_type: HangType | None = None
    # one frame list per dump, innermost first; used to recover the callee
    frames_above: tuple[tuple[StackFrame, ...], ...] = field(default=(), compare=False)


def is_application_frame(frame: StackFrame, framework_prefixes: Sequence[str]) -> bool:
    return not frame.function.startswith(tuple(framework_prefixes))


def common_innermost(
    dumps: Sequence[StackDump],
    framework_prefixes: Sequence[str] = DEFAULT_FRAMEWORK_PREFIXES,
) -> list[RootCauseCandidate]:
    """Deepest application frame shared by every dump, per thread.

    Threads must be present in all dumps.  Among the functions that appear in
    every dump, the one with the smallest summed depth wins (ties by name),
    which makes the choice independent of dump order.  Threads that share
    nothing are skipped; if no thread yields a candidate, NoCommonFunction.
    """
    if len(dumps) < 2:
        raise InsufficientDumps(f"need at least 2 dumps, got {len(dumps)}")
    names = [t.name for t in dumps[0].threads]
    shared = [n for n in names if all(d.thread(n) is not None for d in dumps[1:])]
    candidates: list[RootCauseCandidate] = []
    barren: list[str] = []
    for name in sorted(set(shared)):
        stacks = [d.thread(name) for d in dumps]
        depth_maps: list[dict[str, int]] = []
        for st in stacks:
            depths: dict[str, int] = {}
            for depth, fr in enumerate(st.frames):
                if is_application_frame(fr, framework_prefixes):
                    depths.setdefault(fr.function, depth)
            depth_maps.append(depths)
        if not any(depth_maps):
            continue  # pure runtime thread (GC, signal dispatcher, ...)
        common = set(depth_maps[0]).intersection(*depth_maps[1:])
        if not common:
            barren.append(name)
            continue
        fn = min(common, key=lambda f: (sum(dm[f] for dm in depth_maps), f))
        lines: set[int] = set()
        files: set[str] = set()
        above = []
        for st, dm in zip(stacks, depth_maps):
            fr = st.frames[dm[fn]]
            if fr.line is not None:
                lines.add(fr.line)
                files.add(fr.file)
            above.append(st.frames[: dm[fn]])
        candidates.append(
            RootCauseCandidate(
                function=fn,
                thread=name,
                file=min(files) if files else None,
                line_numbers_observed=frozenset(lines),
                frames_above=tuple(above),
            )
        )
    if not candidates:
        raise NoCommonFunction(barren or shared or names)
    return candidates


def classify_hang(candidate: RootCauseCandidate) -> HangType:
    """Several distinct lines across dumps mean the function keeps looping."""
    if len(candidate.line_numbers_observed) >= 2:
        return HangType.INFINITE_LOOP
    return HangType.BLOCKING_CALL


def function_matches(span_function: str, frame_function: str) -> bool:
    """Trace names are fully qualified; dump frames may drop the package."""
    return (
        span_function == frame_function
        or span_function.endswith("." + frame_function)
        or frame_function.endswith("." + span_function)
    )


def prune_background(
    candidates: Iterable[RootCauseCandidate],
    interrupted_trace: SpanTrace,
    alert_time_ms: int,
    termination_time_ms: int,
    baseline: Mapping[str, FunctionStats] | None = None,
    tolerance_ms: int = 2000,
) -> list[RootCauseCandidate]:
    """Flag candidates that belong to long-running background threads.

    A candidate survives when some span of its function in the interrupted
    trace (1) ran longer than the function's normal duration, (2) began
    within ``tolerance_ms`` of the alert and (3) ended within ``tolerance_ms``
    of the forced termination.  A function with no baseline entry passes (1).
    Every input candidate is returned; pruned ones carry ``is_background``.
    """
    baseline = baseline or {}
    out = []
    for cand in candidates:
        normal = None
        for fn, stats in baseline.items():
            if function_matches(fn, cand.function):
                normal = stats.mean_ms
                break
        keep = False
        for span in interrupted_trace.spans:
            if not function_matches(span.function, cand.function):
                continue
            longer = normal is None or span.duration_ms > normal
            starts = abs(span.begin_ms - alert_time_ms) <= tolerance_ms
            ends = abs(span.end_ms - termination_time_ms) <= tolerance_ms
            if longer and starts and ends:
                keep = True
                break
        out.append(replace(cand, is_background=not keep))
    return out


def survivors(candidates: Iterable[RootCauseCandidate]) -> list[RootCauseCandidate]:
    return [c for c in candidates if not c.is_background]
