"""Timeout-insertion patch plans for missing-timeout hangs.

Blocking calls climb a ladder: reuse an overload that takes a timeout, else
call the class's timeout setters before the call, else run the call on a
worker and bound the wait.  Infinite loops get an elapsed-time guard.  Every
plan introduces a configuration key for the new timeout.

Plans are rendered as unified diffs against Java-like pseudo-source when the
source text is available, or as an additions-only diff otherwise.
"""

from __future__ import annotations

import difflib
import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping

from .errors import AlreadyPatched, InputError, UnknownCallsite
from .stacks import HangType

INT_DURATION_TYPES = frozenset({"int", "long", "java.lang.Integer", "java.lang.Long", "Integer", "Long"})
CATALOG_SCHEMA = "tdrill-catalog/1"
GUARD_CONDITION = "timeout > 0 && elapsed >= timeout"


class Strategy(str, Enum):
    REPLACE_WITH_OVERLOAD = "ReplaceWithOverload"
    INSERT_SETTERS = "InsertSetters"
    ASYNC_WRAPPER = "AsyncWrapper"
    LOOP_GUARD = "LoopGuard"

    def admissible_for(self, hang: HangType) -> bool:
        return (self is Strategy.LOOP_GUARD) == (hang is HangType.INFINITE_LOOP)


# the blocking ladder, best rung first
LADDER = (Strategy.REPLACE_WITH_OVERLOAD, Strategy.INSERT_SETTERS, Strategy.ASYNC_WRAPPER)


@dataclass(frozen=True)
class Param:
    type: str
    name: str = ""
    role: str = ""


@dataclass(frozen=True)
class MethodSig:
    cls: str
    name: str
    params: tuple[Param, ...] = ()
    throws: tuple[str, ...] = ()
    returns: str = "void"

    @property
    def param_types(self) -> tuple[str, ...]:
        return tuple(p.type for p in self.params)

    def signature(self) -> str:
        args = ", ".join(f"{p.type} {p.name}".strip() for p in self.params)
        return f"{self.name}({args})"

    def qualified(self) -> str:
        return f"{self.cls}.{self.signature()}"


@dataclass(frozen=True)
class Callsite:
    function: str  # enclosing function, fully qualified
    file: str
    line: int
    cls: str  # class of the called method
    method: str
    arg_types: tuple[str, ...] | None = None
    receiver: str | None = None
    expression: str | None = None  # call expression as written at the line
    config_key: str | None = None

    def to_dict(self) -> dict:
        d = {
            "function": self.function, "file": self.file, "line": self.line,
            "class": self.cls, "method": self.method,
            "arg_types": list(self.arg_types) if self.arg_types is not None else None,
            "receiver": self.receiver, "expression": self.expression,
            "config_key": self.config_key,
        }
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Callsite":
        arg_types = d.get("arg_types")
        return cls(
            d["function"], d["file"], int(d["line"]), d["class"], d["method"],
            tuple(arg_types) if arg_types is not None else None,
            d.get("receiver"), d.get("expression"), d.get("config_key"),
        )


@dataclass(frozen=True)
class LoopSite:
    function: str
    file: str | None
    lines: tuple[int, ...]  # line numbers observed inside the loop
    config_key: str | None = None

    def to_dict(self) -> dict:
        return {"function": self.function, "file": self.file, "lines": list(self.lines),
                "config_key": self.config_key}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LoopSite":
        return cls(d["function"], d.get("file"), tuple(d["lines"]), d.get("config_key"))


@dataclass(frozen=True)
class ApiCatalog:
    classes: Mapping[str, tuple[MethodSig, ...]]
    callsites: tuple[Callsite, ...] = ()

    def __post_init__(self):
        for cls, methods in self.classes.items():
            seen = set()
            for m in methods:
                sig = (m.name, m.param_types)
                if sig in seen:
                    raise InputError(f"catalog: duplicate signature {cls}.{m.signature()}")
                seen.add(sig)

    def methods(self, cls: str) -> tuple[MethodSig, ...]:
        return self.classes.get(cls, ())

    def callsite_at(self, file: str | None, line: int, function: str | None = None) -> Callsite | None:
        for cs in self.callsites:
            if cs.line == line and (file is None or cs.file == file):
                if function is None or _same_function(cs.function, function):
                    return cs
        return None

    def to_dict(self) -> dict:
        return {
            "schema": CATALOG_SCHEMA,
            "classes": {
                cls: [
                    {
                        "name": m.name,
                        "params": [{"type": p.type, "name": p.name, **({"role": p.role} if p.role else {})}
                                   for p in m.params],
                        "throws": list(m.throws),
                        "returns": m.returns,
                    }
                    for m in methods
                ]
                for cls, methods in self.classes.items()
            },
            "callsites": [cs.to_dict() for cs in self.callsites],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ApiCatalog":
        if d.get("schema", CATALOG_SCHEMA) != CATALOG_SCHEMA:
            raise InputError(f"unsupported catalog schema {d.get('schema')!r}")
        classes = {}
        for cname, methods in d.get("classes", {}).items():
            classes[cname] = tuple(
                MethodSig(
                    cname,
                    m["name"],
                    tuple(Param(p["type"], p.get("name", ""), p.get("role", "")) for p in m.get("params", [])),
                    tuple(m.get("throws", [])),
                    m.get("returns", "void"),
                )
                for m in methods
            )
        return cls(classes, tuple(Callsite.from_dict(c) for c in d.get("callsites", [])))


def load_catalog(path: str | Path) -> ApiCatalog:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return ApiCatalog.from_dict(doc)
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError(f"cannot load catalog {path}: {exc}") from exc


def _same_function(a: str, b: str) -> bool:
    return a == b or a.endswith("." + b) or b.endswith("." + a)


@dataclass(frozen=True)
class PatchPlan:
    strategy: Strategy
    target_function: str
    site: Callsite | LoopSite
    new_config_key: str
    key_constant: str
    timeout_param_binding: str
    rendered_diff: str
    notes: tuple[str, ...] = ()
    replacement: str | None = None  # overload signature
    setters: tuple[str, ...] = ()
    exception: str | None = None
    wrapper: str | None = None
    default_timeout_ms: int = 0
    patched_source: str | None = None  # full source after the edit, when source was given

    @property
    def hang_type(self) -> HangType:
        return HangType.INFINITE_LOOP if self.strategy is Strategy.LOOP_GUARD else HangType.BLOCKING_CALL

    @property
    def callee(self) -> str | None:
        return f"{self.site.cls}.{self.site.method}" if isinstance(self.site, Callsite) else None

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "target_function": self.target_function,
            "site_kind": "callsite" if isinstance(self.site, Callsite) else "loop",
            "site": self.site.to_dict(),
            "new_config_key": self.new_config_key,
            "key_constant": self.key_constant,
            "timeout_param_binding": self.timeout_param_binding,
            "rendered_diff": self.rendered_diff,
            "notes": list(self.notes),
            "replacement": self.replacement,
            "setters": list(self.setters),
            "exception": self.exception,
            "wrapper": self.wrapper,
            "default_timeout_ms": self.default_timeout_ms,
            "patched_source": self.patched_source,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PatchPlan":
        site_cls = Callsite if d["site_kind"] == "callsite" else LoopSite
        return cls(
            strategy=Strategy(d["strategy"]),
            target_function=d["target_function"],
            site=site_cls.from_dict(d["site"]),
            new_config_key=d["new_config_key"],
            key_constant=d["key_constant"],
            timeout_param_binding=d["timeout_param_binding"],
            rendered_diff=d["rendered_diff"],
            notes=tuple(d.get("notes", ())),
            replacement=d.get("replacement"),
            setters=tuple(d.get("setters", ())),
            exception=d.get("exception"),
            wrapper=d.get("wrapper"),
            default_timeout_ms=d.get("default_timeout_ms", 0),
            patched_source=d.get("patched_source"),
        )


# --------------------------------------------------------------------------
# catalog queries


def _called_method(catalog: ApiCatalog, callsite: Callsite) -> MethodSig:
    methods = [m for m in catalog.methods(callsite.cls) if m.name == callsite.method]
    if not methods:
        raise UnknownCallsite(f"{callsite.cls}.{callsite.method} is not in the API catalog")
    if callsite.arg_types is not None:
        exact = [m for m in methods if m.param_types == tuple(callsite.arg_types)]
        if not exact:
            raise UnknownCallsite(
                f"no {callsite.cls}.{callsite.method} overload takes ({', '.join(callsite.arg_types)})"
            )
        return exact[0]
    return min(methods, key=lambda m: (len(m.params), m.signature()))


def _is_timeout_param(p: Param) -> bool:
    return p.type in INT_DURATION_TYPES and ("timeout" in p.name.lower() or p.role.lower() == "timeout")


def qualifying_overloads(catalog: ApiCatalog, callsite: Callsite) -> list[MethodSig]:
    base = _called_method(catalog, callsite)
    found = []
    for m in catalog.methods(callsite.cls):
        if m.name != base.name or len(m.params) != len(base.params) + 1:
            continue
        if m.param_types[:-1] == base.param_types and _is_timeout_param(m.params[-1]):
            found.append(m)
    return sorted(found, key=lambda m: (len(m.params), m.signature()))


def find_overload_with_timeout(catalog: ApiCatalog, callsite: Callsite) -> MethodSig | None:
    """Same method plus one trailing integer timeout parameter, if the class has it."""
    found = qualifying_overloads(catalog, callsite)
    return found[0] if found else None


def find_timeout_setters(catalog: ApiCatalog, callsite: Callsite) -> list[MethodSig]:
    if callsite.cls not in catalog.classes:
        raise UnknownCallsite(f"class {callsite.cls} is not in the API catalog")
    setters = [
        m for m in catalog.methods(callsite.cls)
        if "set" in m.name.lower() and "timeout" in m.name.lower()
    ]
    return sorted(setters, key=lambda m: (m.name, m.param_types))


# --------------------------------------------------------------------------
# naming


def _camel_words(name: str) -> list[str]:
    return [w.lower() for w in re.findall(r"[A-Z]?[a-z0-9]+|[A-Z]+(?![a-z])", name)]


_GENERIC_METHODS = frozenset({"run", "call", "execute", "main", "process", "doRun"})


def default_config_key(method: str, owner: str | None = None) -> str:
    """``rollEditLog`` -> ``roll.edit.log.timeout``; generic names take the owning class."""
    words = _camel_words(method)
    if method in _GENERIC_METHODS and owner:
        words = _camel_words(re.split(r"[.$]", owner)[-1]) + words
    return ".".join(words + ["timeout"])


def key_constant_name(key: str) -> str:
    parts = re.split(r"[^A-Za-z0-9]+", key)
    parts = [p.upper() for p in parts if p]
    if not parts or parts[-1] != "TIMEOUT":
        parts.append("TIMEOUT")
    return "_".join(parts) + "_KEY"


def _short(qualified: str) -> tuple[str, str]:
    cls, _, method = qualified.rpartition(".")
    return cls, method


# --------------------------------------------------------------------------
# pseudo-source editing


def _indent(line: str) -> str:
    return line[: len(line) - len(line.lstrip())]


def _block_end(lines: list[str], start: int) -> int:
    """Index of the line closing the first ``{`` at or after ``start``."""
    depth = 0
    opened = False
    for i in range(start, len(lines)):
        code = re.sub(r'"(?:\\.|[^"\\])*"', '""', lines[i].split("//", 1)[0])
        for ch in code:
            if ch == "{":
                depth += 1
                opened = True
            elif ch == "}":
                depth -= 1
                if opened and depth == 0:
                    return i
    raise InputError("unbalanced braces in source")


def _class_open(lines: list[str]) -> int:
    for i, line in enumerate(lines):
        if re.search(r"\bclass\s+\w+", line) and "{" in line:
            return i
    raise InputError("no class declaration in source")


def _method_span(lines: list[str], method: str) -> tuple[int, int]:
    pat = re.compile(rf"\b{re.escape(method)}\s*\(")
    for i, line in enumerate(lines):
        stripped = line.strip()
        if not pat.search(line) or stripped.startswith(("//", "*")):
            continue
        if stripped.endswith(";") or re.match(r"^\s*(return\b|[\w.]+\s*=|if\b|while\b)", line):
            continue  # a call, not a declaration
        j = i
        while j < len(lines) and "{" not in lines[j]:
            j += 1
        if j == len(lines):
            continue
        return i, _block_end(lines, j)
    raise InputError(f"method {method} not found in source")


def _field_lines(indent: str, key: str, const: str, default_ms: int) -> list[str]:
    return [
        f'{indent}private static final String {const} = "{key}";',
        f"{indent}private long timeout = conf.getLong({const}, {default_ms}L);",
    ]


def _property_block(key: str, value_ms: int) -> list[str]:
    return [
        "<property>",
        f"  <name>{key}</name>",
        f"  <value>{value_ms}</value>",
        "</property>",
    ]


def _diff(path: str, before: list[str], after: list[str]) -> str:
    src = f"a/{path}" if before else "/dev/null"
    out = difflib.unified_diff(before, after, fromfile=src, tofile=f"b/{path}", lineterm="")
    return "\n".join(out) + "\n"


def _config_diff(key: str, value_ms: int, config_path: str, config_text: str | None) -> str:
    block = _property_block(key, value_ms)
    if config_text is None:
        return _diff(config_path, [], block)
    before = config_text.splitlines()
    if any(f"<name>{key}</name>" in l for l in before):
        raise AlreadyPatched(f"{config_path} already declares {key}")
    close = next((i for i, l in enumerate(before) if "</configuration>" in l), len(before))
    after = before[:close] + ["  " + b for b in block] + before[close:]
    return _diff(config_path, before, after)


def _add_fields(lines: list[str], key: str, const: str, default_ms: int) -> list[str]:
    if any(f'"{key}"' in l for l in lines):
        raise AlreadyPatched(f"source already declares configuration key {key}")
    c = _class_open(lines)
    body_indent = _indent(lines[c]) + "  "
    return lines[: c + 1] + _field_lines(body_indent, key, const, default_ms) + lines[c + 1:]


@dataclass
class _Render:
    source_path: str
    source: str | None
    config_path: str
    config_text: str | None


def _render(r: _Render, edit, snippet: list[str], key: str, default_ms: int) -> tuple[str, str | None]:
    patched = None
    if r.source is None:
        code = _diff(r.source_path, [], snippet)
    else:
        before = r.source.splitlines()
        after = edit(before)
        patched = "\n".join(after) + "\n"
        code = _diff(r.source_path, before, after)
    return code + _config_diff(key, default_ms, r.config_path, r.config_text), patched


# --------------------------------------------------------------------------
# planners


def _enclosing_throws(catalog: ApiCatalog, function: str) -> tuple[str, ...]:
    cls, method = _short(function)
    for cname, methods in catalog.classes.items():
        if _same_function(cname, cls):
            for m in methods:
                if m.name == method and m.throws:
                    return m.throws
    return ()


def plan_blocking_fix(
    callsite: Callsite,
    catalog: ApiCatalog,
    *,
    source: str | None = None,
    source_path: str | None = None,
    config_text: str | None = None,
    config_path: str = "conf/timeout-site.xml",
    timeout_ms: int = 0,
    config_key: str | None = None,
) -> PatchPlan:
    called = _called_method(catalog, callsite)
    key = config_key or callsite.config_key or default_config_key(callsite.method)
    const = key_constant_name(key)
    binding = f"timeout = conf.getLong({const}, {timeout_ms}L)"
    render = _Render(source_path or callsite.file, source, config_path, config_text)
    notes: list[str] = []
    receiver = callsite.receiver or "obj"
    expr = callsite.expression or f"{receiver}.{callsite.method}()"

    def line_index(lines: list[str]) -> int:
        idx = callsite.line - 1
        if not (0 <= idx < len(lines)) or expr not in lines[idx]:
            hits = [i for i, l in enumerate(lines) if expr in l]
            if not hits:
                raise InputError(f"call {expr!r} not found in {render.source_path}")
            idx = min(hits, key=lambda i: abs(i - (callsite.line - 1)))
        return idx

    overload = find_overload_with_timeout(catalog, callsite)
    if overload is not None:
        ties = qualifying_overloads(catalog, callsite)
        if len(ties) > 1:
            notes.append("overload tie: " + ", ".join(m.signature() for m in ties) + f"; chose {overload.signature()}")
        new_expr = re.sub(r"\)\s*$", "", expr)
        new_expr = new_expr + (", timeout)" if not new_expr.endswith("(") else "timeout)")

        def edit(lines):
            i = line_index(lines)
            if new_expr in lines[i]:
                raise AlreadyPatched(f"{render.source_path}:{i + 1} already passes a timeout")
            lines = list(lines)
            lines[i] = lines[i].replace(expr, new_expr, 1)
            return _add_fields(lines, key, const, timeout_ms)

        diff, patched = _render(render, edit, [new_expr + ";"], key, timeout_ms)
        return PatchPlan(
            Strategy.REPLACE_WITH_OVERLOAD, callsite.function, callsite, key, const, binding, diff,
            tuple(notes), replacement=overload.qualified(), default_timeout_ms=timeout_ms, patched_source=patched,
        )

    setters = find_timeout_setters(catalog, callsite)
    if setters:
        calls = [f"{receiver}.{s.name}((int) timeout);" for s in setters]

        def edit(lines):
            i = line_index(lines)
            window = lines[max(0, i - len(calls)): i]
            if any(c in l for c in calls for l in window):
                raise AlreadyPatched(f"setters already precede {render.source_path}:{i + 1}")
            ind = _indent(lines[i])
            lines = lines[:i] + [ind + c for c in calls] + lines[i:]
            return _add_fields(lines, key, const, timeout_ms)

        diff, patched = _render(render, edit, calls, key, timeout_ms)
        return PatchPlan(
            Strategy.INSERT_SETTERS, callsite.function, callsite, key, const, binding, diff,
            tuple(notes), setters=tuple(s.qualified() for s in setters), default_timeout_ms=timeout_ms, patched_source=patched,
        )

    declared = _enclosing_throws(catalog, callsite.function) or called.throws
    if declared:
        exc = declared[0]
    else:
        exc = "java.lang.RuntimeException"
        notes.append("neither the enclosing function nor the callee declares an exception; raising unchecked")
    exc_short = exc.rpartition(".")[2]
    wrapper = f"{callsite.method}WithTimeout"
    ret = called.returns
    boxed = {"void": "Void", "int": "Integer", "long": "Long", "boolean": "Boolean"}.get(ret, ret)
    body = f"return {expr};" if ret != "void" else f"{expr}; return null;"
    get = "return future.get(timeout, TimeUnit.MILLISECONDS);" if ret != "void" else \
        "future.get(timeout, TimeUnit.MILLISECONDS);"
    notes.append("on success the wrapper returns the callee's result unchanged")

    def wrapper_lines(ind: str) -> list[str]:
        return [
            f"{ind}// runs the blocking call on a worker and bounds the wait",
            f"{ind}public {ret} {wrapper}() throws {exc_short} {{",
            f"{ind}  ExecutorService executor = Executors.newSingleThreadExecutor();",
            f"{ind}  Callable<{boxed}> callable = new Callable<{boxed}>() {{",
            f"{ind}    @Override",
            f"{ind}    public {boxed} call() throws Exception {{",
            f"{ind}      {body}",
            f"{ind}    }}",
            f"{ind}  }};",
            f"{ind}  Future<{boxed}> future = executor.submit(callable);",
            f"{ind}  try {{",
            f"{ind}    {get}",
            f"{ind}  }} catch (Exception e) {{",
            f"{ind}    future.cancel(true);",
            f'{ind}    throw new {exc_short}("{callsite.method} timed out after " + timeout + " ms");',
            f"{ind}  }} finally {{",
            f"{ind}    executor.shutdown();",
            f"{ind}  }}",
            f"{ind}}}",
        ]

    def edit(lines):
        if any(f"{wrapper}(" in l for l in lines):
            raise AlreadyPatched(f"{render.source_path} already defines {wrapper}")
        i = line_index(lines)
        lines = list(lines)
        lines[i] = lines[i].replace(expr, f"{wrapper}()", 1)
        c = _class_open(lines)
        end = _block_end(lines, c)
        ind = _indent(lines[c]) + "  "
        lines = lines[:end] + [""] + wrapper_lines(ind) + lines[end:]
        return _add_fields(lines, key, const, timeout_ms)

    diff, patched = _render(render, edit, [f"{wrapper}();", ""] + wrapper_lines(""), key, timeout_ms)
    return PatchPlan(
        Strategy.ASYNC_WRAPPER, callsite.function, callsite, key, const, binding, diff,
        tuple(notes), exception=exc, wrapper=wrapper, default_timeout_ms=timeout_ms, patched_source=patched,
    )


def plan_loop_fix(
    site: LoopSite,
    *,
    source: str | None = None,
    source_path: str | None = None,
    config_text: str | None = None,
    config_path: str = "conf/timeout-site.xml",
    timeout_ms: int = 0,
    config_key: str | None = None,
) -> PatchPlan:
    """Record the start before the loop and check elapsed time each iteration."""
    owner, method = _short(site.function)
    key = config_key or site.config_key or default_config_key(method, owner)
    const = key_constant_name(key)
    binding = f"timeout = conf.getLong({const}, {timeout_ms}L)"
    render = _Render(source_path or site.file or f"{method}.java", source, config_path, config_text)

    def guard(ind: str) -> list[str]:
        return [
            f"{ind}long elapsed = System.currentTimeMillis() - st;",
            f"{ind}if ({GUARD_CONDITION}) {{",
            f'{ind}  throw new TimeoutException("Timed out. Breaking infinite polling!");',
            f"{ind}}}",
        ]

    def edit(lines):
        m_start, m_end = _method_span(lines, method)
        if any("elapsed >= timeout" in l for l in lines[m_start: m_end + 1]):
            raise AlreadyPatched(f"{method} already has a loop guard")
        first = min(site.lines) - 1 if site.lines else m_end
        head = None
        for i in range(min(first, m_end), m_start - 1, -1):
            if re.match(r"^\s*(while|for)\s*\(|^\s*do\s*\{", lines[i]):
                head = i
                break
        if head is None:
            raise InputError(f"no loop around line {first + 1} in {method}")
        end = _block_end(lines, head)
        ind = _indent(lines[head])
        body = _indent(lines[head + 1]) if head + 1 < end and lines[head + 1].strip() else ind + "  "
        out = (
            lines[:head]
            + [f"{ind}long st = System.currentTimeMillis();"]
            + lines[head:end]
            + guard(body)
            + lines[end:]
        )
        return _add_fields(out, key, const, timeout_ms)

    snippet = ["long st = System.currentTimeMillis();"] + guard("")
    diff, patched = _render(render, edit, snippet, key, timeout_ms)
    return PatchPlan(
        Strategy.LOOP_GUARD, site.function, site, key, const, binding, diff,
        ("guard disabled when the configured timeout is 0",), exception="java.util.concurrent.TimeoutException",
        default_timeout_ms=timeout_ms, patched_source=patched,
    )
