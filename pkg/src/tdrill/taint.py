"""Configuration-driven taint propagation for locating timeout variables.

Inputs are real configuration files (Hadoop-style XML property files or flat
``key=value`` properties) plus a pre-extracted dataflow facts file.  The facts
grammar, one record per line, ``#`` starts a comment::

    # tdrill-facts v1                      (required first line)
    CONST <id> <value>                     constant, value in ms or with s/min/h suffix
    KEY <config-key> [<default-const-id>]  key read by code, optionally with its default
    VAR <id>                               local, field or parameter
    EDGE <kind> <src> <dst>                kind: assign | read-config | pass-arg
    USE <function> <var-id>                function reads the variable

Keys found in the configuration files are declared implicitly.  A configured
value always overrides the constant default paired with the key.
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DuplicateKey, InputError, UnitError, UnresolvedId

FACTS_HEADER = "# tdrill-facts v1"
EDGE_KINDS = ("assign", "read-config", "pass-arg")

_UNITS = {"": 1, "ms": 1, "s": 1000, "sec": 1000, "min": 60_000, "m": 60_000, "h": 3_600_000}
_VALUE_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([a-zA-Z]*)\s*$")


def parse_duration_ms(text: str) -> int:
    """``"60000"`` -> 60000, ``"60s"`` -> 60000, ``"5min"`` -> 300000."""
    m = _VALUE_RE.match(text)
    if not m:
        raise UnitError(f"not a duration: {text!r}")
    number, unit = m.groups()
    unit = unit.lower()
    if unit not in _UNITS:
        raise UnitError(f"unknown unit {unit!r} in {text!r}")
    value = float(number) * _UNITS[unit]
    if value != int(value):
        raise UnitError(f"{text!r} is not a whole number of milliseconds")
    return int(value)


@dataclass(frozen=True)
class ConfigEntry:
    key: str
    raw: str
    source: str  # "file:line" or "file"

    @property
    def value_ms(self) -> int | None:
        try:
            return parse_duration_ms(self.raw)
        except UnitError:
            return None


def parse_xml_config(text: str, source: str = "<xml>") -> list[ConfigEntry]:
    root = ET.fromstring(text)
    entries = []
    for prop in root.iter("property"):
        name = (prop.findtext("name") or "").strip()
        value = (prop.findtext("value") or "").strip()
        if not name:
            raise InputError(f"{source}: <property> without <name>")
        entries.append(ConfigEntry(name, value, source))
    return entries


def parse_properties_config(text: str, source: str = "<properties>") -> list[ConfigEntry]:
    entries = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith(("#", "!")):
            continue
        sep = re.search(r"[=:]", line)
        if not sep:
            raise InputError(f"{source}:{lineno}: expected key=value")
        key, value = line[: sep.start()].strip(), line[sep.end():].strip()
        if not key:
            raise InputError(f"{source}:{lineno}: empty key")
        entries.append(ConfigEntry(key, value, f"{source}:{lineno}"))
    return entries


def load_config_file(path: str | Path) -> list[ConfigEntry]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".xml" or text.lstrip().startswith("<"):
        return parse_xml_config(text, path.name)
    return parse_properties_config(text, path.name)


@dataclass(frozen=True)
class Edge:
    kind: str
    src: str
    dst: str


@dataclass(frozen=True)
class TaintFactBase:
    config: Mapping[str, ConfigEntry]
    constants: Mapping[str, str]  # id -> raw value
    keys: Mapping[str, str | None]  # key -> default constant id
    variables: frozenset[str]
    edges: tuple[Edge, ...]
    uses: Mapping[str, tuple[str, ...]]  # function -> variable ids

    @property
    def declared(self) -> set[str]:
        return set(self.config) | set(self.constants) | set(self.keys) | set(self.variables)

    def is_key(self, ident: str) -> bool:
        return ident in self.config or ident in self.keys

    def default_of(self, key: str) -> str | None:
        return self.keys.get(key)

    def effective_value_ms(self, ident: str) -> int | None:
        """Configured value wins over the paired default; constants are literal."""
        if ident in self.config:
            return self.config[ident].value_ms
        if ident in self.keys:
            default = self.keys[ident]
            return self.effective_value_ms(default) if default else None
        if ident in self.constants:
            try:
                return parse_duration_ms(self.constants[ident])
            except UnitError:
                return None
        return None


def parse_facts(text: str, source: str = "<facts>"):
    lines = text.splitlines()
    if not lines or lines[0].strip() != FACTS_HEADER:
        raise InputError(f"{source}: first line must be {FACTS_HEADER!r}")
    constants: dict[str, str] = {}
    keys: dict[str, str | None] = {}
    variables: set[str] = set()
    edges: list[Edge] = []
    uses: dict[str, list[str]] = {}
    for lineno, raw in enumerate(lines[1:], 2):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kind, *args = line.split()
        where = f"{source}:{lineno}"
        if kind == "CONST" and len(args) == 2:
            if args[0] in constants:
                raise InputError(f"{where}: constant {args[0]} declared twice")
            constants[args[0]] = args[1].strip('"')
        elif kind == "KEY" and len(args) in (1, 2):
            keys[args[0]] = args[1] if len(args) == 2 else None
        elif kind == "VAR" and len(args) == 1:
            variables.add(args[0])
        elif kind == "EDGE" and len(args) == 3:
            if args[0] not in EDGE_KINDS:
                raise InputError(f"{where}: unknown edge kind {args[0]!r}")
            edges.append(Edge(*args))
        elif kind == "USE" and len(args) == 2:
            uses.setdefault(args[0], []).append(args[1])
        else:
            raise InputError(f"{where}: cannot parse {raw.strip()!r}")
    return constants, keys, variables, edges, uses


def build_fact_base(
    config_entries: Iterable[ConfigEntry],
    facts_text: str | None = None,
    facts_source: str = "<facts>",
) -> TaintFactBase:
    config: dict[str, ConfigEntry] = {}
    for entry in config_entries:
        if entry.key in config:
            raise DuplicateKey(entry.key)
        looks_numeric = entry.raw[:1].isdigit()
        if "timeout" in entry.key.lower() and looks_numeric and entry.value_ms is None:
            raise UnitError(f"{entry.source}: bad duration {entry.raw!r} for {entry.key}")
        config[entry.key] = entry

    if facts_text is None or not facts_text.strip():
        constants, keys, variables, edges, uses = {}, {}, set(), [], {}
    else:
        constants, keys, variables, edges, uses = parse_facts(facts_text, facts_source)

    facts = TaintFactBase(
        config=config,
        constants=constants,
        keys=keys,
        variables=frozenset(variables),
        edges=tuple(edges),
        uses={fn: tuple(vs) for fn, vs in uses.items()},
    )
    declared = facts.declared
    for key, default in keys.items():
        if default is not None and default not in constants:
            raise UnresolvedId(default, f"KEY {key}")
    for e in facts.edges:
        for ident in (e.src, e.dst):
            if ident not in declared:
                raise UnresolvedId(ident, f"EDGE {e.kind} {e.src} {e.dst}")
    for fn, vs in facts.uses.items():
        for v in vs:
            if v not in declared:
                raise UnresolvedId(v, f"USE {fn}")
    return facts


def load_facts(config_files: Sequence[str | Path], facts_file: str | Path | None) -> TaintFactBase:
    entries: list[ConfigEntry] = []
    for path in config_files:
        entries.extend(load_config_file(path))
    text = None
    source = "<none>"
    if facts_file is not None:
        text = Path(facts_file).read_text(encoding="utf-8")
        source = Path(facts_file).name
    if text is not None and not text.strip():
        text = None
    return build_fact_base(entries, text, source)


def seed_timeout_variables(facts: TaintFactBase, keyword: str = "timeout") -> set[str]:
    """Config keys and constants whose name contains ``keyword`` (any case)."""
    kw = keyword.lower()
    names = set(facts.config) | set(facts.keys) | set(facts.constants)
    return {n for n in names if kw in n.lower()}


@dataclass(frozen=True)
class Taint:
    ident: str
    seed: str
    path: tuple[Edge, ...]  # shortest edge walk from ``seed`` to ``ident``


def propagate(facts: TaintFactBase, seeds: Iterable[str]) -> dict[str, tuple[Taint, ...]]:
    """Forward reachability from every seed.

    Returns, for each tainted id, one shortest witness path per seed that
    reaches it (seeds reach themselves with an empty path).  Each seed is a
    separate breadth-first search, so the result does not depend on the order
    edges are listed in.
    """
    seeds = sorted(set(seeds))
    declared = facts.declared
    for s in seeds:
        if s not in declared:
            raise UnresolvedId(s, "seed set")
    succ: dict[str, list[Edge]] = {}
    for e in sorted(set(facts.edges), key=lambda e: (e.src, e.dst, e.kind)):
        succ.setdefault(e.src, []).append(e)

    found: dict[str, list[Taint]] = {}
    for seed in seeds:
        parent: dict[str, Edge | None] = {seed: None}
        queue = deque([seed])
        while queue:
            node = queue.popleft()
            for e in succ.get(node, ()):
                if e.dst not in parent:
                    parent[e.dst] = e
                    queue.append(e.dst)
        for node in parent:
            path: list[Edge] = []
            cur = node
            while parent[cur] is not None:
                path.append(parent[cur])
                cur = parent[cur].src
            found.setdefault(node, []).append(Taint(node, seed, tuple(reversed(path))))
    return {k: tuple(v) for k, v in sorted(found.items())}


class Origin(str, Enum):
    CONFIG_KEY = "ConfigKey"
    CONSTANT = "Constant"


@dataclass(frozen=True)
class TimeoutVariable:
    id: str
    origin: Origin
    effective_value_ms: int | None
    taint_path: tuple[Edge, ...] = field(compare=False, default=())
    default_constant: str | None = None


@dataclass(frozen=True)
class TaintedUse:
    function: str
    variable: TimeoutVariable


def _function_matches(name: str, query: str) -> bool:
    return name == query or name.endswith("." + query) or query.endswith("." + name)


def tainted_uses(
    facts: TaintFactBase,
    tainted: Mapping[str, Sequence[Taint]],
    functions: Iterable[str],
) -> list[TaintedUse]:
    """Timeout variables that reach something each function reads.

    A constant that serves as the default of a key reaching the same use is
    folded into that key, since the key's effective value already accounts
    for it.  Function names match exactly or by dotted suffix.
    """
    out: list[TaintedUse] = []
    for fn in functions:
        seen: dict[str, TimeoutVariable] = {}
        for fact_fn in sorted(facts.uses):
            if not _function_matches(fact_fn, fn):
                continue
            for var in facts.uses[fact_fn]:
                for t in tainted.get(var, ()):
                    if t.seed in seen and len(seen[t.seed].taint_path) <= len(t.path):
                        continue
                    origin = Origin.CONFIG_KEY if facts.is_key(t.seed) else Origin.CONSTANT
                    seen[t.seed] = TimeoutVariable(
                        id=t.seed,
                        origin=origin,
                        effective_value_ms=facts.effective_value_ms(t.seed),
                        taint_path=t.path,
                        default_constant=facts.default_of(t.seed) if origin is Origin.CONFIG_KEY else None,
                    )
        folded = {v.default_constant for v in seen.values() if v.default_constant}
        for ident in sorted(seen):
            if ident in folded:
                continue
            out.append(TaintedUse(fn, seen[ident]))
    return out
