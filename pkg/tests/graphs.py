"""Random fact graphs and an independent reachability oracle."""

from __future__ import annotations

import random
from collections import deque

from tdrill.taint import EDGE_KINDS, Edge, TaintFactBase


def random_fact_base(rng: random.Random, cyclic: bool) -> TaintFactBase:
    n = rng.randint(2, 14)
    ids = [f"v{i}" for i in range(n)]
    edges = set()
    for _ in range(rng.randint(0, 3 * n)):
        a, b = rng.sample(range(n), 2)
        if not cyclic and a > b:
            a, b = b, a  # forward only keeps the graph acyclic
        edges.add(Edge(rng.choice(EDGE_KINDS), ids[a], ids[b]))
    return TaintFactBase({}, {}, {}, frozenset(ids), tuple(sorted(edges, key=lambda e: (e.src, e.dst))), {})


def reachable(facts: TaintFactBase, seeds) -> set[str]:
    """Plain breadth-first search over an adjacency list."""
    adj: dict[str, list[str]] = {}
    for e in facts.edges:
        adj.setdefault(e.src, []).append(e.dst)
    seen = set(seeds)
    q = deque(seeds)
    while q:
        for nxt in adj.get(q.popleft(), ()):
            if nxt not in seen:
                seen.add(nxt)
                q.append(nxt)
    return seen


def with_edges(facts: TaintFactBase, edges) -> TaintFactBase:
    return TaintFactBase(facts.config, facts.constants, facts.keys, facts.variables, tuple(edges), facts.uses)


def walk_is_valid(path, seed: str, target: str, edges) -> bool:
    if not path:
        return seed == target
    edge_set = set(edges)
    if path[0].src != seed or path[-1].dst != target:
        return False
    return all(e in edge_set for e in path) and all(a.dst == b.src for a, b in zip(path, path[1:]))
