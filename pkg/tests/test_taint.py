from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FIXTURES
from graphs import random_fact_base, reachable, walk_is_valid, with_edges
from tdrill.errors import DuplicateKey, InputError, UnitError, UnresolvedId
from tdrill.taint import (
    EDGE_KINDS,
    Edge,
    ConfigEntry,
    Origin,
    build_fact_base,
    load_facts,
    parse_duration_ms,
    parse_properties_config,
    parse_xml_config,
    propagate,
    seed_timeout_variables,
    tainted_uses,
)

HEADER = "# tdrill-facts v1\n"
DOGETURL = "org.apache.hadoop.hdfs.server.namenode.TransferFsImage.doGetUrl"


@pytest.mark.parametrize("raw,ms", [
    ("60000", 60000), ("60s", 60000), ("5min", 300000), ("2h", 7_200_000), ("1.5s", 1500), (" 20 ms ", 20),
])
def test_duration_units(raw, ms):
    assert parse_duration_ms(raw) == ms


@pytest.mark.parametrize("raw", ["", "fast", "10 fortnights", "0.5ms"])
def test_duration_errors(raw):
    with pytest.raises(UnitError):
        parse_duration_ms(raw)


def test_hdfs4301_fact_base():
    facts = load_facts([FIXTURES / "hdfs4301-site.xml"], FIXTURES / "hdfs4301.facts")
    seeds = seed_timeout_variables(facts)
    assert seeds == {"dfs.image.transfer.timeout", "DFS_IMAGE_TRANSFER_TIMEOUT_DEFAULT"}
    uses = tainted_uses(facts, propagate(facts, seeds), [DOGETURL])
    (use,) = uses
    v = use.variable
    assert (v.id, v.origin, v.effective_value_ms) == ("dfs.image.transfer.timeout", Origin.CONFIG_KEY, 60000)
    assert v.default_constant == "DFS_IMAGE_TRANSFER_TIMEOUT_DEFAULT"


def test_hdfs4301_keys_only_seeds_timeout_key():
    facts = build_fact_base(parse_xml_config((FIXTURES / "hdfs4301-site.xml").read_text()))
    assert seed_timeout_variables(facts) == {"dfs.image.transfer.timeout"}
    assert "dfs.blocksize" in facts.config


def test_configured_value_overrides_default():
    facts = build_fact_base(
        [ConfigEntry("a.timeout", "30s", "x")],
        HEADER + "CONST A_DEFAULT 60000\nKEY a.timeout A_DEFAULT\n",
    )
    assert facts.effective_value_ms("a.timeout") == 30000
    unconfigured = build_fact_base([], HEADER + "CONST A_DEFAULT 60000\nKEY a.timeout A_DEFAULT\n")
    assert unconfigured.effective_value_ms("a.timeout") == 60000


def test_config_key_without_constant():
    facts = build_fact_base(
        [ConfigEntry("ipc.client.connect.timeout", "20000", "x")],
        HEADER + "VAR f.t\nEDGE read-config ipc.client.connect.timeout f.t\nUSE C.f f.t\n",
    )
    (use,) = tainted_uses(facts, propagate(facts, seed_timeout_variables(facts)), ["C.f"])
    assert use.variable.origin is Origin.CONFIG_KEY
    assert use.variable.default_constant is None
    assert use.variable.effective_value_ms == 20000


def test_empty_inputs():
    facts = load_facts([], None)
    assert facts.declared == set()
    assert seed_timeout_variables(facts) == set()


def test_case_insensitive_seeding():
    facts = build_fact_base([ConfigEntry("socketTimeOutMillis", "5", "x"), ConfigEntry("dfs.blocksize", "1", "x")])
    assert seed_timeout_variables(facts) == {"socketTimeOutMillis"}


def test_chain_all_tainted():
    facts = build_fact_base([ConfigEntry("k.timeout", "10", "x")], HEADER + "\n".join([
        "CONST K_DEFAULT 10", "VAR local", "VAR param",
        "EDGE read-config k.timeout K_DEFAULT", "EDGE assign K_DEFAULT local", "EDGE pass-arg local param",
    ]))
    tainted = propagate(facts, {"k.timeout"})
    assert set(tainted) == {"k.timeout", "K_DEFAULT", "local", "param"} == reachable(facts, {"k.timeout"})
    (t,) = tainted["param"]
    assert [e.dst for e in t.path] == ["K_DEFAULT", "local", "param"]


def test_no_edges_taints_only_seeds():
    facts = build_fact_base([ConfigEntry("a.timeout", "1", "x")], HEADER + "VAR b\n")
    assert set(propagate(facts, {"a.timeout"})) == {"a.timeout"}


def test_cycle_terminates():
    facts = build_fact_base([], HEADER + "VAR a\nVAR b\nEDGE assign a b\nEDGE assign b a\n")
    assert set(propagate(facts, {"a"})) == {"a", "b"}


def test_two_functions_share_variable():
    facts = build_fact_base([ConfigEntry("x.timeout", "7", "c")], HEADER + "\n".join([
        "VAR v", "EDGE read-config x.timeout v", "USE A.f v", "USE B.g v",
    ]))
    tainted = propagate(facts, seed_timeout_variables(facts))
    uses = tainted_uses(facts, tainted, ["A.f", "B.g", "C.h"])
    assert [(u.function, u.variable.id) for u in uses] == [("A.f", "x.timeout"), ("B.g", "x.timeout")]


def test_load_errors():
    with pytest.raises(UnresolvedId):
        build_fact_base([], HEADER + "EDGE assign a b\n")
    with pytest.raises(DuplicateKey):
        build_fact_base([ConfigEntry("k", "1", "a"), ConfigEntry("k", "2", "b")])
    with pytest.raises(UnitError):
        build_fact_base([ConfigEntry("k.timeout", "10 fortnights", "a")])
    with pytest.raises(InputError):
        build_fact_base([], "CONST X 1\n")  # missing header
    with pytest.raises(InputError):
        build_fact_base([], HEADER + "EDGE teleport a b\n")


def test_properties_format():
    entries = parse_properties_config("# c\nipc.client.connect.timeout = 20s\nother: 1\n", "p")
    assert [(e.key, e.value_ms) for e in entries] == [("ipc.client.connect.timeout", 20000), ("other", 1)]


@settings(max_examples=150)
@given(st.integers(0, 2**32), st.booleans())
def test_propagate_matches_oracle_and_order(seed, cyclic):
    rng = random.Random(seed)
    facts = random_fact_base(rng, cyclic)
    seeds = set(rng.sample(sorted(facts.variables), rng.randint(1, min(3, len(facts.variables)))))
    got = propagate(facts, seeds)
    assert set(got) == reachable(facts, seeds)
    edges = list(facts.edges)
    rng.shuffle(edges)
    assert propagate(with_edges(facts, edges), seeds) == got
    for ident, taints in got.items():
        for t in taints:
            assert walk_is_valid(t.path, t.seed, ident, facts.edges)


@settings(max_examples=100)
@given(st.integers(0, 2**32))
def test_propagate_monotone(seed):
    rng = random.Random(seed)
    facts = random_fact_base(rng, cyclic=True)
    ids = sorted(facts.variables)
    seeds = {rng.choice(ids)}
    before = set(propagate(facts, seeds))
    a, b = rng.sample(ids, 2)
    bigger = with_edges(facts, list(facts.edges) + [Edge(rng.choice(EDGE_KINDS), a, b)])
    assert before <= set(propagate(bigger, seeds))
    assert before <= set(propagate(facts, seeds | {rng.choice(ids)}))
