from __future__ import annotations

import json
from collections import Counter

import pytest

from tdrill.drilldown import BugCategory
from tdrill.faultlab.generator import (
    IoFailure,
    generate,
    generate_many,
    hard_coded_spec,
    render_bundle,
    specs_for,
    table2_specs,
)
from tdrill.validator import Outcome, load_scenario, validate


def test_category_counts_mirror_the_benchmark():
    counts = Counter(s.expected_category for s in table2_specs())
    assert counts == {BugCategory.MISUSED_TOO_LARGE: 7, BugCategory.MISUSED_TOO_SMALL: 4,
                      BugCategory.MISSING_TIMEOUT: 5}
    assert len({s.name for s in table2_specs()}) == 16


def test_every_category_reachable():
    cats = {s.expected_category for s in table2_specs() + [hard_coded_spec()]}
    assert cats == set(BugCategory)


def test_regeneration_is_byte_identical(tmp_path):
    for spec in specs_for("too-small", 7):
        assert render_bundle(spec) == render_bundle(spec)
    a = generate_many("too-small", 7, tmp_path / "a")
    b = generate_many("too-small", 7, tmp_path / "b")
    for pa, pb in zip(a, b):
        files = sorted(p.relative_to(pa) for p in pa.rglob("*") if p.is_file())
        assert files == sorted(p.relative_to(pb) for p in pb.rglob("*") if p.is_file())
        for f in files:
            assert (pa / f).read_bytes() == (pb / f).read_bytes()


def test_seed_changes_samples():
    a, b = specs_for("hdfs-4301", 1)[0], specs_for("hdfs-4301", 2)[0]
    assert render_bundle(a)["dataset.csv"] != render_bundle(b)["dataset.csv"]


def test_bundle_references_resolve(bundles):
    for name, path in bundles.items():
        doc = json.loads((path / "bundle.json").read_text())
        refs = [v for k, v in doc.items() if isinstance(v, str) and k != "schema"]
        refs += list(doc.get("config", [])) + list(doc.get("sources", {}).values())
        for rel in refs:
            assert (path / rel).is_file(), (name, rel)
        m = json.loads((path / "manifest.json").read_text())
        assert m["schema"] == "tdrill-manifest/1"
        misused = m["expected_category"].startswith("Misused")
        assert (m["variable"] is not None) == misused
        assert (m["strategy"] is not None) == (m["expected_category"] == "MissingTimeout")


def test_specs_for_selectors():
    assert len(specs_for("all")) == 16
    assert len(specs_for("missing")) == 5
    assert [s.name for s in specs_for("hard-coded")] == ["hbase-hardcoded"]
    with pytest.raises(ValueError):
        specs_for("nope")


def test_true_need_is_positive():
    for s in table2_specs():
        assert s.true_need_ms > 0


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(IoFailure):
        generate(table2_specs()[0], blocker / "sub")


@pytest.mark.slow
def test_too_small_fixability_is_monotone(bundles):
    path = bundles["hdfs-4301"]
    need = json.loads((path / "manifest.json").read_text())["true_need_ms"]
    s = load_scenario(path / "scenario.json")
    values = [need * f for f in (0.25, 0.5, 0.9, 1.1, 1.5, 3.0)]
    fixed = [validate(s, None, v).outcome is Outcome.FIXED for v in values]
    # once fixed, stays fixed
    assert fixed == sorted(fixed)
    assert fixed[0] is False and fixed[-1] is True
