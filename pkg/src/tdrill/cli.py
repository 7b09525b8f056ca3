"""Command-line entry points.

``tdrill diagnose``   run the drill-down on traces, dumps and configuration
``tdrill predict``    recommend a timeout value from historical executions
``tdrill validate``   replay a faultlab scenario with a patch or value applied
``tdrill simulate``   generate faultlab scenario bundles

Human-readable text goes to stdout; ``--out`` writes the machine report.

Exit codes::

    diagnose   0 definite category, 1 input error, 2 inconclusive
    predict    0 prediction, 1 input error or underdetermined fit
    validate   0 Fixed, 1 input error, 2 Inconclusive, 3 PartialFix, 4 NotFixed
    simulate   0 bundles written, 1 unknown category or write failure
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path
from typing import Sequence

from .errors import (
    AmbiguousAnomaly,
    InputError,
    Inconclusive,
    InsufficientBaseline,
    NoCommonFunction,
    NoSurvivor,
    TdrillError,
)

POLICY_ENV = "TDRILL_POLICY"
EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INCONCLUSIVE = 2
VERDICT_EXIT = {"Fixed": 0, "Inconclusive": 2, "PartialFix": 3, "NotFixed": 4}
# the pipeline ran to completion but could not name a root cause
INCONCLUSIVE_ERRORS = (Inconclusive, NoSurvivor, NoCommonFunction, InsufficientBaseline, AmbiguousAnomaly)

log = logging.getLogger("tdrill")


def _write_out(path: str | None, doc) -> None:
    from .report import render_json

    if path:
        try:
            Path(path).write_text(render_json(doc), encoding="utf-8")
        except OSError as exc:
            raise InputError(f"cannot write {path}: {exc.strerror}") from exc


def _error_doc(exc: BaseException, status, label=None):
    from .report import ErrorInfo, ReportDocument

    return ReportDocument(status, error=ErrorInfo.of(exc), label=label)


def _print_error(exc: BaseException) -> None:
    where = f" [{exc.stage}]" if getattr(exc, "stage", None) else ""
    print(f"tdrill: error{where}: {type(exc).__name__}: {exc}", file=sys.stderr)


def _load_policy(path: str | None):
    """Policy file from ``--policy`` or ``$TDRILL_POLICY``; defaults otherwise.

    The file is JSON with anomaly thresholds (``k_stddev``, ``duration_factor``,
    ...) and optionally ``timeout_functions``, extra registry patterns.
    """
    from .drilldown import TimeoutFunctionRegistry
    from .trace import AnomalyPolicy

    path = path or os.environ.get(POLICY_ENV)
    if not path:
        return AnomalyPolicy(), TimeoutFunctionRegistry()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"cannot read policy {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"policy {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise InputError(f"policy {path} must be a JSON object")
    unknown = set(data) - set(AnomalyPolicy.__dataclass_fields__) - {"timeout_functions"}
    if unknown:
        raise InputError(f"policy {path}: unknown fields {sorted(unknown)}")
    try:
        policy = AnomalyPolicy.from_dict(data)
    except TypeError as exc:
        raise InputError(f"policy {path}: {exc}") from exc
    registry = TimeoutFunctionRegistry().extend(data.get("timeout_functions", ()))
    return policy, registry


def _sources(pairs: Sequence[str]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        name, sep, path = pair.partition("=")
        if not sep:
            path, name = pair, Path(pair).name
        out[name] = path
    return out


# --------------------------------------------------------------------------
# diagnose


def cmd_diagnose(args) -> int:
    from .drilldown import load_bundle, load_inputs, run_drilldown
    from .report import ReportDocument, Status, render_text

    label = args.label or (Path(args.bundle).name if args.bundle else args.trace)
    try:
        policy, registry = _load_policy(args.policy)
        explicit = dict(
            trace=args.trace, alert=args.alert, baseline=args.baseline, dumps=args.dumps,
            config=args.config or None, facts=args.facts, catalog=args.catalog, dataset=args.dataset,
            interrupted=args.interrupted, termination_time_ms=args.termination_ms,
            sources=_sources(args.source) if args.source else None,
        )
        common = dict(policy=policy, registry=registry, padding_mode=args.padding_mode)
        if args.bundle:
            inputs = load_bundle(args.bundle, **explicit, **common)
        else:
            missing = [f"--{k}" for k in ("trace", "alert") if not explicit[k]]
            if missing:
                raise InputError(f"{' and '.join(missing)} required (or pass --bundle)")
            explicit = {k: v for k, v in explicit.items() if v is not None}
            inputs = load_inputs(**explicit, **common)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            diagnosis = run_drilldown(inputs)
        doc = ReportDocument(Status.DIAGNOSED, diagnosis, label=label,
                             warnings=tuple(f"{w.category.__name__}: {w.message}" for w in caught))
    except INCONCLUSIVE_ERRORS as exc:
        doc = _error_doc(exc, Status.INCONCLUSIVE, label)
        print(render_text(doc), end="")
        _write_out(args.out, doc)
        return EXIT_INCONCLUSIVE
    except TdrillError as exc:
        _print_error(exc)
        try:
            _write_out(args.out, _error_doc(exc, Status.ERROR, label))
        except InputError:
            pass
        return EXIT_INPUT
    print(render_text(doc), end="")
    try:
        _write_out(args.out, doc)
    except InputError as exc:
        _print_error(exc)
        return EXIT_INPUT
    return EXIT_OK


# --------------------------------------------------------------------------
# predict


def parse_features(text: str, names: Sequence[str]) -> dict[str, float]:
    """``a=1,b=2``, a JSON object, or bare comma-separated values in dataset order."""
    text = text.strip()
    try:
        if text.startswith("{"):
            return {str(k): float(v) for k, v in json.loads(text).items()}
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if all("=" in p for p in parts):
            return {k.strip(): float(v) for k, v in (p.split("=", 1) for p in parts)}
        values = [float(p) for p in parts]
    except (ValueError, AttributeError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot parse features {text!r}: {exc}") from exc
    if len(values) != len(names):
        raise InputError(f"got {len(values)} feature values, dataset has {len(names)} ({', '.join(names)})")
    return dict(zip(names, values))


def cmd_predict(args) -> int:
    from .predictor import load_dataset, recommend
    from .report import ReportDocument, Status, render_text

    try:
        try:
            dataset = load_dataset(args.dataset)
        except OSError as exc:
            raise InputError(f"cannot read {args.dataset}: {exc.strerror}") from exc
        query = parse_features(args.features, dataset.feature_names)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            prediction = recommend(dataset, query, args.padding_mode, args.scorer)
        notes = tuple(f"{w.category.__name__}: {w.message}" for w in caught)
        doc = ReportDocument(Status.PREDICTED, prediction=prediction, label=args.dataset, warnings=notes)
    except TdrillError as exc:
        _print_error(exc)
        return EXIT_INPUT
    print(render_text(doc), end="")
    try:
        _write_out(args.out, doc)
    except InputError as exc:
        _print_error(exc)
        return EXIT_INPUT
    return EXIT_OK


# --------------------------------------------------------------------------
# validate


def _scenario_path(path: str) -> Path:
    p = Path(path)
    return p / "scenario.json" if p.is_dir() else p


def _load_patch(path: str):
    """A patch plan, or a report whose diagnosis carries one.

    Returns ``(plan, value_ms, key)``; value and key come from a report only.
    """
    from .patch import PatchPlan
    from .report import parse_json

    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: {exc}") from exc
    if isinstance(data, dict) and "schema_version" in data:
        doc = parse_json(text)
        d = doc.diagnosis
        if d is None:
            raise InputError(f"{path}: report has no diagnosis ({doc.status.value})")
        key = d.misused_variable.id if d.misused_variable else None
        return d.patch_plan, d.recommended_value_ms, key
    try:
        return PatchPlan.from_dict(data), None, None
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: not a patch plan or report: {exc}") from exc


def _parse_value(text: str) -> float:
    from .taint import parse_duration_ms

    try:
        return float(text)
    except ValueError:
        pass
    try:
        return float(parse_duration_ms(text))
    except (TdrillError, ValueError) as exc:
        raise InputError(f"cannot parse --value {text!r}") from exc


def cmd_validate(args) -> int:
    from .report import ReportDocument, Status, render_text
    from .validator import load_scenario, validate

    try:
        scenario = load_scenario(_scenario_path(args.scenario))
        plan, value, key = (None, None, None)
        if args.patch:
            plan, value, key = _load_patch(args.patch)
        if args.value is not None:
            value = _parse_value(args.value)
        if args.key:
            key = args.key
        verdict = validate(scenario, plan, value, key)
    except TdrillError as exc:
        _print_error(exc)
        return EXIT_INPUT
    doc = ReportDocument(Status.VALIDATED, verdict=verdict, label=scenario.name)
    print(render_text(doc), end="")
    try:
        _write_out(args.out, doc)
    except InputError as exc:
        _print_error(exc)
        return EXIT_INPUT
    return VERDICT_EXIT[verdict.outcome.value]


# --------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    from .faultlab.generator import generate_many

    try:
        paths = generate_many(args.category, args.seed, args.out)
    except ValueError as exc:
        print(f"tdrill: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TdrillError as exc:
        _print_error(exc)
        return EXIT_INPUT
    for p in paths:
        print(p)
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tdrill", description="Timeout bug drill-down and repair planning.")
    ap.add_argument("-v", "--verbose", action="count", default=0, help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    d = sub.add_parser("diagnose", help="classify a timeout bug, localize it and plan a fix")
    d.add_argument("--bundle", help="bundle directory with bundle.json; explicit flags override its entries")
    d.add_argument("--trace", help="span trace of the anomalous run")
    d.add_argument("--baseline", help="span trace of a normal run")
    d.add_argument("--alert", help="anomaly alert JSON")
    d.add_argument("--dumps", help="sequential thread dumps (needed for missing-timeout bugs)")
    d.add_argument("--config", action="append", help="configuration file (repeatable)")
    d.add_argument("--facts", help="dataflow facts file")
    d.add_argument("--catalog", help="API catalog JSON for blocking-call fixes")
    d.add_argument("--dataset", help="historical executions CSV for timeout prediction")
    d.add_argument("--interrupted", help="span trace captured until the hung process was terminated")
    d.add_argument("--termination-ms", type=int, help="epoch ms the hung process was terminated")
    d.add_argument("--source", action="append", help="pseudo-source as NAME=PATH (repeatable)")
    d.add_argument("--policy", help=f"policy JSON (default: ${POLICY_ENV})")
    d.add_argument("--padding-mode", default="safe", choices=("safe", "paper-literal"))
    d.add_argument("--label", help="name shown in the report table")
    d.add_argument("--out", help="write the machine-readable report here")
    d.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("predict", help="recommend a timeout value from historical executions")
    p.add_argument("--dataset", required=True, help="CSV: feature columns then the observed duration in ms")
    p.add_argument("--features", required=True, help="query features: a=1,b=2 or 1,2 or a JSON object")
    p.add_argument("--padding-mode", default="safe", choices=("safe", "paper-literal"))
    p.add_argument("--scorer", default="auto", choices=("auto", "loocv", "training"))
    p.add_argument("--out", help="write the machine-readable report here")
    p.set_defaults(func=cmd_predict)

    v = sub.add_parser("validate", help="replay a scenario with a patch plan or timeout value")
    v.add_argument("--scenario", required=True, help="scenario JSON or bundle directory")
    v.add_argument("--patch", help="patch plan JSON, or a diagnose report (supplies plan, value and key)")
    v.add_argument("--value", help="timeout value to inject, in ms or with a unit (e.g. 1.5s)")
    v.add_argument("--key", help="configuration key receiving --value")
    v.add_argument("--out", help="write the machine-readable report here")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("simulate", help="generate faultlab scenario bundles")
    s.add_argument("--category", required=True,
                   help="too-large, too-small, missing, missing-loop, missing-blocking, hard-coded, all, or a scenario name")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory; one bundle per subdirectory")
    s.set_defaults(func=cmd_simulate)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
