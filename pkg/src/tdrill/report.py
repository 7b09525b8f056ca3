"""Report documents.

A :class:`ReportDocument` is the single source of truth for one run of the
toolkit: diagnosis, prediction, validation verdict, or the error that stopped
the pipeline.  The JSON rendering is the machine document; :func:`render_text`
and :func:`render_table` are projections of the same record for humans.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

from .drilldown import BugCategory, Diagnosis
from .errors import InputError, TdrillError
from .predictor import Prediction, format_seconds
from .validator import Verdict

REPORT_SCHEMA = "tdrill-report/1"
INFINITE_MS = 2147483647
TABLE_COLUMNS = ("Bug", "Bug Type", "Impact", "Buggy Value", "Predicted Value", "Fixed?", "Diagnosis Time")


class Status(str, Enum):
    DIAGNOSED = "Diagnosed"
    PREDICTED = "Predicted"
    VALIDATED = "Validated"
    INCONCLUSIVE = "Inconclusive"
    ERROR = "Error"


@dataclass(frozen=True)
class ErrorInfo:
    stage: str | None
    type: str
    message: str

    @classmethod
    def of(cls, exc: BaseException) -> "ErrorInfo":
        return cls(getattr(exc, "stage", None), type(exc).__name__, str(exc))

    def to_dict(self) -> dict:
        return {"stage": self.stage, "type": self.type, "message": self.message}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ErrorInfo":
        return cls(d.get("stage"), d["type"], d["message"])


@dataclass(frozen=True)
class ReportDocument:
    status: Status
    diagnosis: Diagnosis | None = None
    prediction: Prediction | None = None
    verdict: Verdict | None = None
    error: ErrorInfo | None = None
    label: str | None = None  # bug name or input path shown in the table
    warnings: tuple[str, ...] = ()
    schema_version: str = REPORT_SCHEMA

    def __post_init__(self):
        if self.status in (Status.ERROR, Status.INCONCLUSIVE) and self.error is None:
            raise ValueError(f"{self.status.value} report needs error details")
        if self.status is Status.DIAGNOSED and self.diagnosis is None:
            raise ValueError("Diagnosed report needs a diagnosis")

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "status": self.status.value,
            "label": self.label,
            "diagnosis": self.diagnosis.to_dict() if self.diagnosis else None,
            "prediction": self.prediction.to_dict() if self.prediction else None,
            "verdict": self.verdict.to_dict() if self.verdict else None,
            "error": self.error.to_dict() if self.error else None,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ReportDocument":
        if d.get("schema_version") != REPORT_SCHEMA:
            raise InputError(f"unsupported report schema {d.get('schema_version')!r}")
        return cls(
            status=Status(d["status"]),
            diagnosis=Diagnosis.from_dict(d["diagnosis"]) if d.get("diagnosis") else None,
            prediction=Prediction.from_dict(d["prediction"]) if d.get("prediction") else None,
            verdict=Verdict.from_dict(d["verdict"]) if d.get("verdict") else None,
            error=ErrorInfo.from_dict(d["error"]) if d.get("error") else None,
            label=d.get("label"),
            warnings=tuple(d.get("warnings", ())),
        )

    @property
    def effective_prediction(self) -> Prediction | None:
        if self.prediction is not None:
            return self.prediction
        return self.diagnosis.prediction if self.diagnosis else None


def render_json(doc: ReportDocument) -> str:
    return json.dumps(doc.to_dict(), indent=2, sort_keys=True) + "\n"


def parse_json(text: str) -> ReportDocument:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"report is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise InputError("report must be a JSON object")
    try:
        return ReportDocument.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, TdrillError):
            raise
        raise InputError(f"malformed report: {exc}") from exc


# --------------------------------------------------------------------------
# human projections


def format_duration(ms: int | float | None) -> str:
    """Compact human duration: ``2h``, ``5min``, ``20s``, ``600ms``; ``Infinity``
    for the integer-max sentinel and ``--`` when there is no value."""
    if ms is None:
        return "--"
    if ms >= INFINITE_MS:
        return "Infinity"
    for unit, size in (("h", 3_600_000), ("min", 60_000), ("s", 1000)):
        if ms >= size and ms % size == 0:
            return f"{int(ms // size)}{unit}"
    if ms >= 1000:
        return f"{ms / 1000:.2f}s"
    return f"{int(ms) if float(ms).is_integer() else round(ms, 1)}ms"


def _bug_type(d: Diagnosis) -> str:
    return {
        BugCategory.MISUSED_TOO_LARGE: "Misused (too large)",
        BugCategory.MISUSED_TOO_SMALL: "Misused (too small)",
        BugCategory.MISSING_TIMEOUT: "Missing",
        BugCategory.HARD_CODED_SUSPECTED: "Hard-coded (suspected)",
    }[d.bug_category]


def table_row(doc: ReportDocument) -> tuple[str, ...]:
    d = doc.diagnosis
    pred = doc.effective_prediction
    label = doc.label or "-"
    if d is None:
        kind = doc.status.value if doc.error is None else f"{doc.status.value} ({doc.error.type})"
        return (label, kind, "-", "--", pred.seconds() if pred else "--", _fixed(doc), "--")
    return (
        label,
        _bug_type(d),
        d.impact or "-",
        format_duration(d.buggy_value_ms),
        pred.seconds() if pred else "--",
        _fixed(doc),
        format_seconds(d.diagnosis_time_ms),
    )


def _fixed(doc: ReportDocument) -> str:
    if doc.verdict is None:
        return "-"
    return {"Fixed": "Yes", "PartialFix": "Partial", "NotFixed": "No"}.get(
        doc.verdict.outcome.value, doc.verdict.outcome.value
    )


def render_table(docs: Sequence[ReportDocument]) -> str:
    rows = [TABLE_COLUMNS] + [table_row(d) for d in docs]
    widths = [max(len(r[i]) for r in rows) for i in range(len(TABLE_COLUMNS))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def render_text(doc: ReportDocument) -> str:
    out = [f"status: {doc.status.value}"]
    if doc.error is not None:
        where = f" [{doc.error.stage}]" if doc.error.stage else ""
        out.append(f"error{where}: {doc.error.type}: {doc.error.message}")
    d = doc.diagnosis
    if d is not None:
        out.append(f"bug type: {_bug_type(d)}")
        out.append(f"root cause: {d.root_cause_function}")
        if d.misused_variable is not None:
            v = d.misused_variable
            out.append(f"misused variable: {v.id} = {format_duration(v.effective_value_ms)} ({v.origin.value})")
            if v.taint_path:
                hops = [v.taint_path[0].src] + [f"{e.dst} ({e.kind})" for e in v.taint_path]
                out.append("  taint path: " + " -> ".join(hops))
        if d.hang_type is not None:
            out.append(f"hang type: {d.hang_type.value}")
        if d.impact:
            out.append(f"impact: {d.impact}")
        out.append(f"diagnosis time: {format_seconds(d.diagnosis_time_ms)}")
        for e in d.evidence:
            out.append(f"  - {e}")
    pred = doc.effective_prediction
    if pred is not None:
        tag = " (fallback)" if pred.fallback else ""
        out.append(
            f"predicted timeout: {pred.seconds()}{tag}  "
            f"[T_r {format_seconds(pred.t_r_ms)}, padding {pred.padding.mode.value} ratio {pred.ratio:.4f}, "
            f"degree {pred.degree}, {'interpolation' if pred.interpolation else 'extrapolation'}]"
        )
    if d is not None and d.patch_plan is not None:
        p = d.patch_plan
        out.append(f"patch: {p.strategy.value} on {p.target_function}; new key {p.new_config_key}")
        for n in p.notes:
            out.append(f"  - {n}")
        if p.rendered_diff:
            out.append(p.rendered_diff.rstrip("\n"))
    if doc.verdict is not None:
        v = doc.verdict
        out.append(f"verdict: {v.outcome.value} (bug reproduced: {v.bug_reproduced}, tests passed: {v.tests_passed})")
        for e in v.evidence:
            out.append(f"  - {e}")
    for w in doc.warnings:
        out.append(f"warning: {w}")
    if d is not None or pred is not None or doc.verdict is not None:
        out.append("")
        out.append(render_table([doc]).rstrip("\n"))
    return "\n".join(out) + "\n"
