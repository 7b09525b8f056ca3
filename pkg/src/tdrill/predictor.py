"""Workload-adaptive timeout prediction.

A multivariate polynomial over workload/environment metrics is fitted to
historical execution times of the affected function::

    T_r = sum_j beta_j * S_1^p1 * ... * S_N^pN,   p_i >= 0, sum(p_i) <= P

The degree P is chosen from 1..3 by least-squares error, the worst relative
fitting error sets a padding ratio, and the timeout recommendation is
``T_r * (1 + ratio)``.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from math import comb
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateFeaturesWarning,
    InputError,
    NegativePrediction,
    NonPositiveObservation,
    Underdetermined,
    UnderestimationWarning,
)

MAX_DEGREE = 3
OBSERVED_COLUMN = "observed_ms"


@dataclass(frozen=True)
class TrainingSample:
    features: tuple[float, ...]
    observed_ms: float


@dataclass(frozen=True)
class Dataset:
    feature_names: tuple[str, ...]
    samples: tuple[TrainingSample, ...]

    def __post_init__(self):
        n = len(self.feature_names)
        for s in self.samples:
            if len(s.features) != n:
                raise InputError(f"sample has {len(s.features)} features, expected {n}")
            if not s.observed_ms > 0:
                raise NonPositiveObservation(f"observed_ms must be positive, got {s.observed_ms}")

    @classmethod
    def from_arrays(cls, X, y, names: Sequence[str] | None = None) -> "Dataset":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[0] != len(y) and X.shape[1] == len(y):
            X = X.T
        names = tuple(names) if names else tuple(f"s{i + 1}" for i in range(X.shape[1]))
        samples = tuple(TrainingSample(tuple(map(float, row)), float(t)) for row, t in zip(X, y))
        return cls(names, samples)

    @property
    def X(self) -> np.ndarray:
        return np.array([s.features for s in self.samples], dtype=float).reshape(len(self.samples), -1)

    @property
    def y(self) -> np.ndarray:
        return np.array([s.observed_ms for s in self.samples], dtype=float)

    def __len__(self) -> int:
        return len(self.samples)


def read_dataset_csv(text: str) -> Dataset:
    reader = csv.reader(io.StringIO(text))
    rows = [r for r in reader if r and any(c.strip() for c in r)]
    if not rows:
        return Dataset((), ())
    header = [h.strip() for h in rows[0]]
    if OBSERVED_COLUMN not in header:
        raise InputError(f"dataset header lacks {OBSERVED_COLUMN!r}")
    t_col = header.index(OBSERVED_COLUMN)
    names = tuple(h for i, h in enumerate(header) if i != t_col)
    samples = []
    for lineno, row in enumerate(rows[1:], 2):
        if len(row) != len(header):
            raise InputError(f"dataset line {lineno}: expected {len(header)} columns")
        try:
            values = [float(c) for c in row]
        except ValueError:
            raise InputError(f"dataset line {lineno}: non-numeric value") from None
        feats = tuple(v for i, v in enumerate(values) if i != t_col)
        samples.append(TrainingSample(feats, values[t_col]))
    return Dataset(names, tuple(samples))


def load_dataset(path: str | Path) -> Dataset:
    return read_dataset_csv(Path(path).read_text(encoding="utf-8"))


def write_dataset_csv(dataset: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*dataset.feature_names, OBSERVED_COLUMN])
    for s in dataset.samples:
        w.writerow([repr(v) for v in s.features] + [repr(s.observed_ms)])
    return buf.getvalue()


def term_exponents(n_features: int, degree: int) -> list[tuple[int, ...]]:
    """All multi-exponents with total degree <= ``degree``, graded order."""
    terms = [
        e
        for e in itertools.product(range(degree + 1), repeat=n_features)
        if sum(e) <= degree
    ]
    terms.sort(key=lambda e: (sum(e), tuple(-p for p in e)))
    return terms


def term_count(n_features: int, degree: int) -> int:
    return comb(n_features + degree, degree)


def _design(Z: np.ndarray, exponents: Sequence[tuple[int, ...]]) -> np.ndarray:
    cols = [np.prod(Z ** np.array(e, dtype=float), axis=1) for e in exponents]
    return np.column_stack(cols) if cols else np.empty((Z.shape[0], 0))


@dataclass(frozen=True)
class RegressionModel:
    degree: int
    feature_names: tuple[str, ...]
    exponents: tuple[tuple[int, ...], ...]
    coefficients: tuple[float, ...]  # original feature units, aligned with ``exponents``
    center: tuple[float, ...]
    scale: tuple[float, ...]
    std_coefficients: tuple[float, ...]  # coefficients over standardized features
    feature_min: tuple[float, ...]
    feature_max: tuple[float, ...]
    n_samples: int
    residual_sum_sq: float
    max_relative_residual: float
    degenerate: bool = False
    selection_error: float | None = None
    scorer: str | None = None

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def coefficient(self, exponent: Sequence[int]) -> float:
        return self.coefficients[self.exponents.index(tuple(exponent))]

    def evaluate(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise InputError(f"expected {self.n_features} features, got {X.shape[1]}")
        Z = (X - np.array(self.center)) / np.array(self.scale)
        terms = _design(Z, self.exponents) * np.array(self.std_coefficients)
        # correctly rounded per row, so a point scores the same alone or in a batch
        return np.array([math.fsum(row) for row in terms], dtype=float)

    def __call__(self, features: Sequence[float]) -> float:
        return float(self.evaluate([list(features)])[0])

    def is_interpolation(self, features: Sequence[float]) -> bool:
        return all(lo <= f <= hi for f, lo, hi in zip(features, self.feature_min, self.feature_max))

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "feature_names": list(self.feature_names),
            "terms": [
                {"exponents": list(e), "coefficient": c}
                for e, c in zip(self.exponents, self.coefficients)
            ],
            "center": list(self.center),
            "scale": list(self.scale),
            "std_coefficients": list(self.std_coefficients),
            "feature_min": list(self.feature_min),
            "feature_max": list(self.feature_max),
            "n_samples": self.n_samples,
            "residual_sum_sq": self.residual_sum_sq,
            "max_relative_residual": self.max_relative_residual,
            "degenerate": self.degenerate,
            "selection_error": self.selection_error,
            "scorer": self.scorer,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RegressionModel":
        return cls(
            degree=d["degree"],
            feature_names=tuple(d["feature_names"]),
            exponents=tuple(tuple(t["exponents"]) for t in d["terms"]),
            coefficients=tuple(t["coefficient"] for t in d["terms"]),
            center=tuple(d["center"]),
            scale=tuple(d["scale"]),
            std_coefficients=tuple(d["std_coefficients"]),
            feature_min=tuple(d["feature_min"]),
            feature_max=tuple(d["feature_max"]),
            n_samples=d["n_samples"],
            residual_sum_sq=d["residual_sum_sq"],
            max_relative_residual=d["max_relative_residual"],
            degenerate=d.get("degenerate", False),
            selection_error=d.get("selection_error"),
            scorer=d.get("scorer"),
        )


def _to_original_units(exponents, beta_z, center, scale) -> list[float]:
    # expand prod(((s_i - c_i) / d_i) ** p_i) binomially
    index = {e: k for k, e in enumerate(exponents)}
    out = [0.0] * len(exponents)
    for e, b in zip(exponents, beta_z):
        if b == 0.0:
            continue
        per_feature = []
        for p, c, d in zip(e, center, scale):
            per_feature.append(
                [(k, comb(p, k) * (-c) ** (p - k) / d**p) for k in range(p + 1)]
            )
        for combo in itertools.product(*per_feature):
            target = tuple(k for k, _ in combo)
            weight = math.prod(w for _, w in combo)
            out[index[target]] += b * weight
    return out


def fit(dataset: Dataset, degree: int) -> RegressionModel:
    if not 1 <= degree <= MAX_DEGREE:
        raise ValueError(f"degree must be in 1..{MAX_DEGREE}")
    n_feat = len(dataset.feature_names)
    exponents = term_exponents(n_feat, degree)
    if len(dataset) < len(exponents):
        raise Underdetermined(len(dataset), len(exponents))
    X, y = dataset.X, dataset.y
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    A = _design((X - center) / scale, exponents)
    beta, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    degenerate = rank < len(exponents)
    if degenerate:
        warnings.warn(
            f"design matrix rank {rank} < {len(exponents)} terms; using minimum-norm fit",
            DegenerateFeaturesWarning,
            stacklevel=2,
        )
    resid = A @ beta - y
    return RegressionModel(
        degree=degree,
        feature_names=dataset.feature_names,
        exponents=tuple(exponents),
        coefficients=tuple(float(c) for c in _to_original_units(exponents, beta, center, scale)),
        center=tuple(float(c) for c in center),
        scale=tuple(float(s) for s in scale),
        std_coefficients=tuple(float(b) for b in beta),
        feature_min=tuple(float(v) for v in X.min(axis=0)),
        feature_max=tuple(float(v) for v in X.max(axis=0)),
        n_samples=len(dataset),
        residual_sum_sq=float(resid @ resid),
        max_relative_residual=float(np.max(np.abs(resid) / np.abs(y))),
        degenerate=bool(degenerate),
    )


def training_error(dataset: Dataset, degree: int) -> float:
    """Mean squared training residual."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateFeaturesWarning)
        model = fit(dataset, degree)
    return model.residual_sum_sq / len(dataset)


def loocv_error(dataset: Dataset, degree: int) -> float:
    """Mean squared leave-one-out prediction error."""
    errs = []
    samples = dataset.samples
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateFeaturesWarning)
        for i in range(len(samples)):
            rest = Dataset(dataset.feature_names, samples[:i] + samples[i + 1:])
            model = fit(rest, degree)
            errs.append((model(samples[i].features) - samples[i].observed_ms) ** 2)
    return math.fsum(errs) / len(errs)


SCORERS = {"training": training_error, "loocv": loocv_error}


def select_model(
    dataset: Dataset,
    scorer: str = "auto",
    max_degree: int = MAX_DEGREE,
) -> RegressionModel:
    """Fit degrees 1..max_degree and keep the lowest selection error.

    ``auto`` scores by leave-one-out error when the dataset holds at least
    twice as many samples as the largest feasible model has terms, else by
    training residual.  Scores within a relative 1e-12 of the best count as
    ties and go to the smaller degree.
    """
    n_feat = len(dataset.feature_names)
    feasible = [p for p in range(1, max_degree + 1) if len(dataset) >= term_count(n_feat, p)]
    if not feasible:
        raise Underdetermined(len(dataset), term_count(n_feat, 1))
    if scorer == "auto":
        scorer = "loocv" if len(dataset) >= 2 * term_count(n_feat, max(feasible)) else "training"
    if scorer not in SCORERS:
        raise ValueError(f"unknown scorer {scorer!r}")
    if scorer == "loocv":
        feasible = [p for p in feasible if len(dataset) - 1 >= term_count(n_feat, p)] or feasible[:1]
        if len(dataset) < 2:
            scorer = "training"

    scores = {p: SCORERS[scorer](dataset, p) for p in feasible}
    tie = 1e-12 * float(np.mean(dataset.y**2))
    best_score = min(scores.values())
    best = min(p for p, s in scores.items() if s - best_score <= tie)
    model = fit(dataset, best)
    return replace(model, selection_error=float(scores[best]), scorer=scorer)


# --------------------------------------------------------------------------
# padding and prediction


class PaddingMode(str, Enum):
    PAPER_LITERAL = "paper-literal"
    SAFE = "safe"


@dataclass(frozen=True)
class PaddingReport:
    mode: PaddingMode
    relative_errors: tuple[float, ...]  # (T_est - T_hist) / T_hist per sample
    ratio: float
    underestimation_warning: bool = False

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "relative_errors": list(self.relative_errors),
            "ratio": self.ratio,
            "underestimation_warning": self.underestimation_warning,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PaddingReport":
        return cls(
            PaddingMode(d["mode"]),
            tuple(d["relative_errors"]),
            d["ratio"],
            d.get("underestimation_warning", False),
        )


def padding_from_estimates(
    estimates: Sequence[float],
    observed: Sequence[float],
    mode: PaddingMode = PaddingMode.SAFE,
) -> PaddingReport:
    est = [float(e) for e in estimates]
    hist = [float(h) for h in observed]
    if any(not h > 0 for h in hist):
        raise NonPositiveObservation("historical execution times must be positive")
    rel = tuple((e - h) / h for e, h in zip(est, hist))
    mode = PaddingMode(mode)
    if mode is PaddingMode.PAPER_LITERAL:
        ratio = 2.0 * max(rel) if rel else 0.0
        warn = ratio < 0
        if warn:
            warnings.warn(
                f"padding ratio {ratio:.4g} is negative; the prediction will shrink below the fit",
                UnderestimationWarning,
                stacklevel=2,
            )
        return PaddingReport(mode, rel, ratio, warn)

    for e in est:
        if not e > 0:
            raise NegativePrediction(e)
    under = [(h - e) / e for e, h in zip(est, hist)]
    ratio = max(0.0, 2.0 * max(under)) if under else 0.0
    # rounding in e * (1 + ratio) may leave the worst point a hair short
    while any(e * (1.0 + ratio) < h for e, h in zip(est, hist)):
        ratio = math.nextafter(ratio, math.inf)
    return PaddingReport(mode, rel, ratio, False)


def padding_ratio(
    model: RegressionModel,
    dataset: Dataset,
    mode: PaddingMode | str = PaddingMode.SAFE,
) -> PaddingReport:
    estimates = model.evaluate(dataset.X) if len(dataset) else []
    return padding_from_estimates(estimates, dataset.y, PaddingMode(mode))


@dataclass(frozen=True)
class Prediction:
    t_r_ms: float
    t_predict_ms: float
    padding: PaddingReport
    degree: int
    interpolation: bool
    query: tuple[float, ...]
    fallback: bool = False
    model: RegressionModel | None = field(default=None, compare=True)

    @property
    def ratio(self) -> float:
        return self.padding.ratio

    def seconds(self) -> str:
        return format_seconds(self.t_predict_ms)

    def to_dict(self) -> dict:
        return {
            "t_r_ms": self.t_r_ms,
            "t_predict_ms": self.t_predict_ms,
            "padding": self.padding.to_dict(),
            "degree": self.degree,
            "interpolation": self.interpolation,
            "query": list(self.query),
            "fallback": self.fallback,
            "model": self.model.to_dict() if self.model else None,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Prediction":
        return cls(
            t_r_ms=d["t_r_ms"],
            t_predict_ms=d["t_predict_ms"],
            padding=PaddingReport.from_dict(d["padding"]),
            degree=d["degree"],
            interpolation=d["interpolation"],
            query=tuple(d["query"]),
            fallback=d.get("fallback", False),
            model=RegressionModel.from_dict(d["model"]) if d.get("model") else None,
        )


def format_seconds(ms: float) -> str:
    return f"{ms / 1000:.2f}s"


def predict(model: RegressionModel, padding: PaddingReport, query: Sequence[float]) -> Prediction:
    query = tuple(float(q) for q in query)
    if len(query) != model.n_features:
        raise InputError(f"query has {len(query)} features, model expects {model.n_features}")
    t_r = model(query)
    t_predict = t_r * (1.0 + padding.ratio)
    if not t_predict > 0:
        raise NegativePrediction(t_predict)
    return Prediction(t_r, t_predict, padding, model.degree, model.is_interpolation(query), query, model=model)


def predict_with_fallback(
    model: RegressionModel,
    padding: PaddingReport,
    query: Sequence[float],
    dataset: Dataset,
) -> Prediction:
    """Like :func:`predict`, but an unusable fit falls back to twice the
    longest historical execution (flagged ``fallback``)."""
    try:
        return predict(model, padding, query)
    except NegativePrediction:
        longest = float(dataset.y.max())
        return Prediction(
            model(query), 2.0 * longest, padding, model.degree,
            model.is_interpolation(query), tuple(float(q) for q in query), True, model,
        )


def recommend(
    dataset: Dataset,
    query: Sequence[float] | Mapping[str, float],
    mode: PaddingMode | str = PaddingMode.SAFE,
    scorer: str = "auto",
) -> Prediction:
    """select_model + padding_ratio + predict in one call."""
    if isinstance(query, Mapping):
        missing = [n for n in dataset.feature_names if n not in query]
        if missing:
            raise InputError(f"query lacks features {missing}")
        query = [float(query[n]) for n in dataset.feature_names]
    model = select_model(dataset, scorer)
    try:
        report = padding_ratio(model, dataset, mode)
    except NegativePrediction:
        # the fit goes non-positive on its own training data; unusable
        report = PaddingReport(PaddingMode(mode), (), 0.0)
        longest = float(dataset.y.max())
        return Prediction(
            model(query), 2.0 * longest, report, model.degree,
            model.is_interpolation(query), tuple(float(q) for q in query), True, model,
        )
    return predict_with_fallback(model, report, query, dataset)
