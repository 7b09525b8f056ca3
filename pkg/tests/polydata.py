"""Noise-free polynomial datasets with known generating degree."""

from __future__ import annotations

import itertools
import math
import random

from tdrill.predictor import Dataset, term_count, term_exponents

# (degree, features, seed): every (P, N) pair, then a second draw of seven of them
GRID = [(p, n, 0) for p in (1, 2, 3) for n in (1, 2, 3)] + [
    (1, 1, 1), (2, 1, 1), (3, 1, 1), (2, 2, 1), (3, 2, 1), (2, 3, 1), (3, 3, 1),
]


def true_poly(degree: int, n: int, seed: int) -> dict[tuple[int, ...], float]:
    """Random positive coefficients; every top-degree term is present."""
    rng = random.Random(seed * 1000 + degree * 10 + n)
    return {e: rng.uniform(0.5, 3.0) * (10.0 if sum(e) == 0 else 1.0) for e in term_exponents(n, degree)}


def evaluate(poly, x) -> float:
    return math.fsum(c * math.prod(v ** p for v, p in zip(x, e)) for e, c in poly.items())


def poly_dataset(degree: int, n: int, seed: int, samples: int | None = None):
    poly = true_poly(degree, n, seed)
    rng = random.Random(seed + 17 * n + degree)
    m = samples or max(2 * term_count(n, 3) + 4, 12)
    X = [tuple(rng.uniform(1.0, 10.0) for _ in range(n)) for _ in range(m)]
    y = [evaluate(poly, x) for x in X]
    return Dataset.from_arrays(X, y), poly
