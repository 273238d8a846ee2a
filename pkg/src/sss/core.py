"""Shared domain types and the convex aggregation operator."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyAggregation, InvalidProbability, InvalidWeights

SIMPLEX_TOL = 1e-9
SPLITS = ("train", "val", "test")


@dataclass(frozen=True, eq=False)
class SeriesRecord:
    """One variable-length series of shape (T, M) with its class label."""

    id: str
    values: np.ndarray
    label: int
    split: Optional[str] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise DimensionMismatch(f"series {self.id}: expected a (T, M) matrix, got ndim={values.ndim}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise DimensionMismatch(f"series {self.id}: empty shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"series {self.id}: non-finite samples")
        if int(self.label) < 0:
            raise ValueError(f"series {self.id}: negative label {self.label}")
        if self.split is not None and self.split not in SPLITS:
            raise ValueError(f"series {self.id}: unknown split {self.split!r}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "label", int(self.label))

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def with_values(self, values) -> "SeriesRecord":
        return replace(self, values=values)

    def with_split(self, split) -> "SeriesRecord":
        return replace(self, split=split)


def as_prob_vector(probs, tol: float = SIMPLEX_TOL) -> np.ndarray:
    """Validate a length-K probability vector.

    Deviations from the simplex smaller than ``tol`` are renormalized away;
    anything larger is rejected.
    """
    p = np.array(probs, dtype=np.float64)
    if p.ndim != 1 or p.shape[0] < 2:
        raise InvalidProbability(f"expected a vector with K >= 2 entries, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or p.min() < -tol or p.max() > 1 + tol:
        raise InvalidProbability(f"entries outside [0, 1]: {p}")
    total = math.fsum(p)
    if abs(total - 1.0) > tol:
        raise InvalidProbability(f"entries sum to {total!r}")
    p = np.clip(p, 0.0, 1.0)
    return p / math.fsum(p)


def mean_weights(count: int) -> np.ndarray:
    if count < 1:
        raise EmptyAggregation("cannot build weights for zero predictions")
    return np.full(count, 1.0 / count)


def _check_weights(weights, count: int) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != count:
        raise InvalidWeights(f"expected {count} weights, got shape {w.shape}")
    if not np.all(np.isfinite(w)) or w.min() < 0:
        raise InvalidWeights("weights must be finite and nonnegative")
    if abs(math.fsum(w) - 1.0) > SIMPLEX_TOL:
        raise InvalidWeights(f"weights sum to {math.fsum(w)!r}, not 1")
    return w


def aggregate(preds: Sequence, weights=None) -> np.ndarray:
    """Convex combination of window probability vectors.

    ``preds`` is an (N, K) array (or a sequence of length-K vectors) treated as
    a multiset; ``weights`` defaults to the uniform mean.
    """
    if len(preds) == 0:
        raise EmptyAggregation("no predictions to aggregate")
    try:
        P = np.asarray(preds, dtype=np.float64)
    except ValueError as exc:
        raise DimensionMismatch("predictions do not share K") from exc
    if P.ndim != 2:
        raise DimensionMismatch(f"expected (N, K) predictions, got shape {P.shape}")
    w = mean_weights(P.shape[0]) if weights is None else _check_weights(weights, P.shape[0])
    out = w @ P
    return as_prob_vector(out)

