"""Window-probability calibrators: isotonic regression (PAVA) and Venn-Abers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptyCalibration
from .sampling import WindowSpec, slice_window, window_offsets

KINDS = ("none", "isotonic", "venn_abers")


@dataclass
class CalibrationSet:
    scores: np.ndarray
    labels: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).ravel()
        self.labels = np.asarray(self.labels, dtype=np.float64).ravel()
        if self.weights is None:
            self.weights = np.ones_like(self.scores)
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if not (len(self.scores) == len(self.labels) == len(self.weights)):
            raise ValueError("scores, labels and weights must have equal lengths")
        if len(self.scores) and (self.scores.min() < 0 or self.scores.max() > 1):
            raise ValueError("scores must lie in [0, 1]")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError("labels must be binary")
        if len(self.weights) and self.weights.min() < 0:
            raise ValueError("weights must be nonnegative")

    def __len__(self):
        return len(self.scores)


@dataclass(frozen=True)
class IsotonicModel:
    breakpoints: np.ndarray
    values: np.ndarray

    def predict(self, scores):
        return isotonic_predict(self, scores)


def pool_ties(scores, labels, weights):
    """Merge equal scores into one point carrying the weighted mean label."""
    scores = np.asarray(scores, dtype=np.float64)
    keep = np.asarray(weights) > 0
    scores, labels, weights = scores[keep], np.asarray(labels, float)[keep], np.asarray(weights, float)[keep]
    if len(scores) == 0:
        raise EmptyCalibration("no calibration points with positive weight")
    uniq, inverse = np.unique(scores, return_inverse=True)
    w = np.bincount(inverse, weights=weights)
    y = np.bincount(inverse, weights=weights * labels) / w
    return uniq, y, w


def pava(y, w):
    """Weighted least-squares nondecreasing fit of ``y`` (already in score order)."""
    # each block: [weighted mean, total weight, number of points]
    blocks = []
    for yi, wi in zip(np.asarray(y, float).tolist(), np.asarray(w, float).tolist()):
        blocks.append([yi, wi, 1])
        while len(blocks) > 1 and blocks[-2][0] > blocks[-1][0]:
            m2, w2, n2 = blocks.pop()
            m1, w1, n1 = blocks[-1]
            wt = w1 + w2
            blocks[-1] = [(m1 * w1 + m2 * w2) / wt, wt, n1 + n2]
    return np.repeat([b[0] for b in blocks], [b[2] for b in blocks])


def pava_fit(cal: CalibrationSet) -> IsotonicModel:
    if len(cal) == 0:
        raise EmptyCalibration("empty calibration set")
    xs, ys, ws = pool_ties(cal.scores, cal.labels, cal.weights)
    return IsotonicModel(xs, pava(ys, ws))


def isotonic_predict(model: IsotonicModel, score):
    """Step lookup: value at the greatest breakpoint <= score (first value below range)."""
    q = np.asarray(score, dtype=np.float64)
    idx = np.searchsorted(model.breakpoints, q, side="right") - 1
    out = model.values[np.clip(idx, 0, len(model.values) - 1)]
    return float(out) if out.ndim == 0 else out


@dataclass
class VennAbersModel:
    cal: CalibrationSet

    def __post_init__(self):
        if len(self.cal) == 0:
            raise EmptyCalibration("empty calibration set")

    def predict(self, scores):
        s = np.atleast_1d(np.asarray(scores, dtype=np.float64))
        out = np.array([venn_abers_predict(self, v)[2] for v in s])
        return float(out[0]) if np.ndim(scores) == 0 else out


def venn_abers_predict(model: VennAbersModel, score: float):
    """Return (p0, p1, p1 / (1 - p0 + p1)) for a single raw score."""
    cal = model.cal
    bounds = []
    for label in (0.0, 1.0):
        aug = CalibrationSet(np.append(cal.scores, score), np.append(cal.labels, label),
                             np.append(cal.weights, 1.0))
        bounds.append(isotonic_predict(pava_fit(aug), score))
    p0, p1 = bounds
    return p0, p1, p1 / (1.0 - p0 + p1)


class Calibrator:
    """Monotone map on the positive-class window probability (binary only)."""

    def __init__(self, kind: str = "none", model=None):
        if kind not in KINDS:
            raise ConfigError(f"unknown calibrator kind {kind!r}; choose from {KINDS}")
        self.kind = kind
        self.model = model

    def transform(self, scores):
        if self.kind == "none":
            return np.asarray(scores, dtype=np.float64)
        return np.asarray(self.model.predict(scores), dtype=np.float64)

    def calibrate_probs(self, probs):
        """Map (N, K) window probabilities to calibrated (N, K) probabilities."""
        P = np.asarray(probs, dtype=np.float64)
        if self.kind == "none":
            return P.copy()
        if P.shape[1] != 2:
            raise ConfigError("calibration is only defined for binary problems")
        c = np.clip(self.transform(P[:, 1]), 0.0, 1.0)
        return np.column_stack([1.0 - c, c])

    def to_dict(self) -> dict:
        if self.kind == "none":
            return {"kind": "none"}
        if self.kind == "isotonic":
            return {"kind": "isotonic", "breakpoints": self.model.breakpoints.tolist(),
                    "values": self.model.values.tolist()}
        c = self.model.cal
        return {"kind": "venn_abers", "scores": c.scores.tolist(), "labels": c.labels.tolist(),
                "weights": c.weights.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Calibrator":
        kind = d.get("kind", "none")
        if kind == "isotonic":
            return cls(kind, IsotonicModel(np.array(d["breakpoints"], float), np.array(d["values"], float)))
        if kind == "venn_abers":
            return cls(kind, VennAbersModel(CalibrationSet(d["scores"], d["labels"], d["weights"])))
        return cls(kind)


def window_scores(model, records, spec: WindowSpec):
    """Raw positive-class probability of every window, with the parent series label."""
    scores, labels = [], []
    for rec in records:
        offs = window_offsets(rec.length, spec.window_len, spec.stride)
        windows = np.stack([slice_window(rec.values, int(o), spec.window_len, rec.id) for o in offs])
        scores.append(model.predict_proba(windows)[:, 1])
        labels.append(np.full(len(offs), rec.label))
    return np.concatenate(scores), np.concatenate(labels)


def fit_calibrator(kind: str, model, val_records, spec: WindowSpec) -> Calibrator:
    if kind not in KINDS:
        raise ConfigError(f"unknown calibrator kind {kind!r}; choose from {KINDS}")
    if kind == "none":
        return Calibrator("none")
    if not val_records:
        raise EmptyCalibration("no validation series to fit the calibrator on")
    if model.n_classes != 2:
        raise ConfigError("calibration is only defined for binary problems; use kind 'none'")
    scores, labels = window_scores(model, val_records, spec)
    cal = CalibrationSet(np.clip(scores, 0.0, 1.0), labels)
    if kind == "isotonic":
        return Calibrator(kind, pava_fit(cal))
    return Calibrator(kind, VennAbersModel(cal))
