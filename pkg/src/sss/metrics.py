"""Classification metrics: F1, ROC AUC, accuracy and a binned calibration error."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import UndefinedMetric


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError(f"negative confusion count in {self}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_predictions(cls, predicted, labels, positive: int = 1) -> "ConfusionCounts":
        pred = np.asarray(predicted) == positive
        true = np.asarray(labels) == positive
        return cls(
            tp=int(np.sum(pred & true)),
            fp=int(np.sum(pred & ~true)),
            tn=int(np.sum(~pred & ~true)),
            fn=int(np.sum(~pred & true)),
        )


def f1_score(counts: ConfusionCounts) -> float:
    """Harmonic mean of precision and recall; 0 when there are no true positives."""
    if counts.tp + counts.fp == 0 and counts.tp + counts.fn == 0:
        raise UndefinedMetric("F1 undefined: no predicted and no actual positives")
    if counts.tp == 0:
        return 0.0
    precision = counts.tp / (counts.tp + counts.fp)
    recall = counts.tp / (counts.tp + counts.fn)
    return 2 * precision * recall / (precision + recall)


def _binary_inputs(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores but {y.size} labels")
    pos = y == 1
    if not np.all((y == 0) | pos):
        raise ValueError("labels must be binary 0/1")
    if pos.all() or not pos.any():
        raise UndefinedMetric("AUC needs at least one positive and one negative")
    return s, pos


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values))
    # ties share the mean of the 1-based ranks they span
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], len(values)]
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = 0.5 * (a + 1 + b)
    return ranks


def auc(scores, labels) -> float:
    """Mann-Whitney estimate of the ROC AUC, ties counted one half."""
    s, pos = _binary_inputs(scores, labels)
    n_pos = int(pos.sum())
    n_neg = len(s) - n_pos
    ranks = _average_ranks(s)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels):
    """False/true positive rates swept over every distinct threshold, high to low."""
    s, pos = _binary_inputs(scores, labels)
    order = np.argsort(-s, kind="mergesort")
    s, pos = s[order], pos[order]
    last_of_run = np.r_[s[1:] != s[:-1], True]
    tps = np.cumsum(pos)[last_of_run]
    fps = np.cumsum(~pos)[last_of_run]
    tpr = np.r_[0.0, tps / pos.sum()]
    fpr = np.r_[0.0, fps / (~pos).sum()]
    return fpr, tpr


def auc_trapezoid(scores, labels) -> float:
    """Area under the swept ROC curve by the trapezoid rule."""
    fpr, tpr = roc_curve(scores, labels)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def accuracy(predictions, labels) -> float:
    pred = np.asarray(predictions)
    true = np.asarray(labels)
    if pred.size == 0:
        raise UndefinedMetric("accuracy of an empty prediction set")
    if pred.shape != true.shape:
        raise ValueError(f"{pred.size} predictions but {true.size} labels")
    return 100.0 * float(np.mean(pred == true))


def expected_calibration_error(probs, labels, n_bins: int = 10) -> float:
    """Equal-width binned |accuracy - confidence| for positive-class probabilities."""
    p = np.asarray(probs, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if p.size == 0:
        raise UndefinedMetric("ECE of an empty set")
    bins = np.minimum((p * n_bins).astype(int), n_bins - 1)
    ece = 0.0
    for b in range(n_bins):
        mask = bins == b
        if mask.any():
            ece += mask.sum() / p.size * abs(y[mask].mean() - p[mask].mean())
    return float(ece)


def report(probs, labels, threshold: float = 0.5) -> dict:
    """Metric report for (N, K) series probabilities.

    Binary problems threshold the positive class; K > 2 uses argmax with
    macro-averaged F1 and one-vs-rest AUC. Undefined metrics come back as None.
    """
    P = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    K = P.shape[1]
    out = {"n": int(len(y))}
    if K == 2:
        pred = (P[:, 1] >= threshold).astype(int)
        counts = ConfusionCounts.from_predictions(pred, y)
        out["counts"] = asdict(counts)
        try:
            out["f1"] = f1_score(counts)
        except UndefinedMetric:
            out["f1"] = None
        try:
            out["auc"] = auc(P[:, 1], y)
        except UndefinedMetric:
            out["auc"] = None
    else:
        pred = P.argmax(axis=1)
        f1s, aucs, per_class = [], [], {}
        for k in range(K):
            counts = ConfusionCounts.from_predictions(pred, y, positive=k)
            per_class[str(k)] = asdict(counts)
            try:
                f1s.append(f1_score(counts))
            except UndefinedMetric:
                pass
            try:
                aucs.append(auc(P[:, k], (y == k).astype(int)))
            except UndefinedMetric:
                pass
        out["counts"] = per_class
        out["f1"] = float(np.mean(f1s)) if f1s else None
        out["auc"] = float(np.mean(aucs)) if aucs else None
    out["accuracy"] = accuracy(pred, y) if len(y) else None
    return out
