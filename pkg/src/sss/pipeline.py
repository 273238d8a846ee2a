"""Sparse-sampling training epochs, full-coverage inference and heatmaps."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .backbone import AdamConfig, AdamState, BackboneConfig, PatchMlpBackbone, loss_and_grad_series
from .calibrate import Calibrator, fit_calibrator
from .core import aggregate
from .errors import ConfigError, DimensionMismatch, EmptyDataset, InvalidBinWidth, NonFiniteGradient
from .sampling import (
    EpochSampler,
    WindowSpec,
    build_pool,
    materialize_batch,
    slice_window,
    window_offsets,
)

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "train_loss", "val_f1", "val_auc", "val_acc", "lr")


@dataclass
class TrainConfig:
    window_len: int = 256
    train_stride: int | None = None
    infer_stride: int | None = None
    batch_size: int = 32
    epochs: int = 50
    patience: int = 15
    lr: float = 1e-4
    final_lr_ratio: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 1e-5
    patch_len: int = 16
    patch_stride: int = 8
    d_model: int = 32
    hidden: int = 64
    calibrator: str = "isotonic"
    init_seed: int = 0
    sampler_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ConfigError("epochs, patience and batch_size must be positive")
        self.train_spec, self.infer_spec  # raise on bad strides

    @property
    def train_spec(self) -> WindowSpec:
        return WindowSpec(self.window_len, self.train_stride or self.window_len)

    @property
    def infer_spec(self) -> WindowSpec:
        return WindowSpec(self.window_len, self.infer_stride or max(1, self.window_len // 4))

    def adam(self) -> AdamConfig:
        return AdamConfig(lr=self.lr, final_lr_ratio=self.final_lr_ratio, beta1=self.beta1,
                          beta2=self.beta2, eps=self.adam_eps, weight_decay=self.weight_decay,
                          epochs=self.epochs)

    def backbone(self, channels: int, n_classes: int) -> BackboneConfig:
        return BackboneConfig(self.window_len, channels, self.patch_len, self.patch_stride,
                              self.d_model, self.hidden, n_classes)


@dataclass
class SeriesPrediction:
    series_id: str
    length: int
    window_len: int
    offsets: np.ndarray
    raw: np.ndarray
    calibrated: np.ndarray
    probs: np.ndarray
    label: int | None = None


@dataclass
class Heatmap:
    series_id: str
    bin_width: int
    length: int
    values: np.ndarray

    @property
    def bins(self):
        starts = np.arange(len(self.values)) * self.bin_width
        return starts, np.minimum(starts + self.bin_width, self.length)


@dataclass
class TrainResult:
    model: PatchMlpBackbone
    calibrator: Calibrator
    history: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False


class TrainingDiverged(NonFiniteGradient):
    """Training hit a non-finite gradient; ``result`` holds the last good model."""

    def __init__(self, message, result: TrainResult):
        super().__init__(message)
        self.result = result


def _splits(records):
    train = [r for r in records if r.split == "train"]
    val = [r for r in records if r.split == "val"]
    return train, val


def _check_channels(records) -> int:
    channels = {r.channels for r in records}
    if len(channels) != 1:
        raise DimensionMismatch(f"series disagree on channel count: {sorted(channels)}")
    return channels.pop()


def predict_series(model, calibrator: Calibrator, series, spec: WindowSpec) -> SeriesPrediction:
    """Score every window of ``series``, calibrate each, then mean-aggregate."""
    if spec.window_len != model.window_len:
        raise DimensionMismatch(f"window_len {spec.window_len} != model window_len {model.window_len}")
    offsets = window_offsets(series.length, spec.window_len, spec.stride)
    windows = np.stack([slice_window(series.values, int(o), spec.window_len, series.id) for o in offsets])
    raw = model.predict_proba(windows)
    calibrated = calibrator.calibrate_probs(raw)
    return SeriesPrediction(series.id, series.length, spec.window_len, offsets, raw, calibrated,
                            aggregate(calibrated), series.label)


def predict_all(model, calibrator, records, spec) -> list:
    return [predict_series(model, calibrator, r, spec) for r in records]


def heatmap(prediction: SeriesPrediction, bin_width: int, raw: bool = False) -> Heatmap:
    """Average positive-class window probability over every window touching each bin."""
    if bin_width < 1:
        raise InvalidBinWidth(f"bin width must be >= 1, got {bin_width}")
    T = prediction.length
    n_bins = math.ceil(T / bin_width)
    starts = np.arange(n_bins) * bin_width
    ends = np.minimum(starts + bin_width, T)
    w_start = prediction.offsets
    w_end = np.minimum(w_start + prediction.window_len, T)
    touches = (w_start[None, :] < ends[:, None]) & (w_end[None, :] > starts[:, None])
    pos = (prediction.raw if raw else prediction.calibrated)[:, 1]
    counts = touches.sum(axis=1)
    values = np.full(n_bins, np.nan)
    covered = counts > 0
    values[covered] = (touches[covered] @ pos) / counts[covered]
    if not covered.all():
        idx = np.flatnonzero(covered)
        for b in np.flatnonzero(~covered):
            values[b] = values[idx[np.argmin(np.abs(idx - b))]]
    return Heatmap(prediction.series_id, bin_width, T, np.clip(values, 0.0, 1.0))


def evaluate(model, calibrator, records, spec: WindowSpec, predictions=None) -> dict:
    """Metric report over ``records``; binary F1/accuracy use threshold 0.5."""
    if not records:
        raise EmptyDataset("nothing to evaluate")
    if predictions is None:
        predictions = predict_all(model, calibrator, records, spec)
    probs = np.stack([p.probs for p in predictions])
    labels = np.array([r.label for r in records])
    rep = metrics.report(probs, labels)
    if probs.shape[1] == 2:
        rep["ece"] = metrics.expected_calibration_error(probs[:, 1], labels)
    return rep


def _epoch_seed(seed: int, epoch: int):
    return np.random.SeedSequence([seed, epoch])


def train(records, config: TrainConfig, n_classes: int | None = None) -> TrainResult:
    """Train on the ``train`` split with early stopping on the ``val`` split.

    Each epoch consumes the whole window pool once in random batches; windows
    are grouped by series, mean-aggregated, and scored with cross-entropy.
    """
    train_recs, val_recs = _splits(records)
    if not train_recs or not val_recs:
        raise EmptyDataset(f"need train and val series, got {len(train_recs)} and {len(val_recs)}")
    channels = _check_channels(train_recs + val_recs)
    K = n_classes or max(r.label for r in records) + 1
    model = PatchMlpBackbone(config.backbone(channels, K), seed=config.init_seed)
    state = AdamState(model.params, config.adam())
    pool = build_pool(train_recs, config.train_spec)
    lookup = {r.id: r for r in train_recs}
    series_labels = np.array([r.label for r in train_recs])
    infer_spec = config.infer_spec
    none = Calibrator("none")

    result = TrainResult(model, none)
    best_score, best_params, stale = None, model.copy_params(), 0
    for epoch in range(config.epochs):
        lr = state.lr_at(epoch)
        sampler = EpochSampler(pool, config.batch_size, _epoch_seed(config.sampler_seed, epoch))
        losses, sizes = [], []
        for idx in sampler:
            windows = materialize_batch(pool, idx, lookup)
            keys = pool.series_index[idx]
            loss, grads = loss_and_grad_series(model, windows, keys, series_labels)
            try:
                state.step(model, grads, lr)
            except NonFiniteGradient as exc:
                model.load_params(best_params)
                result.best_epoch = max(result.best_epoch, 0)
                raise TrainingDiverged(f"epoch {epoch}: {exc}", result) from exc
            losses.append(loss)
            sizes.append(len(idx))
        train_loss = float(np.average(losses, weights=sizes))
        if not math.isfinite(train_loss):
            model.load_params(best_params)
            raise TrainingDiverged(f"epoch {epoch}: non-finite training loss", result)

        rep = evaluate(model, none, val_recs, infer_spec)
        row = {"epoch": epoch, "train_loss": train_loss, "val_f1": rep["f1"], "val_auc": rep["auc"],
               "val_acc": rep["accuracy"], "lr": lr}
        result.history.append(row)
        log.info("epoch %d loss %.4f val f1 %s auc %s", epoch, train_loss, rep["f1"], rep["auc"])

        score = (rep["f1"] or 0.0, rep["auc"] or 0.0)
        if best_score is None or score > best_score:
            best_score, best_params, stale = score, model.copy_params(), 0
            result.best_epoch = epoch
        else:
            stale += 1
            if stale >= config.patience:
                result.stopped_early = True
                break

    model.load_params(best_params)
    result.calibrator = fit_calibrator(config.calibrator, model, val_recs, infer_spec)
    return result


def _fmt(v):
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_history(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for row in history:
            w.writerow([_fmt(row[k]) for k in HISTORY_FIELDS])


def write_heatmap_csv(path, hm: Heatmap):
    starts, ends = hm.bins
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_start", "bin_end", "probability"])
        for s, e, v in zip(starts, ends, hm.values):
            w.writerow([int(s), int(e), repr(float(v))])


def write_pgm(path, heatmaps):
    """8-bit binary graymap (P5), one row per heatmap, short rows padded with black."""
    rows = [np.rint(255 * np.clip(h.values, 0, 1)).astype(np.uint8) for h in heatmaps]
    width = max(len(r) for r in rows)
    img = np.zeros((len(rows), width), dtype=np.uint8)
    for i, r in enumerate(rows):
        img[i, :len(r)] = r
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {len(rows)}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    width, height = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(height, width)
