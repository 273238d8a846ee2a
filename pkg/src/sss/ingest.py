"""Dataset loading, preprocessing and the synthetic burst corpus."""

from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import SPLITS, SeriesRecord
from .errors import (
    ConfigError,
    DuplicateId,
    EmptySeries,
    ManifestError,
    MissingClass,
    PackingError,
    ParseError,
    SeriesTooShort,
    StratificationError,
)

MANIFEST_NAME = "manifest.csv"
BURSTS_NAME = "bursts.csv"
ZSCORE_EPS = 1e-8


@dataclass
class ManifestEntry:
    path: str
    id: str
    label: int
    split: Optional[str] = None


@dataclass
class DatasetManifest:
    root: Path
    entries: list = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return len({e.label for e in self.entries})

    @classmethod
    def read(cls, root) -> "DatasetManifest":
        """Parse ``root/manifest.csv`` (header ``path,id,label[,split]``)."""
        root = Path(root)
        path = root / MANIFEST_NAME
        if not path.is_file():
            raise FileNotFoundError(f"no manifest at {path}")
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = {"path", "id", "label"} - set(reader.fieldnames or ())
            if missing:
                raise ManifestError(f"{path}: missing columns {sorted(missing)}")
            entries = []
            for row in reader:
                split = (row.get("split") or "").strip() or None
                try:
                    label = int(row["label"])
                except ValueError:
                    raise ManifestError(f"{path}: bad label {row['label']!r} for {row['id']}") from None
                entries.append(ManifestEntry(row["path"].strip(), row["id"].strip(), label, split))
        manifest = cls(root, entries)
        manifest.validate()
        return manifest

    def validate(self):
        seen = set()
        for e in self.entries:
            if e.id in seen:
                raise DuplicateId(f"duplicate series id {e.id!r}")
            seen.add(e.id)
            if e.split is not None and e.split not in SPLITS:
                raise ManifestError(f"series {e.id}: unknown split {e.split!r}")
        labels = {e.label for e in self.entries}
        if labels and labels != set(range(len(labels))):
            raise ManifestError(f"labels {sorted(labels)} are not contiguous from 0")

    def write(self):
        self.root.mkdir(parents=True, exist_ok=True)
        with_split = any(e.split for e in self.entries)
        with open(self.root / MANIFEST_NAME, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", "id", "label"] + (["split"] if with_split else []))
            for e in self.entries:
                w.writerow([e.path, e.id, e.label] + ([e.split or ""] if with_split else []))


def read_series_csv(path) -> np.ndarray:
    """Read a numeric CSV, one row per time step and one column per channel."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"series file not found: {path}")
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row_no, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            values = []
            for col_no, cell in enumerate(row, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(path, row_no, col_no, cell) from None
                if not math.isfinite(v):
                    raise ParseError(path, row_no, col_no, cell)
                values.append(v)
            if rows and len(values) != len(rows[0]):
                raise ParseError(path, row_no, len(values), f"<{len(values)} columns, expected {len(rows[0])}>")
            rows.append(values)
    if not rows:
        raise EmptySeries(f"{path} holds no samples")
    return np.array(rows, dtype=np.float64)


def write_series_csv(path, values: np.ndarray):
    np.savetxt(path, np.atleast_2d(np.asarray(values).reshape(len(values), -1)),
               delimiter=",", fmt="%.17g")


def load_dataset(manifest: DatasetManifest) -> list:
    return [
        SeriesRecord(e.id, read_series_csv(manifest.root / e.path), e.label, e.split)
        for e in manifest.entries
    ]


def write_dataset(root, records, bursts: Optional[dict] = None) -> DatasetManifest:
    """Write records as ``series/<id>.csv`` plus a manifest (and ``bursts.csv``)."""
    root = Path(root)
    (root / "series").mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in records:
        rel = f"series/{rec.id}.csv"
        write_series_csv(root / rel, rec.values)
        entries.append(ManifestEntry(rel, rec.id, rec.label, rec.split))
    manifest = DatasetManifest(root, entries)
    manifest.write()
    if bursts is not None:
        write_bursts(root / BURSTS_NAME, bursts)
    return manifest


def write_bursts(path, bursts: dict):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "start", "end"])
        for sid, intervals in bursts.items():
            for start, end in intervals:
                w.writerow([sid, start, end])


def read_bursts(path) -> dict:
    out: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["id"], []).append((int(row["start"]), int(row["end"])))
    return out


# preprocessing


@dataclass
class PreprocessConfig:
    zscore: bool = True
    downsample_kernel: int = 1
    downsample_stride: int = 1
    zscore_first: bool = False
    balance_classes: bool = True
    split_fractions: tuple = (0.7, 0.1, 0.2)

    def __post_init__(self):
        self.split_fractions = tuple(float(f) for f in self.split_fractions)
        if not self.downsample_kernel >= self.downsample_stride >= 1:
            raise ConfigError("need downsample_kernel >= downsample_stride >= 1")
        if len(self.split_fractions) != 3 or min(self.split_fractions) < 0:
            raise ConfigError(f"bad split fractions {self.split_fractions}")
        if abs(math.fsum(self.split_fractions) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions sum to {math.fsum(self.split_fractions)}")


def zscore_normalize(series: SeriesRecord) -> SeriesRecord:
    x = series.values
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    return series.with_values((x - mu) / np.maximum(sd, ZSCORE_EPS))


def downsample_avgpool(series: SeriesRecord, kernel: int, stride: int) -> SeriesRecord:
    x = series.values
    T = x.shape[0]
    if T < kernel:
        raise SeriesTooShort(f"series {series.id}: length {T} < pooling kernel {kernel}")
    windows = np.lib.stride_tricks.sliding_window_view(x, kernel, axis=0)[::stride]
    return series.with_values(windows.mean(axis=-1))


def pad_or_truncate(series: SeriesRecord, length: int) -> SeriesRecord:
    if length < 1:
        raise ValueError("target length must be >= 1")
    x = series.values
    if x.shape[0] >= length:
        return series.with_values(x[:length])
    pad = np.zeros((length - x.shape[0], x.shape[1]))
    return series.with_values(np.vstack([x, pad]))


def preprocess(records, config: PreprocessConfig) -> list:
    """Per-series downsampling and z-scoring in the configured order."""
    def pool(r):
        if config.downsample_kernel == 1 and config.downsample_stride == 1:
            return r
        return downsample_avgpool(r, config.downsample_kernel, config.downsample_stride)

    def norm(r):
        return zscore_normalize(r) if config.zscore else r

    steps = (norm, pool) if config.zscore_first else (pool, norm)
    out = []
    for r in records:
        for step in steps:
            r = step(r)
        out.append(r)
    return out


def _by_class(records, n_classes=None) -> dict:
    labels = sorted({r.label for r in records})
    K = n_classes if n_classes is not None else (labels[-1] + 1 if labels else 0)
    groups = {k: [] for k in range(K)}
    for i, r in enumerate(records):
        groups.setdefault(r.label, []).append(i)
    for k, idx in groups.items():
        if not idx:
            raise MissingClass(f"class {k} has no records")
    return groups


def balance_classes(records, seed: int, n_classes: Optional[int] = None) -> list:
    """Subsample every class down to the minority count, keeping input order."""
    groups = _by_class(records, n_classes)
    keep_n = min(len(idx) for idx in groups.values())
    rng = np.random.default_rng(seed)
    keep = []
    for k in sorted(groups):
        idx = np.array(groups[k])
        keep.extend(rng.choice(idx, size=keep_n, replace=False).tolist())
    return [records[i] for i in sorted(keep)]


def _split_counts(n: int, fractions) -> list:
    # largest-remainder rounding keeps every split within 1 of n * fraction
    raw = [n * f for f in fractions]
    counts = [math.floor(x) for x in raw]
    order = sorted(range(len(raw)), key=lambda j: (-(raw[j] - counts[j]), j))
    for j in order[: n - sum(counts)]:
        counts[j] += 1
    return counts


def split_dataset(records, fractions=(0.7, 0.1, 0.2), seed: int = 0) -> list:
    """Stratified train/val/test assignment, deterministic under ``seed``."""
    fractions = tuple(float(f) for f in fractions)
    if abs(math.fsum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions sum to {math.fsum(fractions)}")
    needed = sum(1 for f in fractions if f > 0)
    groups = _by_class(records)
    rng = np.random.default_rng(seed)
    assigned = [None] * len(records)
    for k in sorted(groups):
        idx = groups[k]
        if len(idx) < needed:
            raise StratificationError(
                f"class {k} has {len(idx)} records but {needed} non-empty splits are required")
        counts = _split_counts(len(idx), fractions)
        perm = rng.permutation(len(idx))
        pos = 0
        for name, c in zip(SPLITS, counts):
            for p in perm[pos:pos + c]:
                assigned[idx[p]] = name
            pos += c
    return [r.with_split(s) for r, s in zip(records, assigned)]


# synthetic corpus


@dataclass
class SynthConfig:
    n_series: int = 200
    length_range: tuple = (2000, 8000)
    burst_count_range: tuple = (2, 4)
    burst_len_range: tuple = (200, 500)
    burst_period_range: tuple = (6.0, 12.0)
    burst_amplitude: float = 3.0
    noise_ar_coefficient: float = 0.9
    seed: int = 0

    def __post_init__(self):
        for name in ("length_range", "burst_count_range", "burst_len_range", "burst_period_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name}: empty range ({lo}, {hi})")
            setattr(self, name, (lo, hi))
        if self.n_series < 1:
            raise ConfigError("n_series must be positive")
        if self.length_range[0] < 1 or self.burst_len_range[0] < 1 or self.burst_count_range[0] < 0:
            raise ConfigError("lengths must be positive and counts nonnegative")
        if self.length_range[0] < self.burst_len_range[1]:
            raise ConfigError("shortest series cannot hold the longest burst")
        if not -1.0 < self.noise_ar_coefficient < 1.0:
            raise ConfigError("noise_ar_coefficient must lie in (-1, 1)")
        if self.burst_period_range[0] <= 0:
            raise ConfigError("burst periods must be positive")


def series_rng(seed: int, series_id: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(series_id.encode())]))


def ar1_noise(rng: np.random.Generator, length: int, phi: float) -> np.ndarray:
    """Stationary unit-variance AR(1) noise."""
    eps = rng.standard_normal(length) * math.sqrt(1.0 - phi * phi)
    x = np.empty(length)
    prev = rng.standard_normal()
    for t in range(length):
        prev = phi * prev + eps[t]
        x[t] = prev
    return x


def place_bursts(rng: np.random.Generator, length: int, lens) -> list:
    """Uniformly random non-overlapping [start, end) intervals with the given lengths."""
    free = length - int(sum(lens))
    if free < 0:
        raise PackingError(f"bursts of total length {sum(lens)} do not fit in {length} samples")
    offsets = np.sort(rng.integers(0, free + 1, size=len(lens)))
    intervals, used = [], 0
    for off, n in zip(offsets, lens):
        start = int(off) + used
        intervals.append((start, start + int(n)))
        used += int(n)
    return intervals


def synthesize(config: SynthConfig):
    """Generate a balanced corpus; returns (records, {id: [(start, end), ...]})."""
    records, bursts = [], {}
    width = max(4, len(str(config.n_series - 1)))
    for i in range(config.n_series):
        sid = f"syn{i:0{width}d}"
        label = i % 2
        rng = series_rng(config.seed, sid)
        T = int(rng.integers(config.length_range[0], config.length_range[1] + 1))
        x = ar1_noise(rng, T, config.noise_ar_coefficient)
        count = int(rng.integers(config.burst_count_range[0], config.burst_count_range[1] + 1))
        lens = rng.integers(config.burst_len_range[0], config.burst_len_range[1] + 1, size=count)
        intervals = place_bursts(rng, T, lens)
        if label == 1:
            for start, end in intervals:
                period = rng.uniform(*config.burst_period_range)
                phase = rng.uniform(0.0, 2 * math.pi)
                t = np.arange(end - start)
                x[start:end] += config.burst_amplitude * np.sin(2 * math.pi * t / period + phase)
            bursts[sid] = intervals
        records.append(SeriesRecord(sid, x, label))
    return records, bursts
