"""Global window pool and the per-epoch sampler without replacement."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping, NamedTuple

import numpy as np

from .errors import ConfigError, DanglingRef, EmptyDataset, EpochExhausted


@dataclass(frozen=True)
class WindowSpec:
    window_len: int
    stride: int

    def __post_init__(self):
        if self.window_len < 1 or not 1 <= self.stride <= self.window_len:
            raise ConfigError(f"need window_len >= 1 and 1 <= stride <= window_len, got {self}")


class WindowRef(NamedTuple):
    series_id: str
    offset: int


def window_count(length: int, window_len: int, stride: int) -> int:
    """Number of windows a series contributes; short series get one padded window."""
    if length < window_len:
        return 1
    return (length - window_len) // stride + 1


def window_offsets(length: int, window_len: int, stride: int) -> np.ndarray:
    return np.arange(window_count(length, window_len, stride)) * stride


class WindowPool:
    """Every window of a record collection, stored as parallel index arrays.

    ``series_index[j]`` indexes ``series_ids`` and ``offsets[j]`` is the window
    start, so refs are only materialized on demand.
    """

    def __init__(self, series_ids, series_index, offsets, window_len):
        self.series_ids = list(series_ids)
        self.series_index = np.asarray(series_index, dtype=np.int64)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.window_len = window_len

    def __len__(self):
        return len(self.offsets)

    def ref(self, j: int) -> WindowRef:
        return WindowRef(self.series_ids[self.series_index[j]], int(self.offsets[j]))

    @property
    def refs(self) -> list:
        return [self.ref(j) for j in range(len(self))]

    @property
    def per_series_counts(self) -> dict:
        counts = np.bincount(self.series_index, minlength=len(self.series_ids))
        return dict(zip(self.series_ids, counts.tolist()))

    def series_probabilities(self) -> dict:
        """Probability that a uniformly drawn window comes from each series."""
        total = len(self)
        return {sid: c / total for sid, c in self.per_series_counts.items()}


def build_pool(records, spec: WindowSpec) -> WindowPool:
    if not records:
        raise EmptyDataset("cannot build a window pool from zero series")
    ids, idx, offs = [], [], []
    for i, rec in enumerate(records):
        o = window_offsets(rec.length, spec.window_len, spec.stride)
        ids.append(rec.id)
        idx.append(np.full(len(o), i))
        offs.append(o)
    return WindowPool(ids, np.concatenate(idx), np.concatenate(offs), spec.window_len)


class EpochSampler:
    """Draws batches uniformly without replacement until the pool is exhausted.

    The final batch may be smaller than ``batch_size``.
    """

    def __init__(self, pool: WindowPool, batch_size: int, seed):
        if batch_size < 1:
            raise ConfigError("batch_size must be positive")
        self.pool = pool
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)
        self.remaining = self.rng.permutation(len(pool))
        self._pos = 0

    def next_indices(self) -> np.ndarray:
        if self._pos >= len(self.remaining):
            raise EpochExhausted("every window of this epoch has been emitted")
        batch = self.remaining[self._pos:self._pos + self.batch_size]
        self._pos += len(batch)
        return batch

    def next_batch(self) -> list:
        return [self.pool.ref(j) for j in self.next_indices()]

    def __iter__(self) -> Iterator[np.ndarray]:
        while True:
            try:
                yield self.next_indices()
            except EpochExhausted:
                return


def _lookup(records) -> Mapping:
    if isinstance(records, Mapping):
        return records
    return {r.id: r for r in records}


def materialize(ref: WindowRef, records, window_len: int) -> np.ndarray:
    """Slice ``[offset, offset + window_len)``; short series are zero-padded at the end."""
    try:
        rec = _lookup(records)[ref.series_id]
    except KeyError:
        raise DanglingRef(f"unknown series {ref.series_id!r}") from None
    return slice_window(rec.values, ref.offset, window_len, ref.series_id)


def slice_window(values: np.ndarray, offset: int, window_len: int, name="series") -> np.ndarray:
    T = values.shape[0]
    if T < window_len:
        if offset != 0:
            raise DanglingRef(f"{name}: padded window must start at 0, got {offset}")
        out = np.zeros((window_len, values.shape[1]))
        out[:T] = values
        return out
    if offset < 0 or offset + window_len > T:
        raise DanglingRef(f"{name}: window [{offset}, {offset + window_len}) outside length {T}")
    return values[offset:offset + window_len]


def materialize_batch(pool: WindowPool, indices, records) -> np.ndarray:
    """Stack the windows at pool positions ``indices`` into an (N, L, M) array."""
    lookup = _lookup(records)
    L = pool.window_len
    out = []
    for j in indices:
        sid = pool.series_ids[pool.series_index[j]]
        out.append(slice_window(lookup[sid].values, int(pool.offsets[j]), L, sid))
    return np.stack(out)
