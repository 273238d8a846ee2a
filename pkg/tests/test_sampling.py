from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import enumerate_offsets
from sss.core import SeriesRecord
from sss.errors import ConfigError, DanglingRef, EmptyDataset, EpochExhausted
from sss.sampling import (
    EpochSampler,
    WindowRef,
    WindowSpec,
    build_pool,
    materialize,
    materialize_batch,
    window_count,
)


def _series(sid, T, M=1):
    return SeriesRecord(sid, np.arange(T * M, dtype=float).reshape(T, M), 0)


class TestPool:
    def test_worked_offsets(self):
        pool = build_pool([_series("a", 100)], WindowSpec(24, 12))
        assert enumerate_offsets(100, 24, 12) == [0, 12, 24, 36, 48, 60, 72]
        assert [r.offset for r in pool.refs] == enumerate_offsets(100, 24, 12)
        assert pool.per_series_counts == {"a": 7}

    def test_exact_fit(self):
        pool = build_pool([_series("a", 24)], WindowSpec(24, 12))
        assert pool.refs == [WindowRef("a", 0)]

    def test_two_series_probabilities(self):
        pool = build_pool([_series("a", 100), _series("b", 300)], WindowSpec(24, 12))
        assert pool.per_series_counts == {"a": 7, "b": 24}
        assert pool.series_probabilities()["a"] == pytest.approx(7 / 31)
        assert 7 / 31 == pytest.approx(0.2258, abs=1e-4)

    def test_short_series_padded_window(self):
        pool = build_pool([_series("a", 10)], WindowSpec(24, 12))
        assert pool.refs == [WindowRef("a", 0)]

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            build_pool([], WindowSpec(4, 2))

    def test_bad_spec(self):
        with pytest.raises(ConfigError):
            WindowSpec(4, 5)

    @given(st.integers(1, 500), st.integers(1, 64), st.data())
    def test_count_formula(self, T, L, data):
        S = data.draw(st.integers(1, L))
        if T >= L:
            assert len(enumerate_offsets(T, L, S)) == (T - L) // S + 1 == window_count(T, L, S)
        else:
            assert window_count(T, L, S) == 1


def _pool(counts, L=4):
    return build_pool([_series(f"s{i}", L + (c - 1) * L) for i, c in enumerate(counts)], WindowSpec(L, L))


class TestSampler:
    def test_three_full_batches(self):
        sizes = [len(b) for b in EpochSampler(_pool([6]), 2, seed=0)]
        assert sizes == [2, 2, 2]

    def test_partial_final_batch(self):
        sizes = [len(b) for b in EpochSampler(_pool([6]), 4, seed=0)]
        assert sizes == [4, 2]

    def test_exhausted(self):
        s = EpochSampler(_pool([3]), 5, seed=0)
        assert len(s.next_batch()) == 3
        with pytest.raises(EpochExhausted):
            s.next_batch()

    def test_exactly_once(self):
        pool = _pool([5, 9, 1, 13])
        sampler, refs = EpochSampler(pool, 3, 1), []
        while (batch := _next(sampler)) is not None:
            refs += batch
        assert Counter(refs) == Counter(pool.refs)

    def test_deterministic(self):
        pool = _pool([5, 9, 13])
        a = [b.tolist() for b in EpochSampler(pool, 4, seed=12)]
        b = [b.tolist() for b in EpochSampler(pool, 4, seed=12)]
        c = [b.tolist() for b in EpochSampler(pool, 4, seed=13)]
        assert a == b and a != c

    def test_batch_mean_matches_binomial(self):
        # small Monte Carlo check of E[N_1] = B * p_1 on a pool large enough for B
        pool = _pool([70, 240])
        B, trials = 100, 400
        counts = [np.sum(pool.series_index[EpochSampler(pool, B, seed=t).next_indices()] == 0)
                  for t in range(trials)]
        p = 70 / 310
        se = np.sqrt(B * p * (1 - p) / trials)
        assert abs(np.mean(counts) - B * p) < 3 * se


def _next(sampler):
    try:
        return sampler.next_batch()
    except EpochExhausted:
        return None


class TestMaterialize:
    def test_slice(self):
        recs = [_series("a", 100)]
        np.testing.assert_array_equal(materialize(WindowRef("a", 12), recs, 24)[:, 0], np.arange(12, 36))

    def test_pad(self):
        w = materialize(WindowRef("a", 0), [_series("a", 10)], 24)
        np.testing.assert_array_equal(w[:, 0], np.r_[np.arange(10), np.zeros(14)])

    def test_out_of_range(self):
        with pytest.raises(DanglingRef):
            materialize(WindowRef("a", 90), [_series("a", 100)], 24)

    def test_unknown_series(self):
        with pytest.raises(DanglingRef):
            materialize(WindowRef("zz", 0), [_series("a", 100)], 24)

    def test_batch_multichannel(self):
        recs = [_series("a", 40, M=2), _series("b", 20, M=2)]
        pool = build_pool(recs, WindowSpec(8, 8))
        X = materialize_batch(pool, np.arange(len(pool)), recs)
        assert X.shape == (len(pool), 8, 2)
        np.testing.assert_array_equal(X[1], recs[0].values[8:16])
