import math

import numpy as np
import pytest

from oracles import central_differences, max_relative_error
from sss.backbone import (
    AdamConfig,
    AdamState,
    BackboneConfig,
    PatchMlpBackbone,
    adam_step,
    cosine_lr,
    gelu,
    gelu_grad,
    loss_and_grad_series,
    softmax,
)
from sss.core import aggregate
from sss.errors import DimensionMismatch, NonFiniteGradient


def tiny_model(seed=0, L=24, M=1, p=6, s=3, d=5, h=7, K=2):
    return PatchMlpBackbone(BackboneConfig(L, M, p, s, d, h, K), seed=seed)


def random_batch(rng, model, n_windows=6, n_series=3):
    X = rng.normal(size=(n_windows, model.window_len, model.channels))
    keys = np.arange(n_windows) % n_series
    labels = rng.integers(0, model.n_classes, size=n_series)
    return X, keys, labels


class TestForward:
    def test_zero_params_uniform(self):
        model = PatchMlpBackbone(BackboneConfig(32, 2, n_classes=3))
        probs, _ = model.forward(np.random.default_rng(0).normal(size=(32, 2)))
        np.testing.assert_allclose(probs, [1 / 3] * 3, atol=1e-15)

    def test_deterministic(self):
        x = np.random.default_rng(1).normal(size=(64, 1))
        a, _ = PatchMlpBackbone(BackboneConfig(64), seed=5).forward(x)
        b, _ = PatchMlpBackbone(BackboneConfig(64), seed=5).forward(x)
        np.testing.assert_array_equal(a, b)

    def test_simplex(self):
        rng = np.random.default_rng(2)
        model = PatchMlpBackbone(BackboneConfig(64, 3, n_classes=4), seed=1)
        probs = model.predict_proba(rng.normal(size=(50, 64, 3)) * 10)
        assert np.all(probs >= 0) and np.abs(probs.sum(axis=1) - 1).max() < 1e-9

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            tiny_model().forward(np.zeros((25, 1)))

    def test_constant_window_is_finite(self):
        probs, _ = tiny_model(seed=3).forward(np.full((24, 1), 7.0))
        assert np.all(np.isfinite(probs))

    def test_patch_count(self):
        assert BackboneConfig(256).n_patches == (256 - 16) // 8 + 1 == 31

    def test_softmax_extreme_logits(self):
        p = softmax(np.array([[1000.0, -1000.0, 0.0]]))
        assert np.all(np.isfinite(p)) and p.sum() == pytest.approx(1.0)

    def test_gelu_grad_matches_differences(self):
        x = np.linspace(-5, 5, 101)
        numeric = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6
        np.testing.assert_allclose(gelu_grad(x), numeric, atol=1e-8)


class TestLoss:
    def _fixed(self, outputs):
        class Fixed(PatchMlpBackbone):
            def forward_batch(self, windows):
                return np.asarray(outputs, float), None
        return Fixed(BackboneConfig(8, 1, 4, 4, 2, 2, 2))

    def test_single_window_half(self):
        loss, _ = loss_and_grad_series(self._fixed([[0.5, 0.5]]), np.zeros((1, 8, 1)), [0], {0: 1},
                                       with_grad=False)
        assert loss == pytest.approx(math.log(2))

    def test_two_windows_aggregate(self):
        loss, _ = loss_and_grad_series(self._fixed([[1.0, 0.0], [0.0, 1.0]]), np.zeros((2, 8, 1)),
                                       ["a", "a"], {"a": 0}, with_grad=False)
        assert loss == pytest.approx(math.log(2))


class TestGradients:
    @pytest.mark.parametrize("cfg", [
        dict(L=24, M=1, p=6, s=3, d=5, h=7, K=2),
        dict(L=32, M=2, p=8, s=8, d=8, h=8, K=3),
        dict(L=16, M=3, p=4, s=2, d=3, h=4, K=2),
    ])
    def test_backprop_matches_finite_differences(self, cfg):
        rng = np.random.default_rng(sum(cfg.values()))
        model = tiny_model(seed=7, **cfg)
        for name in model.params:
            model.params[name] += 0.1 * rng.normal(size=model.params[name].shape)
        X, keys, labels = random_batch(rng, model, n_windows=7, n_series=3)
        _, grads = loss_and_grad_series(model, X, keys, labels)
        numeric = central_differences(
            lambda: loss_and_grad_series(model, X, keys, labels, with_grad=False)[0], model.params)
        assert max_relative_error(grads, numeric) < 1e-4

    def test_aggregated_gradient_oracle(self):
        # loss recomputed by an explicit per-series aggregation over all windows jointly
        rng = np.random.default_rng(4)
        model = tiny_model(seed=2)
        X, keys, labels = random_batch(rng, model, n_windows=5, n_series=2)

        def joint_loss():
            probs, _ = model.forward_batch(X)
            per_series = [-math.log(aggregate(probs[keys == k])[labels[k]]) for k in np.unique(keys)]
            return float(np.mean(per_series))

        loss, grads = loss_and_grad_series(model, X, keys, labels)
        assert loss == pytest.approx(joint_loss(), abs=1e-12)
        assert max_relative_error(grads, central_differences(joint_loss, model.params)) < 1e-4

    def test_window_order_independent(self):
        rng = np.random.default_rng(8)
        model = tiny_model(seed=1)
        X, keys, labels = random_batch(rng, model, n_windows=9, n_series=4)
        perm = rng.permutation(9)
        _, g1 = loss_and_grad_series(model, X, keys, labels)
        _, g2 = loss_and_grad_series(model, X[perm], keys[perm], labels)
        for k in g1:
            np.testing.assert_allclose(g1[k], g2[k], rtol=0, atol=1e-10)


class TestAdam:
    def _scalar_model(self):
        model = tiny_model()
        model.params = {"w": np.array([0.0])}
        return model

    def test_first_step(self):
        model = self._scalar_model()
        state = AdamState(model.params, AdamConfig(lr=0.1, weight_decay=0.0))
        adam_step(state, model, {"w": np.array([1.0])})
        # bias-corrected m = v = 1, so the step is lr / (1 + eps)
        assert model.params["w"][0] == pytest.approx(-0.1, rel=1e-7)

    def test_zero_grad_only_decay(self):
        model = self._scalar_model()
        model.params["w"][:] = 2.0
        state = AdamState(model.params, AdamConfig(lr=0.1, weight_decay=0.01))
        state.step(model, {"w": np.array([0.0])})
        assert model.params["w"][0] == pytest.approx(2.0 * (1 - 0.1 * 0.01))

    def test_zero_grad_no_decay_unchanged(self):
        model = tiny_model(seed=1)
        before = model.copy_params()
        state = AdamState(model.params, AdamConfig(weight_decay=0.0))
        state.step(model, {k: np.zeros_like(v) for k, v in model.params.items()})
        for k in before:
            np.testing.assert_array_equal(model.params[k], before[k])

    def test_nonfinite(self):
        model = self._scalar_model()
        state = AdamState(model.params)
        with pytest.raises(NonFiniteGradient):
            state.step(model, {"w": np.array([np.nan])})
        assert model.params["w"][0] == 0.0 and state.step_count == 0

    def test_cosine_schedule(self):
        assert cosine_lr(0, 1e-4, 50) == 1e-4
        assert cosine_lr(49, 1e-4, 50) == pytest.approx(1e-6, rel=0.01)
        lrs = [cosine_lr(e, 1e-4, 50) for e in range(50)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))

    def test_training_reduces_loss(self):
        rng = np.random.default_rng(0)
        model = tiny_model(seed=0)
        X, keys, labels = random_batch(rng, model, n_windows=8, n_series=4)
        state = AdamState(model.params, AdamConfig(lr=1e-2, weight_decay=0.0))
        first, _ = loss_and_grad_series(model, X, keys, labels, with_grad=False)
        for _ in range(100):
            _, g = loss_and_grad_series(model, X, keys, labels)
            state.step(model, g)
        last, _ = loss_and_grad_series(model, X, keys, labels, with_grad=False)
        assert last < 0.5 * first


class TestCheckpoint:
    def test_roundtrip_bit_identical(self, tmp_path):
        model = PatchMlpBackbone(BackboneConfig(40, 2, 8, 4, 6, 5, 3), seed=9)
        x = np.random.default_rng(0).normal(size=(5, 40, 2))
        model.save(tmp_path / "m.bin", {"extra": 1})
        loaded, meta = PatchMlpBackbone.load(tmp_path / "m.bin")
        np.testing.assert_array_equal(model.predict_proba(x), loaded.predict_proba(x))
        assert meta["extra"] == 1 and meta["backbone"]["window_len"] == 40

    def test_header_layout(self, tmp_path):
        model = PatchMlpBackbone(BackboneConfig(40, 2, 8, 4, 6, 5, 3), seed=9)
        model.save(tmp_path / "m.bin")
        blob = (tmp_path / "m.bin").read_bytes()
        assert blob[:8] == b"SSSMODEL"
        dims = np.frombuffer(blob[8:40], dtype="<u4")
        assert dims.tolist() == [1, 40, 2, 8, 4, 6, 5, 3]
        first = np.frombuffer(blob[40:48], dtype="<f8")[0]
        assert first == model.params["embed_w"].ravel()[0]
        n_params = sum(v.size for v in model.params.values())
        assert len(blob) == 40 + 8 * n_params
