"""Local window model: the scorer interface, a patch-MLP reference backbone and Adam.

Everything here works on batches of windows shaped (N, L, M) in float64 and
computes gradients by hand, so the whole path can be checked against finite
differences.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import aggregate
from .errors import CheckpointError, ConfigError, DimensionMismatch, NonFiniteGradient

NORM_EPS = 1e-8
LOG_FLOOR = 1e-12
_GELU_C = math.sqrt(2.0 / math.pi)

CHECKPOINT_MAGIC = b"SSSMODEL"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sI7I")


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x ** 3)))


def gelu_grad(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class LocalModel:
    """Contract for window scorers used by the training and inference loops.

    Subclasses keep their parameters in ``self.params`` (name -> array, in a
    fixed order) and implement ``forward_batch`` and ``backward``.
    """

    params: dict
    window_len: int
    channels: int
    n_classes: int

    def forward_batch(self, windows):
        """Return (probs of shape (N, K), cache) for windows of shape (N, L, M)."""
        raise NotImplementedError

    def backward(self, cache, dprobs) -> dict:
        """Gradients of sum(dprobs * probs) with respect to every parameter."""
        raise NotImplementedError

    def forward(self, window):
        probs, cache = self.forward_batch(np.asarray(window, dtype=np.float64)[None])
        return probs[0], cache

    def predict_proba(self, windows, chunk: int = 1024):
        windows = np.asarray(windows, dtype=np.float64)
        if len(windows) == 0:
            return np.zeros((0, self.n_classes))
        return np.concatenate(
            [self.forward_batch(windows[i:i + chunk])[0] for i in range(0, len(windows), chunk)])

    def apply_update(self, deltas: dict):
        for name, delta in deltas.items():
            self.params[name] += delta

    def copy_params(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}

    def load_params(self, params: dict):
        for k in self.params:
            self.params[k] = np.array(params[k], dtype=np.float64)


@dataclass(frozen=True)
class BackboneConfig:
    window_len: int
    channels: int = 1
    patch_len: int = 16
    patch_stride: int = 8
    d_model: int = 32
    hidden: int = 64
    n_classes: int = 2

    def __post_init__(self):
        if min(self.window_len, self.channels, self.patch_len, self.patch_stride,
               self.d_model, self.hidden) < 1:
            raise ConfigError(f"all backbone sizes must be positive: {self}")
        if self.n_classes < 2:
            raise ConfigError("need at least two classes")
        if self.patch_len > self.window_len:
            raise ConfigError(f"patch_len {self.patch_len} exceeds window_len {self.window_len}")

    @property
    def n_patches(self) -> int:
        return (self.window_len - self.patch_len) // self.patch_stride + 1


class PatchMlpBackbone(LocalModel):
    """Standardize, patch, embed, GELU, mean-pool, hidden GELU layer, softmax."""

    PARAM_ORDER = ("embed_w", "embed_b", "hidden_w", "hidden_b", "out_w", "out_b")

    def __init__(self, config: BackboneConfig, seed=None):
        self.config = config
        self.window_len = config.window_len
        self.channels = config.channels
        self.n_classes = config.n_classes
        c = config
        d_in = c.patch_len * c.channels
        shapes = {
            "embed_w": (c.d_model, d_in),
            "embed_b": (c.d_model,),
            "hidden_w": (c.hidden, c.d_model),
            "hidden_b": (c.hidden,),
            "out_w": (c.n_classes, c.hidden),
            "out_b": (c.n_classes,),
        }
        self.params = {k: np.zeros(shapes[k]) for k in self.PARAM_ORDER}
        if seed is not None:
            rng = np.random.default_rng(seed)
            for name in ("embed_w", "hidden_w", "out_w"):
                fan_out, fan_in = shapes[name]
                self.params[name] = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shapes[name])

    def _patches(self, windows):
        c = self.config
        mu = windows.mean(axis=1, keepdims=True)
        sd = windows.std(axis=1, keepdims=True)
        z = (windows - mu) / np.maximum(sd, NORM_EPS)
        view = np.lib.stride_tricks.sliding_window_view(z, c.patch_len, axis=1)[:, ::c.patch_stride]
        # (N, P, M, p) -> (N, P, p*M), time-major within each patch
        n, P = view.shape[:2]
        return view.transpose(0, 1, 3, 2).reshape(n, P, c.patch_len * c.channels)

    def forward_batch(self, windows):
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim != 3 or windows.shape[1:] != (self.window_len, self.channels):
            raise DimensionMismatch(
                f"expected windows of shape (N, {self.window_len}, {self.channels}), got {windows.shape}")
        p = self.params
        patches = self._patches(windows)
        emb = patches @ p["embed_w"].T + p["embed_b"]
        pooled = gelu(emb).mean(axis=1)
        pre_hidden = pooled @ p["hidden_w"].T + p["hidden_b"]
        hidden = gelu(pre_hidden)
        probs = softmax(hidden @ p["out_w"].T + p["out_b"])
        cache = (patches, emb, pooled, pre_hidden, hidden, probs)
        return probs, cache

    def backward(self, cache, dprobs) -> dict:
        patches, emb, pooled, pre_hidden, hidden, probs = cache
        p = self.params
        dlogits = probs * (dprobs - np.sum(dprobs * probs, axis=1, keepdims=True))
        grads = {"out_w": dlogits.T @ hidden, "out_b": dlogits.sum(axis=0)}
        dpre = (dlogits @ p["out_w"]) * gelu_grad(pre_hidden)
        grads["hidden_w"] = dpre.T @ pooled
        grads["hidden_b"] = dpre.sum(axis=0)
        dpooled = dpre @ p["hidden_w"]
        demb = (dpooled[:, None, :] / emb.shape[1]) * gelu_grad(emb)
        grads["embed_w"] = np.einsum("npd,npk->dk", demb, patches)
        grads["embed_b"] = demb.sum(axis=(0, 1))
        return {k: grads[k] for k in self.PARAM_ORDER}

    def save(self, path, sidecar: dict | None = None):
        """Binary checkpoint: versioned header, then little-endian float64 blocks."""
        c = self.config
        path = Path(path)
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, c.window_len, c.channels,
                                  c.patch_len, c.patch_stride, c.d_model, c.hidden, c.n_classes))
            for name in self.PARAM_ORDER:
                fh.write(self.params[name].astype("<f8").tobytes())
        meta = {"format_version": CHECKPOINT_VERSION, "backbone": asdict(c)}
        meta.update(sidecar or {})
        sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        """Return (model, sidecar dict)."""
        path = Path(path)
        blob = path.read_bytes()
        if len(blob) < _HEADER.size:
            raise CheckpointError(f"{path}: truncated header")
        magic, version, *dims = _HEADER.unpack_from(blob)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a model checkpoint")
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        model = cls(BackboneConfig(*dims))
        pos = _HEADER.size
        for name in cls.PARAM_ORDER:
            arr = model.params[name]
            nbytes = arr.size * 8
            if pos + nbytes > len(blob):
                raise CheckpointError(f"{path}: truncated block {name}")
            model.params[name] = np.frombuffer(blob, dtype="<f8", count=arr.size, offset=pos) \
                .reshape(arr.shape).astype(np.float64)
            pos += nbytes
        if pos != len(blob):
            raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes")
        sc = sidecar_path(path)
        meta = json.loads(sc.read_text()) if sc.exists() else {}
        return model, meta


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def loss_and_grad_series(model: LocalModel, windows, series_keys, labels, with_grad: bool = True):
    """Cross-entropy of per-series mean-aggregated window probabilities.

    ``series_keys[b]`` names the series window ``b`` came from and
    ``labels[key]`` its class. The loss is averaged over the series present in
    the batch. Returns ``(loss, grads)``; ``grads`` is None if ``with_grad`` is False.
    """
    probs, cache = model.forward_batch(windows)
    keys = np.asarray(series_keys)
    uniq, inverse = np.unique(keys, return_inverse=True)
    n_series = len(uniq)
    dprobs = np.zeros_like(probs)
    losses = np.empty(n_series)
    for g, key in enumerate(uniq):
        members = np.flatnonzero(inverse == g)
        y = int(labels[key])
        agg = aggregate(probs[members])
        p_true = max(agg[y], LOG_FLOOR)
        losses[g] = -math.log(p_true)
        dprobs[members, y] = -1.0 / (n_series * len(members) * p_true)
    loss = float(losses.mean())
    if not with_grad:
        return loss, None
    return loss, model.backward(cache, dprobs)


@dataclass
class AdamConfig:
    lr: float = 1e-4
    final_lr_ratio: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    epochs: int = 50


def cosine_lr(epoch: int, lr0: float, total_epochs: int, final_ratio: float = 0.01) -> float:
    """Single-cycle cosine from lr0 at epoch 0 to lr0 * final_ratio at the last epoch."""
    lr_min = lr0 * final_ratio
    if total_epochs <= 1:
        return lr0
    frac = min(max(epoch, 0), total_epochs - 1) / (total_epochs - 1)
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * frac))


class AdamState:
    """Adam with bias correction and decoupled weight decay."""

    def __init__(self, params: dict, config: AdamConfig | None = None):
        self.config = config or AdamConfig()
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step_count = 0

    def lr_at(self, epoch: int) -> float:
        c = self.config
        return cosine_lr(epoch, c.lr, c.epochs, c.final_lr_ratio)

    def step(self, model: LocalModel, grads: dict, lr: float | None = None):
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient in {name}")
        c = self.config
        lr = c.lr if lr is None else lr
        self.step_count += 1
        bc1 = 1.0 - c.beta1 ** self.step_count
        bc2 = 1.0 - c.beta2 ** self.step_count
        deltas = {}
        for name, g in grads.items():
            m, v = self.m[name], self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + c.eps)
            deltas[name] = -lr * (update + c.weight_decay * model.params[name])
        model.apply_update(deltas)


def adam_step(state: AdamState, model: LocalModel, grads: dict, lr: float | None = None):
    state.step(model, grads, lr)
    return model, state
