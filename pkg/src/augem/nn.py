"""Minimal differentiable classifier stack on plain numpy arrays.

Three model families, all trained by manual reverse-mode accumulation:
softmax regression, a ReLU MLP, and a small two-conv network (im2col
convolutions with average pooling).  Everything runs in float64 so the
finite-difference gradient oracle holds to tight tolerances.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

CHECKPOINT_MAGIC = b"LANN"
CHECKPOINT_VERSION = 1

KIND_SOFTMAX = "softmax"
KIND_MLP = "mlp"
KIND_CONVNET = "convnet"
_KINDS = (KIND_SOFTMAX, KIND_MLP, KIND_CONVNET)

_CONV_KSIZE = 3


class CheckpointError(ValueError):
    """Raised when a parameter checkpoint cannot be parsed."""


@dataclass(frozen=True)
class ModelSpec:
    """Architecture descriptor: model family, input geometry, widths."""

    kind: str
    input_shape: tuple
    n_classes: int
    hidden: tuple = ()
    conv_channels: tuple = (8, 16)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if len(self.input_shape) != 3:
            raise ValueError("input_shape must be (H, W, C)")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.kind == KIND_SOFTMAX and self.hidden:
            raise ValueError("softmax regression takes no hidden layers")
        if self.kind == KIND_CONVNET and len(self.conv_channels) != 2:
            raise ValueError("convnet uses exactly two conv layers")

    @property
    def input_dim(self) -> int:
        h, w, c = self.input_shape
        return h * w * c


@dataclass
class ModelParams:
    """Weights and biases, one ``(W, b)`` pair per layer, plus the spec."""

    spec: ModelSpec
    layers: list


def softmax_spec(input_shape, n_classes: int) -> ModelSpec:
    return ModelSpec(KIND_SOFTMAX, tuple(input_shape), n_classes)


def mlp_spec(input_shape, n_classes: int, hidden=(128, 128)) -> ModelSpec:
    return ModelSpec(KIND_MLP, tuple(input_shape), n_classes,
                     hidden=tuple(hidden))


def conv_spec(input_shape, n_classes: int, channels=(8, 16)) -> ModelSpec:
    return ModelSpec(KIND_CONVNET, tuple(input_shape), n_classes,
                     conv_channels=tuple(channels))


def _conv_geometry(spec: ModelSpec):
    """Spatial sizes after each conv/pool stage of the convnet."""
    h, w, c = spec.input_shape
    f1, f2 = spec.conv_channels
    h1, w1 = h - _CONV_KSIZE + 1, w - _CONV_KSIZE + 1
    hp1, wp1 = h1 // 2, w1 // 2
    h2, w2 = hp1 - _CONV_KSIZE + 1, wp1 - _CONV_KSIZE + 1
    hp2, wp2 = h2 // 2, w2 // 2
    if min(h1, w1, h2, w2, hp2, wp2) < 1:
        raise ValueError(f"input {spec.input_shape} too small for the convnet")
    return (h1, w1, hp1, wp1, h2, w2, hp2, wp2, f1, f2)


def _layer_dims(spec: ModelSpec):
    """(fan_in, fan_out) per layer in forward order."""
    if spec.kind == KIND_SOFTMAX:
        return [(spec.input_dim, spec.n_classes)]
    if spec.kind == KIND_MLP:
        widths = [spec.input_dim, *spec.hidden, spec.n_classes]
        return list(zip(widths[:-1], widths[1:]))
    _, _, c = spec.input_shape
    (_, _, _, _, _, _, hp2, wp2, f1, f2) = _conv_geometry(spec)
    k2 = _CONV_KSIZE * _CONV_KSIZE
    return [(k2 * c, f1), (k2 * f1, f2), (hp2 * wp2 * f2, spec.n_classes)]


def init_params(spec: ModelSpec, rng: np.random.Generator) -> ModelParams:
    """He-scaled normal weights, zero biases."""
    layers = []
    for fan_in, fan_out in _layer_dims(spec):
        w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        layers.append((w, np.zeros(fan_out)))
    return ModelParams(spec=spec, layers=layers)


def _as_batch(spec: ModelSpec, images) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64)
    if spec.kind == KIND_CONVNET:
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[1:] != spec.input_shape:
            raise ValueError(
                f"expected images of shape {spec.input_shape}, got {x.shape}")
        return x
    if x.ndim > 2:
        x = x.reshape(x.shape[0], -1)
    elif x.ndim == 1:
        x = x[None]
    if x.shape[1] != spec.input_dim:
        raise ValueError(
            f"expected {spec.input_dim} features, got {x.shape[1]}")
    return x


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    n, h, w, c = x.shape
    oh, ow = h - k + 1, w - k + 1
    cols = np.empty((n, oh, ow, k * k * c))
    pos = 0
    for di in range(k):
        for dj in range(k):
            cols[..., pos:pos + c] = x[:, di:di + oh, dj:dj + ow, :]
            pos += c
    return cols


def _col2im(dcols: np.ndarray, shape, k: int) -> np.ndarray:
    n, h, w, c = shape
    oh, ow = h - k + 1, w - k + 1
    dx = np.zeros(shape)
    pos = 0
    for di in range(k):
        for dj in range(k):
            dx[:, di:di + oh, dj:dj + ow, :] += dcols[..., pos:pos + c]
            pos += c
    return dx


def _avgpool2(x: np.ndarray):
    n, h, w, c = x.shape
    hp, wp = h // 2, w // 2
    crop = x[:, :2 * hp, :2 * wp, :]
    pooled = crop.reshape(n, hp, 2, wp, 2, c).mean(axis=(2, 4))
    return pooled, (n, h, w, c)


def _avgpool2_backward(dpooled: np.ndarray, shape) -> np.ndarray:
    n, h, w, c = shape
    hp, wp = h // 2, w // 2
    dx = np.zeros(shape)
    spread = np.repeat(np.repeat(dpooled, 2, axis=1), 2, axis=2) / 4.0
    dx[:, :2 * hp, :2 * wp, :] = spread
    return dx


def _forward(params: ModelParams, x: np.ndarray):
    """Logits plus the cache needed for the backward sweep."""
    spec = params.spec
    cache = {"x": x}
    if spec.kind != KIND_CONVNET:
        acts = [x]
        for i, (w, b) in enumerate(params.layers):
            z = acts[-1] @ w + b
            if i < len(params.layers) - 1:
                z = np.maximum(z, 0.0)
            acts.append(z)
        cache["acts"] = acts
        return acts[-1], cache

    (w1, b1), (w2, b2), (w3, b3) = params.layers
    cols1 = _im2col(x, _CONV_KSIZE)
    z1 = cols1 @ w1 + b1
    a1 = np.maximum(z1, 0.0)
    p1, p1_shape = _avgpool2(a1)
    cols2 = _im2col(p1, _CONV_KSIZE)
    z2 = cols2 @ w2 + b2
    a2 = np.maximum(z2, 0.0)
    p2, p2_shape = _avgpool2(a2)
    flat = p2.reshape(p2.shape[0], -1)
    logits = flat @ w3 + b3
    cache.update(cols1=cols1, z1=z1, p1=p1, p1_shape=p1_shape,
                 cols2=cols2, z2=z2, p2_shape=p2_shape,
                 p2=p2, flat=flat)
    return logits, cache


def _backward(params: ModelParams, cache, dlogits: np.ndarray):
    """Gradients w.r.t. every layer given d(loss)/d(logits)."""
    spec = params.spec
    grads = [None] * len(params.layers)
    if spec.kind != KIND_CONVNET:
        acts = cache["acts"]
        delta = dlogits
        for i in range(len(params.layers) - 1, -1, -1):
            w, _ = params.layers[i]
            grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
            if i > 0:
                delta = (delta @ w.T) * (acts[i] > 0.0)
        return grads

    (w1, _), (w2, _), (w3, _) = params.layers
    flat = cache["flat"]
    grads[2] = (flat.T @ dlogits, dlogits.sum(axis=0))
    dflat = dlogits @ w3.T
    dp2 = dflat.reshape(cache["p2"].shape)
    da2 = _avgpool2_backward(dp2, cache["p2_shape"])
    dz2 = da2 * (cache["z2"] > 0.0)
    cols2 = cache["cols2"]
    grads[1] = (cols2.reshape(-1, cols2.shape[-1]).T
                @ dz2.reshape(-1, dz2.shape[-1]),
                dz2.sum(axis=(0, 1, 2)))
    dcols2 = dz2 @ w2.T
    dp1 = _col2im(dcols2, cache["p1"].shape, _CONV_KSIZE)
    da1 = _avgpool2_backward(dp1, cache["p1_shape"])
    dz1 = da1 * (cache["z1"] > 0.0)
    cols1 = cache["cols1"]
    grads[0] = (cols1.reshape(-1, cols1.shape[-1]).T
                @ dz1.reshape(-1, dz1.shape[-1]),
                dz1.sum(axis=(0, 1, 2)))
    return grads


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def predict_log_proba(params: ModelParams, images) -> np.ndarray:
    """Per-sample log-probability rows (each row's exp sums to one)."""
    x = _as_batch(params.spec, images)
    logits, _ = _forward(params, x)
    return _log_softmax(logits)


def predict_classes(params: ModelParams, images) -> np.ndarray:
    return np.argmax(predict_log_proba(params, images), axis=1)


def accuracy(params: ModelParams, images, labels) -> float:
    pred = predict_classes(params, images)
    return float(np.mean(pred == np.asarray(labels)))


def weighted_loss_and_grad(params: ModelParams, view_images, view_labels,
                           weights):
    """Weighted soft-label cross-entropy over per-sample view fans.

    ``view_images`` holds K augmented views per sample, ``view_labels`` the
    matching soft labels, ``weights`` a frozen (B, K) weighting with rows
    summing to one.  Returns the scalar

        -(1/B) sum_b sum_k weights[b,k] * sum_c label_c * log p_c

    and its gradient via reverse accumulation.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim == 1:
        w = w[:, None]
    b, k = w.shape
    labels = np.asarray(view_labels, dtype=np.float64)
    if labels.ndim == 2:
        labels = labels[:, None, :]
    if labels.shape[:2] != (b, k):
        raise ValueError(
            f"labels shaped {labels.shape} do not match weights {w.shape}")
    views = np.asarray(view_images, dtype=np.float64)
    if views.shape[:2] != (b, k):
        if k == 1 and views.shape[0] == b:
            views = views[:, None]
        else:
            raise ValueError(
                f"views shaped {views.shape} do not match weights {w.shape}")

    flat_views = views.reshape(b * k, *views.shape[2:])
    x = _as_batch(params.spec, flat_views)
    logits, cache = _forward(params, x)
    logp = _log_softmax(logits)
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite activations in forward pass")

    flat_labels = labels.reshape(b * k, -1)
    row_w = w.reshape(b * k) / b
    per_view_ce = -(flat_labels * logp).sum(axis=1)
    loss = float((row_w * per_view_ce).sum())

    proba = np.exp(logp)
    label_mass = flat_labels.sum(axis=1, keepdims=True)
    dlogits = row_w[:, None] * (proba * label_mass - flat_labels)
    grads = _backward(params, cache, dlogits)
    return loss, grads


def sgd_update(params: ModelParams, grads, lr: float,
               weight_decay: float = 0.0) -> ModelParams:
    """Plain SGD step: theta <- theta - lr * (grad + weight_decay * theta)."""
    if lr < 0.0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    layers = []
    for (w, bias), (gw, gb) in zip(params.layers, grads):
        layers.append((w - lr * (gw + weight_decay * w),
                       bias - lr * (gb + weight_decay * bias)))
    return ModelParams(spec=params.spec, layers=layers)


def sgd_momentum_update(params: ModelParams, grads, lr: float,
                        weight_decay: float, momentum: float, velocity):
    """Heavy-ball variant used when the run config enables momentum.

    ``velocity`` is the previous step's buffer (None on the first call);
    returns ``(new_params, new_velocity)``.
    """
    if velocity is None:
        velocity = [(np.zeros_like(w), np.zeros_like(b))
                    for w, b in params.layers]
    layers, new_velocity = [], []
    for (w, bias), (gw, gb), (vw, vb) in zip(params.layers, grads, velocity):
        vw = momentum * vw + (gw + weight_decay * w)
        vb = momentum * vb + (gb + weight_decay * bias)
        layers.append((w - lr * vw, bias - lr * vb))
        new_velocity.append((vw, vb))
    return ModelParams(spec=params.spec, layers=layers), new_velocity


@dataclass(frozen=True)
class LrSchedule:
    lr0: float
    total_steps: int

    def __post_init__(self):
        if self.lr0 <= 0.0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")


def cosine_lr(step: int, schedule: LrSchedule) -> float:
    """Single half-cosine anneal from lr0 down to zero."""
    if not 0 <= step <= schedule.total_steps:
        raise ValueError(
            f"step {step} outside [0, {schedule.total_steps}]")
    frac = step / schedule.total_steps
    return schedule.lr0 * 0.5 * (1.0 + math.cos(math.pi * frac))


def save_checkpoint(params: ModelParams, path) -> None:
    """Flat binary dump: magic, version, layer count, dims, float64 data."""
    parts = [CHECKPOINT_MAGIC,
             struct.pack("<II", CHECKPOINT_VERSION, len(params.layers))]
    for w, bias in params.layers:
        parts.append(struct.pack("<III", w.shape[0], w.shape[1], bias.shape[0]))
    for w, bias in params.layers:
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(bias, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path, spec: ModelSpec) -> ModelParams:
    """Read a checkpoint back; dims must match the given spec."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {blob[:4]!r}")
    if len(blob) < 12:
        raise CheckpointError("truncated checkpoint header")
    version, n_layers = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    offset = 12
    dims = []
    for _ in range(n_layers):
        if offset + 12 > len(blob):
            raise CheckpointError("truncated layer dimension table")
        dims.append(struct.unpack_from("<III", blob, offset))
        offset += 12
    expected = _layer_dims(spec)
    if len(dims) != len(expected):
        raise CheckpointError(
            f"checkpoint has {len(dims)} layers, spec wants {len(expected)}")
    for (rows, cols, blen), (fan_in, fan_out) in zip(dims, expected):
        if (rows, cols, blen) != (fan_in, fan_out, fan_out):
            raise CheckpointError(
                f"layer dims {(rows, cols, blen)} do not match spec "
                f"{(fan_in, fan_out, fan_out)}")
    layers = []
    for rows, cols, blen in dims:
        need = 8 * (rows * cols + blen)
        if offset + need > len(blob):
            raise CheckpointError("truncated checkpoint payload")
        w = np.frombuffer(blob, dtype="<f8", count=rows * cols,
                          offset=offset).reshape(rows, cols).copy()
        offset += 8 * rows * cols
        bias = np.frombuffer(blob, dtype="<f8", count=blen,
                             offset=offset).copy()
        offset += 8 * blen
        layers.append((w, bias))
    if offset != len(blob):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return ModelParams(spec=spec, layers=layers)
