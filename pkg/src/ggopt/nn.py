"""Minimal deterministic neural core with hand-written backward passes.

A model is a list of ``LayerSpec`` ending (optionally) in a loss kind. Layer
outputs at ``shard_points`` are boundary activations: they can be passed
through a ``boundary`` callable on the forward pass (quantization, a
simulated wire) and receive extra gradient on the backward pass. Backward
treats the boundary callable as identity (straight-through).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "LayerSpec",
    "Model",
    "ForwardRecord",
    "LOSS_KINDS",
    "build_model",
    "mlp_layers",
    "forward",
    "backward",
    "loss_softmax_xent",
    "loss_mse",
    "compute_loss",
    "attention_block",
    "sgd_step",
    "save_model",
    "load_model",
]

LOSS_KINDS = ("softmax_xent", "mse")
ELEMENTWISE = ("relu", "leaky_relu", "sigmoid")
PARAM_KINDS = ("dense", "attention")
IGNORE_LABEL = -1


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    d_in: int | None = None
    d_out: int | None = None
    slope: float | None = None

    def __post_init__(self):
        if self.kind not in PARAM_KINDS + ELEMENTWISE + LOSS_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        for name in ("d_in", "d_out"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be >= 1, got {v}")
        if self.kind == "leaky_relu":
            if self.slope is None or not 0 < self.slope < 1:
                raise ValueError(f"leaky_relu slope must be in (0, 1), got {self.slope}")
        if self.kind == "attention" and self.d_in is not None and self.d_out not in (None, self.d_in):
            raise ValueError("attention keeps its width: d_out must equal d_in")

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass
class Model:
    layers: list
    params: list  # per layer: list of arrays (empty for parameter-free layers)
    shard_points: tuple = ()

    def __post_init__(self):
        self.shard_points = tuple(int(p) for p in self.shard_points)
        L = len(self.layers)
        if any(b <= a for a, b in zip(self.shard_points, self.shard_points[1:])):
            raise ValueError(f"shard_points must be strictly increasing, got {self.shard_points}")
        if self.shard_points and not (0 <= self.shard_points[0] and self.shard_points[-1] < L):
            raise ValueError(f"shard_points must lie in [0, {L}), got {self.shard_points}")
        for i in self.shard_points:
            if self.layers[i].kind in LOSS_KINDS:
                raise ValueError(f"shard point {i} is a loss layer")

    @property
    def loss(self) -> str | None:
        if self.layers and self.layers[-1].kind in LOSS_KINDS:
            return self.layers[-1].kind
        return None

    @property
    def weights(self) -> list:
        return [w for p in self.params for w in p]

    def set_weights(self, weights: Sequence[np.ndarray]) -> None:
        it = iter(weights)
        self.params = [[next(it) for _ in p] for p in self.params]

    def copy(self) -> "Model":
        return Model(list(self.layers), [[w.copy() for w in p] for p in self.params], self.shard_points)


@dataclass
class ForwardRecord:
    output: np.ndarray
    boundary_activations: list
    cache: list = field(repr=False)


def mlp_layers(sizes: Sequence[int], activation: str = "relu", loss: str = "softmax_xent", slope: float | None = None):
    """Dense stack ``sizes[0] -> ... -> sizes[-1]`` with ``activation`` between layers."""
    layers = []
    for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
        layers.append(LayerSpec("dense", a, b))
        if i < len(sizes) - 2:
            layers.append(LayerSpec(activation, b, b, slope))
    if loss:
        layers.append(LayerSpec(loss))
    return layers


def build_model(layers: Sequence[LayerSpec], shard_points: Sequence[int] = ()) -> Model:
    """Resolve layer widths and allocate zero parameters (see gginit for initialization)."""
    resolved = []
    width = None
    for i, spec in enumerate(layers):
        if spec.kind == "dense":
            if spec.d_in is None or spec.d_out is None:
                raise DimensionError(f"dense layer {i} needs d_in and d_out")
            if width is not None and spec.d_in != width:
                raise DimensionError(f"dense layer {i} expects {spec.d_in} inputs, previous width is {width}")
            width = spec.d_out
            resolved.append(spec)
        elif spec.kind == "attention":
            dim = spec.d_in or width
            if dim is None:
                raise DimensionError(f"attention layer {i} needs a width")
            if width is not None and dim != width:
                raise DimensionError(f"attention layer {i} has width {dim}, previous width is {width}")
            width = dim
            resolved.append(LayerSpec("attention", dim, dim))
        else:
            if width is None and spec.d_in is None:
                raise DimensionError(f"layer {i} ({spec.kind}) has no known width")
            w = width if width is not None else spec.d_in
            if spec.d_in is not None and spec.d_in != w:
                raise DimensionError(f"layer {i} ({spec.kind}) width {spec.d_in} != {w}")
            if spec.kind in LOSS_KINDS and i != len(layers) - 1:
                raise ValueError("loss layer must be last")
            width = w
            resolved.append(LayerSpec(spec.kind, w, w, spec.slope))
    params = []
    for spec in resolved:
        if spec.kind == "dense":
            params.append([np.zeros((spec.d_in, spec.d_out)), np.zeros(spec.d_out)])
        elif spec.kind == "attention":
            params.append([np.zeros((spec.d_in, spec.d_in)) for _ in range(4)])
        else:
            params.append([])
    return Model(resolved, params, tuple(shard_points))


# -- layers -----------------------------------------------------------------

def _dense_fwd(x, params, spec):
    W, b = params
    if x.shape[-1] != W.shape[0]:
        raise DimensionError(f"dense expects last dim {W.shape[0]}, got {x.shape}")
    return x @ W + b, x


def _dense_bwd(dout, x, params, spec):
    W, _ = params
    x2 = x.reshape(-1, x.shape[-1])
    d2 = dout.reshape(-1, dout.shape[-1])
    return dout @ W.T, [x2.T @ d2, d2.sum(axis=0)]


def _softmax(s):
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def attention_block(x, params):
    """Single-head scaled dot-product self-attention with residual: softmax(QK^T/sqrt d) V Wo + x."""
    return _attention_fwd(np.asarray(x, dtype=np.float64), params, None)[0]


def _attention_fwd(x, params, spec):
    Wq, Wk, Wv, Wo = params
    if x.ndim != 3 or x.shape[-1] != Wq.shape[0]:
        raise DimensionError(f"attention expects (batch, seq, {Wq.shape[0]}), got {x.shape}")
    scale = 1.0 / math.sqrt(x.shape[-1])
    q, k, v = x @ Wq, x @ Wk, x @ Wv
    p = _softmax(q @ k.transpose(0, 2, 1) * scale)
    z = p @ v
    return z @ Wo + x, (x, q, k, v, p, z, scale)


def _attention_bwd(dout, cache, params, spec):
    Wq, Wk, Wv, Wo = params
    x, q, k, v, p, z, scale = cache
    flat = lambda a: a.reshape(-1, a.shape[-1])
    dWo = flat(z).T @ flat(dout)
    dz = dout @ Wo.T
    dp = dz @ v.transpose(0, 2, 1)
    dv = p.transpose(0, 2, 1) @ dz
    ds = p * (dp - np.sum(dp * p, axis=-1, keepdims=True)) * scale
    dq = ds @ k
    dk = ds.transpose(0, 2, 1) @ q
    dx = dout + dq @ Wq.T + dk @ Wk.T + dv @ Wv.T
    return dx, [flat(x).T @ flat(dq), flat(x).T @ flat(dk), flat(x).T @ flat(dv), dWo]


def _relu_fwd(x, params, spec):
    return np.maximum(x, 0.0), x > 0


def _relu_bwd(dout, mask, params, spec):
    return dout * mask, []


def _leaky_fwd(x, params, spec):
    return np.where(x > 0, x, spec.slope * x), x > 0


def _leaky_bwd(dout, mask, params, spec):
    return np.where(mask, dout, spec.slope * dout), []


def _sigmoid_fwd(x, params, spec):
    y = 0.5 * (1.0 + np.tanh(0.5 * x))
    return y, y


def _sigmoid_bwd(dout, y, params, spec):
    return dout * y * (1.0 - y), []


_LAYERS = {
    "dense": (_dense_fwd, _dense_bwd),
    "attention": (_attention_fwd, _attention_bwd),
    "relu": (_relu_fwd, _relu_bwd),
    "leaky_relu": (_leaky_fwd, _leaky_bwd),
    "sigmoid": (_sigmoid_fwd, _sigmoid_bwd),
}


def forward(model: Model, x, boundary: Callable | None = None) -> ForwardRecord:
    """Run all non-loss layers.

    ``boundary(i, a)`` is called with the i-th shard activation and returns the
    tensor fed to the next layer. ``boundary_activations`` holds the values
    before that call.
    """
    a = np.asarray(x, dtype=np.float64)
    cache = []
    acts = []
    shard_index = {p: i for i, p in enumerate(model.shard_points)}
    for li, (spec, params) in enumerate(zip(model.layers, model.params)):
        if spec.kind in LOSS_KINDS:
            break
        fwd, _ = _LAYERS[spec.kind]
        a, c = fwd(a, params, spec)
        cache.append(c)
        if li in shard_index:
            acts.append(a)
            if boundary is not None:
                a = boundary(shard_index[li], a)
                if a.shape != acts[-1].shape:
                    raise DimensionError("boundary transform changed the activation shape")
    return ForwardRecord(a, acts, cache)


def backward(model: Model, record: ForwardRecord, loss_grad, injections: Sequence | None = None) -> list:
    """Gradients of every weight tensor (flat, in ``model.weights`` order).

    ``injections[i]`` is added to the gradient arriving at shard activation i.
    """
    d = np.asarray(loss_grad, dtype=np.float64)
    if d.shape != record.output.shape:
        raise DimensionError(f"loss_grad shape {d.shape} != output shape {record.output.shape}")
    if injections is not None and len(injections) != len(model.shard_points):
        raise DimensionError(f"expected {len(model.shard_points)} injections, got {len(injections)}")
    shard_index = {p: i for i, p in enumerate(model.shard_points)}
    per_layer = [[] for _ in model.layers]
    for li in range(len(record.cache) - 1, -1, -1):
        spec, params = model.layers[li], model.params[li]
        if injections is not None and li in shard_index:
            inj = np.asarray(injections[shard_index[li]], dtype=np.float64)
            if inj.shape != d.shape:
                raise DimensionError(f"injection {shard_index[li]} shape {inj.shape} != {d.shape}")
            d = d + inj
        _, bwd = _LAYERS[spec.kind]
        d, grads = bwd(d, record.cache[li], params, spec)
        per_layer[li] = grads
    return [g for grads, p in zip(per_layer, model.params) for g in (grads or [np.zeros_like(w) for w in p])]


# -- losses -----------------------------------------------------------------

def loss_softmax_xent(logits, labels):
    """Mean cross-entropy over labelled positions; label -1 marks an ignored position."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.shape[:-1] != labels.shape:
        raise DimensionError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    C = logits.shape[-1]
    if np.any((labels < IGNORE_LABEL) | (labels >= C)):
        raise ValueError(f"labels must lie in [0, {C}) (or -1 to ignore)")
    valid = labels != IGNORE_LABEL
    count = int(valid.sum())
    if count == 0:
        raise ValueError("no labelled positions")
    s = logits - logits.max(axis=-1, keepdims=True)
    logp = s - np.log(np.exp(s).sum(axis=-1, keepdims=True))
    safe = np.where(valid, labels, 0)
    picked = np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    loss = -float(np.sum(picked[valid])) / count
    grad = np.exp(logp)
    np.put_along_axis(grad, safe[..., None], np.take_along_axis(grad, safe[..., None], axis=-1) - 1.0, axis=-1)
    grad *= valid[..., None] / count
    return loss, grad


def loss_mse(pred, target):
    """Batch mean of the per-sample squared error sum."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    n = pred.shape[0]
    return float(np.sum(diff * diff)) / n, 2.0 * diff / n


def compute_loss(kind: str, output, y):
    if kind == "softmax_xent":
        return loss_softmax_xent(output, y)
    if kind == "mse":
        return loss_mse(output, y)
    raise ValueError(f"unknown loss kind {kind!r}")


def sgd_step(weights, grads, eta: float) -> list:
    if len(weights) != len(grads):
        raise DimensionError("weights and grads differ in length")
    out = []
    for w, g in zip(weights, grads):
        if w.shape != g.shape:
            raise DimensionError(f"grad shape {g.shape} != weight shape {w.shape}")
        out.append(w - eta * g)
    return out


# -- checkpoints ------------------------------------------------------------
# One JSON header line, then each tensor as raw little-endian float64 in
# model.weights order.

def save_model(path, model: Model, seed: int | None = None, extra: dict | None = None) -> None:
    header = {
        "format": "ggopt-checkpoint-1",
        "layers": [s.to_dict() for s in model.layers],
        "shard_points": list(model.shard_points),
        "seed": seed,
        "tensors": [list(w.shape) for w in model.weights],
    }
    if extra:
        header["extra"] = extra
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for w in model.weights:
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())


def load_model(path) -> tuple:
    """Return ``(model, header)``."""
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl])
    if header.get("format") != "ggopt-checkpoint-1":
        raise ValueError(f"{path} is not a ggopt checkpoint")
    model = build_model([LayerSpec(**d) for d in header["layers"]], header["shard_points"])
    off = nl + 1
    weights = []
    for shape in header["tensors"]:
        size = math.prod(shape)
        weights.append(np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64))
        off += 8 * size
    if off != len(raw):
        raise ValueError(f"{path}: payload size does not match header")
    if [list(w.shape) for w in model.weights] != header["tensors"]:
        raise ValueError(f"{path}: tensor shapes do not match layers")
    model.set_weights(weights)
    return model, header
