"""A small ReLU MLP with hand-written backprop, momentum SGD and a mean teacher."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

PROB_FLOOR = 1e-12
CHECKPOINT_VERSION = 1

Layer = Tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class ModelParams:
    """Layer list of ``(weight[out, in], bias[out])``; ReLU between layers, identity on the last."""

    layers: Tuple[Layer, ...]

    @property
    def dims(self) -> List[int]:
        return [self.layers[0][0].shape[1]] + [w.shape[0] for w, _ in self.layers]

    def map(self, fn) -> "ModelParams":
        return ModelParams(tuple((fn(w), fn(b)) for w, b in self.layers))

    def zip_map(self, other: "ModelParams", fn) -> "ModelParams":
        return ModelParams(
            tuple((fn(w, ow), fn(b, ob)) for (w, b), (ow, ob) in zip(self.layers, other.layers))
        )

    def to_vector(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in self.layers])

    def from_vector(self, vec: np.ndarray) -> "ModelParams":
        out, pos = [], 0
        for w, b in self.layers:
            nw = vec[pos : pos + w.size].reshape(w.shape)
            pos += w.size
            nb = vec[pos : pos + b.size].copy()
            pos += b.size
            out.append((nw.copy(), nb))
        if pos != vec.size:
            raise ValueError("vector length does not match parameter count")
        return ModelParams(tuple(out))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(w)) and np.all(np.isfinite(b)) for w, b in self.layers)


# TeacherParams has the same structure as the student.
TeacherParams = ModelParams


@dataclass(frozen=True)
class OptimizerState:
    buffers: ModelParams
    momentum: float = 0.9
    base_lr: float = 0.05
    weight_decay: float = 5e-4


def init_params(dims: Sequence[int], seed: int) -> ModelParams:
    if len(dims) < 2:
        raise ValueError("need at least an input and an output size")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / fan_in)
        layers.append((rng.uniform(-bound, bound, size=(fan_out, fan_in)), np.zeros(fan_out)))
    return ModelParams(tuple(layers))


def zeros_like(params: ModelParams) -> ModelParams:
    return params.map(np.zeros_like)


def init_optimizer(params: ModelParams, base_lr=0.05, weight_decay=5e-4, momentum=0.9) -> OptimizerState:
    return OptimizerState(zeros_like(params), momentum, base_lr, weight_decay)


def _forward_cache(params: ModelParams, X: np.ndarray):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.layers[0][0].shape[1]:
        raise ValueError(f"input of shape {X.shape} does not match input dim {params.layers[0][0].shape[1]}")
    acts = [X]
    h = X
    last = len(params.layers) - 1
    for k, (w, b) in enumerate(params.layers):
        h = h @ w.T + b
        if k < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def forward(params: ModelParams, X: np.ndarray) -> np.ndarray:
    return _forward_cache(params, X)[-1]


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_proba(params: ModelParams, X: np.ndarray) -> np.ndarray:
    return softmax_probs(forward(params, X))


def nll_and_grads(
    params: ModelParams, X: np.ndarray, targets: np.ndarray, coef: np.ndarray
) -> Tuple[np.ndarray, ModelParams]:
    """Per-row negative log-likelihoods and gradients of ``sum_i coef[i] * nll[i]``.

    Probabilities are clamped below at ``PROB_FLOOR``; rows sitting on the clamp
    contribute no gradient. No weight decay here.
    """
    acts = _forward_cache(params, X)
    probs = softmax_probs(acts[-1])
    rows = np.arange(probs.shape[0])
    p_t = probs[rows, targets]
    nll = -np.log(np.maximum(p_t, PROB_FLOOR))

    delta = probs.copy()
    delta[rows, targets] -= 1.0
    delta *= np.where(p_t >= PROB_FLOOR, coef, 0.0)[:, None]

    grads = [None] * len(params.layers)
    for k in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[k]
        grads[k] = (delta.T @ acts[k], delta.sum(axis=0))
        if k:
            delta = (delta @ w) * (acts[k] > 0)
    return nll, ModelParams(tuple(grads))


def add_weight_decay(grads: ModelParams, params: ModelParams, weight_decay: float) -> ModelParams:
    if not weight_decay:
        return grads
    return ModelParams(
        tuple((gw + weight_decay * w, gb) for (gw, gb), (w, _) in zip(grads.layers, params.layers))
    )


def loss_and_grads(
    params: ModelParams,
    X: np.ndarray,
    targets: np.ndarray,
    weights: np.ndarray,
    weight_decay: float = 0.0,
) -> Tuple[float, ModelParams]:
    """Weighted mean cross-entropy ``-(1/B) sum w_i log p_i`` and its gradient.

    The returned loss excludes the L2 term; the gradient includes
    ``weight_decay * W`` for weight matrices (biases are not decayed).
    """
    weights = np.asarray(weights, dtype=np.float64)
    B = len(targets)
    nll, grads = nll_and_grads(params, X, targets, weights / B)
    return float(weights @ nll) / B, add_weight_decay(grads, params, weight_decay)


def sgd_step(
    opt: OptimizerState, params: ModelParams, grads: ModelParams, lr: float
) -> Tuple[ModelParams, OptimizerState]:
    mom = opt.momentum
    buffers = opt.buffers.zip_map(grads, lambda buf, g: mom * buf + g)
    new_params = params.zip_map(buffers, lambda p, buf: p - lr * buf)
    return new_params, OptimizerState(buffers, mom, opt.base_lr, opt.weight_decay)


def cosine_lr(epoch: int, total_epochs: int, base_lr: float) -> float:
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


def teacher_update(teacher: TeacherParams, student: ModelParams, alpha: float) -> TeacherParams:
    return teacher.zip_map(student, lambda t, s: alpha * t + (1.0 - alpha) * s)


# ---------------------------------------------------------------- checkpoints


def _flatten(prefix: str, params: ModelParams, out: dict) -> None:
    for k, (w, b) in enumerate(params.layers):
        out[f"{prefix}.{k}.w"] = w
        out[f"{prefix}.{k}.b"] = b


def _unflatten(prefix: str, data, n_layers: int) -> ModelParams:
    return ModelParams(
        tuple((data[f"{prefix}.{k}.w"].copy(), data[f"{prefix}.{k}.b"].copy()) for k in range(n_layers))
    )


def save_checkpoint(path, student, teacher, opt: OptimizerState, arrays=None, meta=None) -> None:
    """Write an ``.npz`` holding both networks, momentum buffers and any extra state."""
    blob = {}
    _flatten("student", student, blob)
    _flatten("teacher", teacher, blob)
    _flatten("momentum", opt.buffers, blob)
    for key, value in (arrays or {}).items():
        blob[f"extra.{key}"] = np.asarray(value)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "n_layers": len(student.layers),
        "optimizer": {"momentum": opt.momentum, "base_lr": opt.base_lr, "weight_decay": opt.weight_decay},
        "meta": meta or {},
    }
    blob["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **blob)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
        n = header["n_layers"]
        student = _unflatten("student", data, n)
        teacher = _unflatten("teacher", data, n)
        opt = OptimizerState(_unflatten("momentum", data, n), **header["optimizer"])
        arrays = {k[len("extra.") :]: data[k].copy() for k in data.files if k.startswith("extra.")}
    return student, teacher, opt, arrays, header["meta"]
