"""Multilayer perceptron maths, local training and aggregation."""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .data import Dataset
from .weights import ShapeError, WeightVector

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class Method(str, enum.Enum):
    FEDAVG = "fedavg"
    FEDPROX = "fedprox"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    batch_size: int = 32
    local_epochs: int = 2
    method: Method = Method.FEDAVG
    mu: float = 0.001
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.local_epochs < 0:
            raise ValueError("local_epochs must be non-negative")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")

    def with_seed(self, seed) -> "TrainConfig":
        return replace(self, rng_seed=seed)


class EmptyAggregation(ValueError):
    pass


def _unpack(values, shapes):
    pos = 0
    out = []
    for a, b in zip(shapes[:-1], shapes[1:]):
        W = values[pos:pos + a * b].reshape(a, b)
        pos += a * b
        out.append((W, values[pos:pos + b]))
        pos += b
    return out


def logits(w: WeightVector, X: np.ndarray) -> np.ndarray:
    layers = _unpack(w.values, w.shapes)
    h = X
    for W, b in layers[:-1]:
        h = np.maximum(h @ W + b, 0.0)
    W, b = layers[-1]
    return h @ W + b


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(w: WeightVector, data: Dataset) -> float:
    """Mean cross-entropy of the softmax outputs over ``data``."""
    logp = _log_softmax(logits(w, data.features))
    return float(-logp[np.arange(len(data)), data.labels].mean())


def loss_and_grad(values: np.ndarray, shapes, X, y):
    """Mean cross-entropy and its gradient with respect to the flat parameters."""
    layers = _unpack(values, shapes)
    acts = [X]
    h = X
    for W, b in layers[:-1]:
        h = np.maximum(h @ W + b, 0.0)
        acts.append(h)
    W, b = layers[-1]
    z = h @ W + b
    logp = _log_softmax(z)
    n = X.shape[0]
    loss = -logp[np.arange(n), y].mean()

    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = []
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        a = acts[i]
        grads.append(delta.sum(axis=0))
        grads.append((a.T @ delta).ravel())
        if i:
            delta = (delta @ W.T) * (a > 0)
    grads.reverse()
    return float(loss), np.concatenate(grads)


def prox_penalty(w, w_t, mu: float) -> float:
    """``mu/2 * ||w - w_t||^2`` summed in index order."""
    a = np.asarray(getattr(w, "values", w), dtype=np.float64)
    b = np.asarray(getattr(w_t, "values", w_t), dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError("proximal term needs vectors of equal length")
    d = a - b
    return mu / 2.0 * float(np.dot(d, d))


def prox_gradient(w, w_t, mu: float) -> np.ndarray:
    a = np.asarray(getattr(w, "values", w), dtype=np.float64)
    b = np.asarray(getattr(w_t, "values", w_t), dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError("proximal term needs vectors of equal length")
    return mu * (a - b)


def local_train(w_global: WeightVector, data: Dataset, cfg: TrainConfig,
                trace: Optional[list] = None) -> WeightVector:
    """Mini-batch Adam on cross-entropy, plus the proximal pull for FedProx.

    The optimizer state starts fresh on every call. When ``trace`` is a
    list, the parameter vector after each step is appended to it.
    """
    if data.n_features != w_global.shapes[0]:
        raise ShapeError(f"data has {data.n_features} features, model expects {w_global.shapes[0]}")
    if len(data) == 0:
        return w_global

    rng = np.random.default_rng(cfg.rng_seed)
    anchor = w_global.values
    theta = anchor.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    t = 0
    n = len(data)
    for _ in range(cfg.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, g = loss_and_grad(theta, w_global.shapes, data.features[idx], data.labels[idx])
            if cfg.method is Method.FEDPROX:
                g = g + prox_gradient(theta, anchor, cfg.mu)
            t += 1
            m = ADAM_BETA1 * m + (1 - ADAM_BETA1) * g
            v = ADAM_BETA2 * v + (1 - ADAM_BETA2) * g * g
            m_hat = m / (1 - ADAM_BETA1 ** t)
            v_hat = v / (1 - ADAM_BETA2 ** t)
            theta = theta - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
            if trace is not None:
                trace.append(theta.copy())
    return w_global.replace(theta)


def aggregate_mean(updates: Sequence[WeightVector],
                   sample_counts: Optional[Sequence[int]] = None) -> WeightVector:
    """Element-wise mean of ``updates``.

    Inputs are put in a canonical order (by their raw bytes) before summing,
    so the result does not depend on the order they arrived in. With
    ``sample_counts`` the mean is weighted by shard size instead.
    """
    if not updates:
        raise EmptyAggregation("no updates to aggregate")
    shapes = updates[0].shapes
    if any(u.shapes != shapes for u in updates):
        raise ShapeError("updates have differing shapes")
    if sample_counts is None:
        weights = [1.0] * len(updates)
    else:
        if len(sample_counts) != len(updates) or sum(sample_counts) <= 0:
            raise ValueError("need one positive sample count per update")
        weights = [float(c) for c in sample_counts]

    pairs = sorted(zip(updates, weights), key=lambda p: (p[0].values.tobytes(), p[1]))
    if pairs[0][0].values.tobytes() == pairs[-1][0].values.tobytes():
        # all inputs equal; k*w/k can be off by an ulp
        return WeightVector(pairs[0][0].values, shapes)
    total = np.zeros_like(updates[0].values)
    for u, wt in pairs:
        total += u.values if sample_counts is None else wt * u.values
    return WeightVector(total / sum(weights), shapes)


def predict(w: WeightVector, X: np.ndarray) -> np.ndarray:
    # argmax of softmax == argmax of logits
    return np.argmax(logits(w, X), axis=1)
