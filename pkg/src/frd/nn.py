"""Dense ReLU networks with hand-written backprop and an Adam optimizer.

Everything is float64. Inputs may be a single vector ``(d,)`` or a batch
``(N, d)``; outputs follow the same convention.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np


def relu(z):
    return np.maximum(z, 0.0)


def softmax(logits) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class Mlp:
    """Feed-forward net: ReLU hidden layers, linear output layer.

    ``widths`` lists every layer width, input first, e.g. ``[4, 24, 24, 2]``.
    Weights are stored as ``(fan_in, fan_out)`` so ``h @ W + b`` is a layer.
    """

    def __init__(self, widths: Sequence[int], rng: np.random.Generator | None = None):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError(f"invalid layer widths {widths}")
        self.widths = widths
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        rng = rng if rng is not None else np.random.default_rng(0)
        last = len(widths) - 2
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            if i < last:
                limit = np.sqrt(6.0 / fan_in)  # He-uniform
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))  # Glorot-uniform, linear head
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @staticmethod
    def build(in_dim: int, hidden_width: int, hidden_layers: int, out_dim: int,
              rng: np.random.Generator | None = None) -> "Mlp":
        return Mlp([in_dim] + [hidden_width] * hidden_layers + [out_dim], rng)

    @property
    def params(self) -> list[np.ndarray]:
        """Parameter arrays in canonical order W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def n_params(self) -> int:
        return param_count(self.widths)

    def fingerprint(self) -> str:
        return "mlp-relu:" + "-".join(str(w) for w in self.widths)

    def copy(self) -> "Mlp":
        net = object.__new__(Mlp)
        net.widths = list(self.widths)
        net.weights = [w.copy() for w in self.weights]
        net.biases = [b.copy() for b in self.biases]
        return net

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.widths[0] or x.ndim > 2:
            raise ValueError(f"expected input of width {self.widths[0]}, got shape {x.shape}")
        return x

    def forward(self, x) -> np.ndarray:
        h = self._check_input(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
        return h

    __call__ = forward

    def forward_cache(self, x):
        """Forward pass that also returns the per-layer inputs needed by backward."""
        h = self._check_input(x)
        inputs = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
        return h, inputs

    def backward(self, cache, upstream) -> list[np.ndarray]:
        """Gradients of ``sum(upstream * output)`` w.r.t. params, in ``params`` order."""
        inputs = cache
        g = np.asarray(upstream, dtype=np.float64)
        expected = inputs[0].shape[:-1] + (self.widths[-1],)
        if g.shape != expected:
            raise ValueError(f"upstream gradient shape {g.shape} != output shape {expected}")
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))  # type: ignore[list-item]
        for i in range(len(self.weights) - 1, -1, -1):
            h = inputs[i]
            if h.ndim == 1:
                grads[2 * i] = np.outer(h, g)
                grads[2 * i + 1] = g.copy()
            else:
                grads[2 * i] = h.T @ g
                grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.weights[i].T) * (h > 0.0)
        return grads

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {flat.shape}")
        pos = 0
        for p in self.params:
            p[...] = flat[pos:pos + p.size].reshape(p.shape)
            pos += p.size


def param_count(widths: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))


class Adam:
    """Adam over a fixed list of parameter arrays, updated in place."""

    def __init__(self, params: Sequence[np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        if len(grads) != len(self.m):
            raise ValueError("gradient list does not match optimizer state")
        for g, m in zip(grads, self.m):
            if g.shape != m.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {m.shape}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError("non-finite gradient")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        for p in params:
            if not np.all(np.isfinite(p)):
                raise FloatingPointError("optimizer produced non-finite parameters")
