"""Dense-tensor layers with explicit analytic gradients (float64, batch-free).

Layers cache whatever their backward pass needs; call order is strictly
forward then backward. Gradients accumulate into `.grads()` arrays until
`zero_grads()`.
"""

from __future__ import annotations

import numpy as np

from . import kernels


class ShapeMismatch(ValueError):
    """Input shape incompatible with the layer or loss."""


class Layer:
    def params(self) -> dict[str, np.ndarray]:
        return {}

    def grads(self) -> dict[str, np.ndarray]:
        return {}

    def zero_grads(self):
        for g in self.grads().values():
            g[...] = 0.0

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(np.float64)


class Linear(Layer):
    """y = x @ W + b for x of shape (nin,) or (N, nin)."""

    def __init__(self, nin: int, nout: int, rng: np.random.Generator):
        self.nin, self.nout = nin, nout
        self.W = he_uniform(rng, (nin, nout), nin)
        self.b = np.zeros(nout)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._x = None

    def params(self):
        return {"W": self.W, "b": self.b}

    def grads(self):
        return {"W": self.dW, "b": self.db}

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.nin:
            raise ShapeMismatch(f"Linear expected last dim {self.nin}, got {x.shape}")
        self._x = x
        return x @ self.W + self.b

    def backward(self, dy):
        x = self._x
        if x.ndim == 1:
            self.dW += np.outer(x, dy)
            self.db += dy
        else:
            self.dW += x.T @ dy
            self.db += dy.sum(axis=0)
        return dy @ self.W.T


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy):
        return np.where(self._mask, dy, 0.0)


class Sigmoid(Layer):
    def forward(self, x):
        self._y = 1.0 / (1.0 + np.exp(-x))
        return self._y

    def backward(self, dy):
        return dy * self._y * (1.0 - self._y)


class Conv2d(Layer):
    """Same-padded stride-1 2D correlation on (Cin, H, W) maps. Odd kernel."""

    def __init__(self, cin: int, cout: int, ksize: int, rng: np.random.Generator):
        if ksize % 2 == 0:
            raise ValueError("kernel size must be odd for same padding")
        self.cin, self.cout, self.ksize = cin, cout, ksize
        fan_in = cin * ksize * ksize
        self.W = he_uniform(rng, (cout, cin, ksize, ksize), fan_in)
        self.b = np.zeros(cout)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._x = None

    def params(self):
        return {"W": self.W, "b": self.b}

    def grads(self):
        return {"W": self.dW, "b": self.db}

    def forward(self, x):
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[0] != self.cin:
            raise ShapeMismatch(f"Conv2d expected ({self.cin}, H, W), got {x.shape}")
        self._x = x
        return kernels.conv2d_forward(x, self.W, self.b)

    def backward(self, dy):
        dy = np.ascontiguousarray(dy, dtype=np.float64)
        dx, dw, db = kernels.conv2d_backward(self._x, self.W, dy)
        self.dW += dw
        self.db += db
        return dx


class MaxPool2(Layer):
    """2x2 max pooling, stride 2; requires even H and W."""

    def forward(self, x):
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.shape[1] % 2 or x.shape[2] % 2:
            raise ShapeMismatch(f"MaxPool2 needs even H, W, got {x.shape}")
        y, self._idx = kernels.maxpool2_forward(x)
        return y

    def backward(self, dy):
        return kernels.maxpool2_backward(np.ascontiguousarray(dy, dtype=np.float64), self._idx)


class Upsample2(Layer):
    """Nearest-neighbor 2x upsampling on (C, H, W)."""

    def forward(self, x):
        return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)

    def backward(self, dy):
        c, h, w = dy.shape
        return dy.reshape(c, h // 2, 2, w // 2, 2).sum(axis=(2, 4))


class EmbeddingBag(Layer):
    """Sum of embedding rows for a list of token ids."""

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator):
        self.vocab_size, self.dim = vocab_size, dim
        self.E = rng.normal(0.0, 0.2, size=(vocab_size, dim))
        self.dE = np.zeros_like(self.E)
        self._ids = None

    def params(self):
        return {"E": self.E}

    def grads(self):
        return {"E": self.dE}

    def forward(self, ids):
        ids = np.asarray(ids, dtype=np.intp)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise ShapeMismatch("token id out of vocabulary range")
        self._ids = ids
        if ids.size == 0:
            return np.zeros(self.dim)
        return self.E[ids].sum(axis=0)

    def backward(self, dy):
        np.add.at(self.dE, self._ids, dy)
        return None  # ids are not differentiable


class Sequential(Layer):
    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def params(self):
        out = {}
        for i, l in enumerate(self.layers):
            for k, v in l.params().items():
                out[f"{i}.{k}"] = v
        return out

    def grads(self):
        out = {}
        for i, l in enumerate(self.layers):
            for k, v in l.grads().items():
                out[f"{i}.{k}"] = v
        return out

    def forward(self, x):
        for l in self.layers:
            x = l.forward(x)
        return x

    def backward(self, dy):
        for l in reversed(self.layers):
            dy = l.backward(dy)
        return dy


class SquaredLossHead:
    """L = sum((y - t)^2); dL/dy = 2 (y - t)."""

    def __init__(self, target):
        self.target = np.asarray(target, dtype=np.float64)

    def forward(self, pred):
        if pred.shape != self.target.shape:
            raise ShapeMismatch(f"target shape {self.target.shape} vs pred {pred.shape}")
        self._pred = pred
        return float(np.sum((pred - self.target) ** 2))

    def backward(self):
        return 2.0 * (self._pred - self.target)


class BCELossHead:
    """Mean binary cross-entropy on probabilities, clamped to [eps, 1-eps]."""

    def __init__(self, target, eps: float = 1e-7):
        self.target = np.asarray(target, dtype=np.float64)
        self.eps = eps

    def forward(self, pred):
        if pred.shape != self.target.shape:
            raise ShapeMismatch(f"target shape {self.target.shape} vs pred {pred.shape}")
        self._pred = pred
        p = np.clip(pred, self.eps, 1.0 - self.eps)
        self._p = p
        t = self.target
        return float(-np.mean(t * np.log(p) + (1.0 - t) * np.log1p(-p)))

    def backward(self):
        p, t = self._p, self.target
        g = (p - t) / (p * (1.0 - p)) / p.size
        # clamp is flat outside [eps, 1-eps]
        inside = (self._pred >= self.eps) & (self._pred <= 1.0 - self.eps)
        return np.where(inside, g, 0.0)


def forward_backward(graph: Sequential, x, loss_head):
    """Run a forward pass, a loss head, and a full backward pass.

    Returns (loss, grads dict). Gradients are freshly zeroed first, so the
    result is exactly the gradient of this one evaluation.
    """
    graph.zero_grads()
    pred = graph.forward(x)
    loss = loss_head.forward(pred)
    graph.backward(loss_head.backward())
    return loss, graph.grads()


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_rows(logits: np.ndarray, labels: np.ndarray):
    """Per-row softmax cross-entropy.

    Returns (ce (N,), dlogits (N, K)) where dlogits is the gradient of the
    per-row loss (not yet averaged).
    """
    z = logits - logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    n = np.arange(logits.shape[0])
    ce = lse - z[n, labels]
    d = softmax_rows(logits)
    d[n, labels] -= 1.0
    return ce, d
