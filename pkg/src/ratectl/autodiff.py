"""Minimal reverse-mode autodiff over numpy float64 arrays.

Just enough ops for the networks and losses in this package: matmul, bias
add, relu, tanh, layer norm, fused softmax cross-entropy, and the pinball
(quantile regression) loss. Values are computed eagerly; backward() walks the
recorded graph once in reverse topological order.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn")

    def __init__(self, value, parents=(), backward_fn=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def backward(self) -> None:
        if self.value.shape != ():
            raise ValueError("backward() starts from a scalar loss")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node.backward_fn is not None and node.grad is not None:
                node.backward_fn(node.grad)


def leaf(value) -> Tensor:
    return Tensor(value)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value @ b.value, (a, b))

    def backward(g):
        a.accumulate(g @ b.value.T)
        b.accumulate(a.value.T @ g)

    out.backward_fn = backward
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; b may broadcast (bias rows)."""
    out = Tensor(a.value + b.value, (a, b))

    def backward(g):
        a.accumulate(_unbroadcast(g, a.value.shape))
        b.accumulate(_unbroadcast(g, b.value.shape))

    out.backward_fn = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.value * s, (a,))
    out.backward_fn = lambda g: a.accumulate(g * s)
    return out


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0.0
    out = Tensor(a.value * mask, (a,))
    out.backward_fn = lambda g: a.accumulate(g * mask)
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)
    out = Tensor(y, (a,))
    out.backward_fn = lambda g: a.accumulate(g * (1.0 - y * y))
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = x.value.mean(axis=-1, keepdims=True)
    centered = x.value - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = centered * inv
    out = Tensor(y * gain.value + bias.value, (x, gain, bias))

    def backward(g):
        gain.accumulate(_unbroadcast(g * y, gain.value.shape))
        bias.accumulate(_unbroadcast(g, bias.value.shape))
        dy = g * gain.value
        dx = (dy - dy.mean(axis=-1, keepdims=True)
              - y * (dy * y).mean(axis=-1, keepdims=True)) * inv
        x.accumulate(dx)

    out.backward_fn = backward
    return out


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray,
                          weights: np.ndarray) -> Tensor:
    """Weighted sum over rows of CE(targets, softmax(logits)).

    targets rows are probability distributions; weights has one entry per row
    (loss masking / averaging folds into it).
    """
    z = logits.value
    zmax = z.max(axis=-1, keepdims=True)
    ez = np.exp(z - zmax)
    sez = ez.sum(axis=-1, keepdims=True)
    log_softmax = z - zmax - np.log(sez)
    per_row = -(targets * log_softmax).sum(axis=-1)
    out = Tensor((per_row * weights).sum(), (logits,))

    def backward(g):
        softmax = ez / sez
        logits.accumulate(g * weights[:, None] * (softmax - targets))

    out.backward_fn = backward
    return out


def pinball(preds: Tensor, targets: np.ndarray, taus: np.ndarray,
            weights: np.ndarray) -> Tensor:
    """Weighted sum over rows of the mean quantile-regression loss.

    preds is (rows, n_quantiles); targets is (rows,); taus the fixed quantile
    levels. Each row contributes weights[row] * mean_i rho_tau_i(target - pred_i).
    """
    u = targets[:, None] - preds.value
    indicator = (u < 0.0).astype(np.float64)
    per_row = ((taus[None, :] - indicator) * u).mean(axis=-1)
    out = Tensor((per_row * weights).sum(), (preds,))

    def backward(g):
        coeff = (indicator - taus[None, :]) / len(taus)
        preds.accumulate(g * weights[:, None] * coeff)

    out.backward_fn = backward
    return out


def add_all(tensors: list[Tensor]) -> Tensor:
    out = Tensor(sum(t.value for t in tensors), tuple(tensors))

    def backward(g):
        for t in tensors:
            t.accumulate(g)

    out.backward_fn = backward
    return out


def l2_penalty(tensors: list[Tensor], coeff: float) -> Tensor:
    """coeff * sum of squared entries over all given tensors."""
    out = Tensor(coeff * sum(float((t.value * t.value).sum()) for t in tensors),
                 tuple(tensors))

    def backward(g):
        for t in tensors:
            t.accumulate(g * 2.0 * coeff * t.value)

    out.backward_fn = backward
    return out
