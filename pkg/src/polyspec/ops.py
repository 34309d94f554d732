"""Differentiable building blocks: softmax, layer norm, activations, dropout,
multi-head attention. The hot inner blocks (softmax, layer norm, gelu, relu,
dropout) are single fused tape nodes with hand-written backwards; finite
differences in the test battery keep them honest.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor, _unbroadcast, as_tensor, concat
from .rng import RngStream

_GELU_C = math.sqrt(2.0 / math.pi)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax along `axis`."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        dx = y * (g - (g * y).sum(axis=axis, keepdims=True))
        return (dx,)

    return Tensor._op(y, (x,), back)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse

    def back(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return Tensor._op(y, (x,), back)


def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    m = x.max_detached(axis=axis, keepdims=True)
    out = (x - m).exp().sum(axis=axis, keepdims=False).log()
    return out + Tensor(m.data.reshape(out.shape), dtype=m.data.dtype)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = (var + eps) ** -0.5
    xhat = centered * inv
    y = xhat * gamma.data + beta.data

    def back(g):
        dxhat = g * gamma.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        dgamma = _unbroadcast(g * xhat, gamma.shape)
        dbeta = _unbroadcast(g, beta.shape)
        return (dx, dgamma, dbeta)

    return Tensor._op(y, (x, gamma, beta), back)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b) as one tape node. w must be [d_in, d_out], b [d_out];
    x may carry any leading axes."""
    x, w = as_tensor(x), as_tensor(w)
    d_in, d_out = w.shape
    y = x.data @ w.data

    def grads_xw(g):
        gf = g.reshape(-1, d_out)
        xf = x.data.reshape(-1, d_in)
        return g @ w.data.T, xf.T @ gf

    if b is None:
        def back(g):
            return grads_xw(g)
        return Tensor._op(y, (x, w), back)

    b = as_tensor(b)

    def back(g):
        dx, dw = grads_xw(g)
        return dx, dw, g.reshape(-1, d_out).sum(axis=0)

    return Tensor._op(y + b.data, (x, w, b), back)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.maximum(x.data, 0)

    def back(g):
        return (g * (x.data > 0),)

    return Tensor._op(y, (x,), back)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = as_tensor(x)
    d = x.data
    t = np.tanh(_GELU_C * (d + 0.044715 * d * d * d))
    y = 0.5 * d * (1.0 + t)

    def back(g):
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * d * d)
        return (g * (0.5 * (1.0 + t) + 0.5 * d * dt),)

    return Tensor._op(y, (x,), back)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "gelu":
        return gelu(x)
    raise ValueError(f"unknown activation kind: {kind!r}")


def dropout(x: Tensor, p: float, rng: RngStream, training: bool) -> Tensor:
    """Inverted dropout: zero with prob p, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return as_tensor(x)
    x = as_tensor(x)
    keep = ~rng.bernoulli(p, x.shape)
    mul = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - p))

    def back(g):
        return (g * mul,)

    return Tensor._op(x.data * mul, (x,), back)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q kᵀ / sqrt(d)) v over the last two axes, any leading axes.

    q: [..., n_q, d], k: [..., n_k, d], v: [..., n_k, d_v] -> [..., n_q, d_v]
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d = q.shape[-1]
    if k.shape[-1] != d:
        raise ValueError(f"query dim {d} != key dim {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError("key and value counts differ")
    logits = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d))
    return softmax(logits, axis=-1) @ v


def sinusoidal_positions(n_pos: int, dim: int) -> np.ndarray:
    """Standard sin/cos positional table, shape [n_pos, dim]."""
    pos = np.arange(n_pos, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * (i // 2) / dim)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table


def cross_entropy(logits: Tensor, target_ids: np.ndarray) -> Tensor:
    """Mean cross-entropy over all leading axes; logits [..., N]."""
    lp = log_softmax(logits, axis=-1)
    ids = np.asarray(target_ids)
    flat = lp.reshape(-1, lp.shape[-1])
    picked = flat[np.arange(flat.shape[0]), ids.reshape(-1)]
    return -picked.mean()


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    return (pred - as_tensor(target)).abs().mean()


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    diff = pred - as_tensor(target)
    return (diff * diff).mean()
