"""Reusable parameterized layers: linear, MLP blocks, multi-head attention,
and pre-LN transformer layers. Every layer registers its parameters in a
shared ParameterStore under a name prefix and a group tag."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor
from .ops import dropout, gelu, layer_norm, linear, relu, softmax
from .params import ParameterStore, linear_init
from .rng import RngStream


class Linear:
    def __init__(self, store: ParameterStore, prefix: str, group: str,
                 d_in: int, d_out: int, rng: RngStream, zero_init: bool = False,
                 bias: bool = True):
        w, b = linear_init(rng, d_in, d_out)
        if zero_init:
            w = np.zeros_like(w)
            b = np.zeros_like(b)
        self.w = store.register(f"{prefix}/w", w, group)
        self.b = store.register(f"{prefix}/b", b, group) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.w.tensor,
                      self.b.tensor if self.b is not None else None)


class MLPBlock:
    """Linear -> ReLU -> Dropout -> Linear -> Dropout (projection-layer MLP)."""

    def __init__(self, store, prefix, group, d: int, hidden: int,
                 rng: RngStream, p_drop: float = 0.1, zero_out: bool = False):
        self.fc1 = Linear(store, f"{prefix}/fc1", group, d, hidden, rng.split("fc1"))
        self.fc2 = Linear(store, f"{prefix}/fc2", group, hidden, d,
                          rng.split("fc2"), zero_init=zero_out)
        self.p_drop = p_drop

    def __call__(self, x: Tensor, rng: RngStream, training: bool) -> Tensor:
        h = relu(self.fc1(x))
        h = dropout(h, self.p_drop, rng.split("d1"), training)
        h = self.fc2(h)
        return dropout(h, self.p_drop, rng.split("d2"), training)


class LayerNormParams:
    def __init__(self, store, prefix, group, d: int):
        self.gamma = store.register(f"{prefix}/gamma", np.ones(d, dtype=np.float32), group)
        self.beta = store.register(f"{prefix}/beta", np.zeros(d, dtype=np.float32), group)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma.tensor, self.beta.tensor)


class MultiHeadAttention:
    """Attention with separate query and key/value input dims.

    q: [B, n_q, q_dim], kv: [B, n_k, kv_dim] -> [B, n_q, out_dim].
    `kv_pad` is an optional [B, n_k] boolean mask of padded keys.
    """

    def __init__(self, store, prefix, group, q_dim: int, kv_dim: int,
                 heads: int, head_dim: int, out_dim: int, rng: RngStream,
                 p_drop: float = 0.1):
        inner = heads * head_dim
        self.heads = heads
        self.head_dim = head_dim
        self.p_drop = p_drop
        self.wq = Linear(store, f"{prefix}/wq", group, q_dim, inner, rng.split("wq"))
        # no key bias: a shared key offset shifts every attention logit of a
        # query by the same amount, which softmax cancels exactly
        self.wk = Linear(store, f"{prefix}/wk", group, kv_dim, inner,
                         rng.split("wk"), bias=False)
        self.wv = Linear(store, f"{prefix}/wv", group, kv_dim, inner, rng.split("wv"))
        self.wo = Linear(store, f"{prefix}/wo", group, inner, out_dim, rng.split("wo"))

    def __call__(self, x_q: Tensor, x_kv: Tensor, rng: RngStream,
                 training: bool, kv_pad: np.ndarray | None = None) -> Tensor:
        B, n_q = x_q.shape[0], x_q.shape[1]
        n_k = x_kv.shape[1]
        h, dh = self.heads, self.head_dim

        def split_heads(t, n):
            return t.reshape(B, n, h, dh).swapaxes(1, 2)  # [B, h, n, dh]

        q = split_heads(self.wq(x_q), n_q)
        k = split_heads(self.wk(x_kv), n_k)
        v = split_heads(self.wv(x_kv), n_k)
        logits = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh))
        if kv_pad is not None and kv_pad.any():
            bias = np.where(kv_pad, -1e9, 0.0)[:, None, None, :]
            logits = logits + Tensor(bias.astype(logits.dtype))
        w = softmax(logits, axis=-1)
        w = dropout(w, self.p_drop, rng.split("attn_drop"), training)
        out = (w @ v).swapaxes(1, 2).reshape(B, n_q, h * dh)
        return self.wo(out)


class FeedForward:
    """Linear -> GELU -> Dropout -> Linear -> Dropout."""

    def __init__(self, store, prefix, group, d: int, hidden: int,
                 rng: RngStream, p_drop: float = 0.1):
        self.fc1 = Linear(store, f"{prefix}/fc1", group, d, hidden, rng.split("fc1"))
        self.fc2 = Linear(store, f"{prefix}/fc2", group, hidden, d, rng.split("fc2"))
        self.p_drop = p_drop

    def __call__(self, x: Tensor, rng: RngStream, training: bool) -> Tensor:
        h = dropout(gelu(self.fc1(x)), self.p_drop, rng.split("d1"), training)
        return dropout(self.fc2(h), self.p_drop, rng.split("d2"), training)


class TransformerLayer:
    """Pre-LN attention + feed-forward, both with residual connections.

    Self-attention when kv_dim is None; otherwise cross-attention from an
    external key/value stream.
    """

    def __init__(self, store, prefix, group, d: int, heads: int, head_dim: int,
                 rng: RngStream, kv_dim: int | None = None,
                 mlp_ratio: float = 4.0, p_drop: float = 0.1):
        self.ln1 = LayerNormParams(store, f"{prefix}/ln1", group, d)
        self.attn = MultiHeadAttention(
            store, f"{prefix}/attn", group, d, kv_dim or d, heads, head_dim,
            d, rng.split("attn"), p_drop)
        self.ln2 = LayerNormParams(store, f"{prefix}/ln2", group, d)
        self.ffn = FeedForward(store, f"{prefix}/ffn", group, d,
                               int(round(d * mlp_ratio)), rng.split("ffn"), p_drop)
        self.p_drop = p_drop

    def __call__(self, x: Tensor, rng: RngStream, training: bool,
                 kv: Tensor | None = None,
                 kv_pad: np.ndarray | None = None) -> Tensor:
        h = self.ln1(x)
        attn_kv = kv if kv is not None else h
        x = x + dropout(self.attn(h, attn_kv, rng.split("a"), training, kv_pad),
                        self.p_drop, rng.split("da"), training)
        x = x + self.ffn(self.ln2(x), rng.split("f"), training)
        return x
