"""AdamW with decoupled weight decay, cosine learning-rate schedule, and
global-norm gradient clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .params import Parameter


@dataclass
class OptimizerState:
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 1e-4
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class AdamW:
    def __init__(self, params: Iterable[Parameter], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999),
                 weight_decay: float = 1e-4, eps: float = 1e-8):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names in optimizer")
        self.state = OptimizerState(lr=lr, betas=betas, weight_decay=weight_decay, eps=eps)

    def step(self):
        s = self.state
        s.step_count += 1
        b1, b2 = s.betas
        bc1 = 1.0 - b1 ** s.step_count
        bc2 = 1.0 - b2 ** s.step_count
        for p in self.params:
            g = p.tensor.grad
            if g is None:
                continue
            m = s.m.get(p.name)
            if m is None:
                m = s.m[p.name] = np.zeros_like(p.value)
                s.v[p.name] = np.zeros_like(p.value)
            v = s.v[p.name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + s.eps)
            p.value = p.value - s.lr * update - s.lr * s.weight_decay * p.value

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def cosine_lr(epoch: int, total_epochs: int, lr_max: float = 1e-4,
              lr_min: float = 1e-5) -> float:
    """Cosine annealing from lr_max at epoch 0 to lr_min at total_epochs."""
    if total_epochs <= 0:
        raise ValueError("total_epochs must be positive")
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * epoch / total_epochs))


def clip_global_norm(params: Iterable[Parameter], max_norm: float = 100.0) -> float:
    """Scale all grads so the global L2 norm is at most max_norm.

    Returns the post-clip global norm. Idempotent.
    """
    params = list(params)
    total = 0.0
    for p in params:
        g = p.tensor.grad
        if g is not None:
            total += float(np.sum(g.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.tensor.grad is not None:
                p.tensor.grad = p.tensor.grad * scale
        return max_norm
    return norm
