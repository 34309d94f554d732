"""Reverse-mode automatic differentiation over dense numpy arrays.

Tensors record the operations that produced them; ``backward`` on a scalar
walks the tape in reverse topological order and accumulates gradients into
every reachable tensor with ``requires_grad``. Training runs in float32;
gradient checks switch the whole graph to float64 via ``precision``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


def default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for newly created tensors."""
    global _DEFAULT_DTYPE
    prev = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (evaluation / optimizer internals)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A dense float array plus an optional gradient tape entry."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        """A view of the same data cut off from the tape."""
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    # -- tape ----------------------------------------------------------------

    @staticmethod
    def _op(data: np.ndarray, parents: Sequence["Tensor"], backward: Callable) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        req = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = req
        out._parents = tuple(parents) if req else ()
        out._backward = backward if req else None
        return out

    def backward(self):
        """Populate grads of all reachable tensors; requires a scalar root."""
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is not None:
                parent_grads = node._backward(g)
                for p, pg in zip(node._parents, parent_grads):
                    if pg is None or not p.requires_grad:
                        continue
                    acc = grads.get(id(p))
                    grads[id(p)] = pg if acc is None else acc + pg
            if node._parents == () or node._backward is None:
                node.grad = g if node.grad is None else node.grad + g

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other)
        a, b = self, other
        return Tensor._op(
            a.data + b.data, (a, b),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))

    __radd__ = __add__

    def __neg__(self):
        return Tensor._op(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        other = _as_tensor(other)
        a, b = self, other
        return Tensor._op(
            a.data - b.data, (a, b),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))

    def __rsub__(self, other):
        return _as_tensor(other) - self

    def __mul__(self, other):
        other = _as_tensor(other)
        a, b = self, other
        return Tensor._op(
            a.data * b.data, (a, b),
            lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_tensor(other)
        a, b = self, other
        return Tensor._op(
            a.data / b.data, (a, b),
            lambda g: (_unbroadcast(g / b.data, a.shape),
                       _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))

    def __rtruediv__(self, other):
        return _as_tensor(other) / self

    def __pow__(self, exponent: float):
        a = self
        e = float(exponent)
        return Tensor._op(
            a.data ** e, (a,),
            lambda g: (g * e * a.data ** (e - 1.0),))

    def __matmul__(self, other):
        other = _as_tensor(other)
        a, b = self, other

        def back(g):
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        return Tensor._op(np.matmul(a.data, b.data), (a, b), back)

    # -- elementwise nonlinearities -------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)
        return Tensor._op(out_data, (self,), lambda g: (g * out_data,))

    def log(self):
        return Tensor._op(np.log(self.data), (self,), lambda g: (g / self.data,))

    def tanh(self):
        out_data = np.tanh(self.data)
        return Tensor._op(out_data, (self,), lambda g: (g * (1.0 - out_data * out_data),))

    def abs(self):
        # subgradient 0 at exactly 0
        return Tensor._op(np.abs(self.data), (self,), lambda g: (g * np.sign(self.data),))

    def clamp(self, lo: float, hi: float):
        """Hard clamp; gradient is zero outside [lo, hi]."""
        inside = (self.data >= lo) & (self.data <= hi)
        return Tensor._op(np.clip(self.data, lo, hi), (self,),
                          lambda g: (g * inside,))

    # -- reductions / shape ----------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def back(g):
            if axis is None:
                return (np.broadcast_to(g, a.shape).copy(),)
            g2 = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(g2, a.shape).copy(),)

        return Tensor._op(self.data.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.size
        elif isinstance(axis, tuple):
            n = int(np.prod([self.shape[i] for i in axis]))
        else:
            n = self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max_detached(self, axis=None, keepdims: bool = False) -> "Tensor":
        """Max as a constant (no gradient); used for numerical stabilization."""
        return Tensor(self.data.max(axis=axis, keepdims=keepdims),
                      dtype=self.data.dtype)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return Tensor._op(self.data.reshape(shape), (self,),
                          lambda g: (g.reshape(a.shape),))

    def swapaxes(self, ax1: int, ax2: int):
        return Tensor._op(np.swapaxes(self.data, ax1, ax2), (self,),
                          lambda g: (np.swapaxes(g, ax1, ax2),))

    def transpose(self, *axes):
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)
        return Tensor._op(self.data.transpose(axes), (self,),
                          lambda g: (g.transpose(inv),))

    def __getitem__(self, idx):
        a = self

        def back(g):
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            return (full,)

        return Tensor._op(self.data[idx], (self,), back)

    def take_rows(self, indices: np.ndarray):
        """Fancy-index along axis 0 (embedding-table lookup)."""
        return self[np.asarray(indices)]

    def broadcast_to(self, shape):
        a = self
        return Tensor._op(np.broadcast_to(self.data, shape).copy(), (self,),
                          lambda g: (_unbroadcast(g, a.shape),))


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_DEFAULT_DTYPE))


def as_tensor(x) -> Tensor:
    return _as_tensor(x)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._op(np.concatenate([t.data for t in tensors], axis=axis),
                      tensors, back)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)

    def back(g):
        return tuple(np.moveaxis(g, axis, 0)[i] for i in range(len(tensors)))

    return Tensor._op(np.stack([t.data for t in tensors], axis=axis),
                      tensors, back)


def where_mask(mask: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Select a where mask else b; mask is a constant boolean array."""
    a = _as_tensor(a)
    b = _as_tensor(b)
    return Tensor._op(
        np.where(mask, a.data, b.data), (a, b),
        lambda g: (_unbroadcast(g * mask, a.shape),
                   _unbroadcast(g * ~mask, b.shape)))
