"""Trainable parameters, grouped by role for selective freezing."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .autodiff import Tensor, default_dtype
from .rng import RngStream

GROUP_TAGS = (
    "proj_L", "proj_l", "proj_V", "proj_v", "proj_S", "proj_s", "proj_shared",
    "match_L", "match_l", "match_v", "match_S", "match_s",
    "obs_encoder", "policy_encoder", "policy_decoder", "heads", "decoder_queries",
)

STAGE2_TRAINABLE = frozenset(
    {"proj_L", "proj_l", "proj_v", "proj_S", "proj_s",
     "match_L", "match_l", "match_v", "match_S", "match_s"})


class Parameter:
    """A named, group-tagged trainable tensor."""

    __slots__ = ("name", "tensor", "_group_tag")

    def __init__(self, name: str, value: np.ndarray, group_tag: str):
        if group_tag not in GROUP_TAGS:
            raise ValueError(f"unknown group_tag {group_tag!r}")
        self.name = name
        self.tensor = Tensor(value, requires_grad=True)
        self._group_tag = group_tag

    @property
    def group_tag(self) -> str:
        return self._group_tag

    @property
    def value(self) -> np.ndarray:
        return self.tensor.data

    @value.setter
    def value(self, arr: np.ndarray):
        if arr.shape != self.tensor.data.shape:
            raise ValueError(f"shape mismatch assigning {self.name}")
        self.tensor.data = np.asarray(arr, dtype=self.tensor.data.dtype)

    @property
    def grad(self) -> np.ndarray:
        g = self.tensor.grad
        return g if g is not None else np.zeros_like(self.tensor.data)

    def zero_grad(self):
        self.tensor.zero_grad()

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.tensor.shape}, group={self.group_tag})"


class ParameterStore:
    """Ordered registry of all parameters in a model."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def register(self, name: str, value: np.ndarray, group_tag: str) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(name, value, group_tag)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def by_group(self, *tags: str) -> list[Parameter]:
        tagset = set(tags)
        return [p for p in self._params.values() if p.group_tag in tagset]

    def zero_grads(self):
        for p in self._params.values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self._params.values()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise ValueError(f"state mismatch: missing={sorted(missing)}, extra={sorted(extra)}")
        for name, arr in state.items():
            self._params[name].value = arr


def linear_init(rng: RngStream, fan_in: int, fan_out: int) -> tuple[np.ndarray, np.ndarray]:
    """Weight [fan_in, fan_out] and bias [fan_out], uniform in ±1/sqrt(fan_in)."""
    bound = 1.0 / math.sqrt(fan_in)
    w = rng.uniform((fan_in, fan_out), -bound, bound)
    b = rng.uniform((fan_out,), -bound, bound)
    dt = default_dtype()
    return w.astype(dt), b.astype(dt)
