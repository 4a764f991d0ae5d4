"""Parameter containers and the small set of layers the models use."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ContractError
from .tensor import Tensor


def Parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=T.DTYPE), requires_grad=True)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) samples redrawn until they fall within two std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _walk(val, name: str):
    if isinstance(val, Tensor):
        if val.requires_grad:
            yield name, val
    elif isinstance(val, Module):
        yield from val.named_parameters(name + ".")
    elif isinstance(val, (list, tuple)):
        for i, item in enumerate(val):
            yield from _walk(item, f"{name}.{i}")


class Module:
    """Base class; parameters are discovered from instance attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            yield from _walk(val, f"{prefix}{key}")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise ContractError(f"parameter mismatch; missing={missing[:5]} unexpected={extra[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=T.DTYPE)
            if arr.shape != p.shape:
                raise ContractError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 bias: bool = True, zero_init: bool = False):
        w = np.zeros((d_in, d_out)) if zero_init else trunc_normal(rng, (d_in, d_out))
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x):
        return T.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator,
                 stride: int = 1, pad: int = 0, zero_init: bool = False):
        fan_in = c_in * k * k
        shape = (c_out, c_in, k, k)
        self.weight = Parameter(np.zeros(shape) if zero_init else kaiming_uniform(rng, shape, fan_in))
        self.bias = Parameter(np.zeros(c_out) if zero_init else kaiming_uniform(rng, c_out, fan_in))
        self.stride = stride
        self.pad = pad

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.weight = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))
        self.eps = eps

    def forward(self, x):
        return T.layernorm(x, self.weight, self.bias, self.eps)


class MLP(Module):
    """Two linear layers with a GELU in between."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator,
                 zero_init_last: bool = False):
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_out, rng, zero_init=zero_init_last)

    def forward(self, x):
        return self.fc2(T.gelu(self.fc1(x)))


def to_channels_last(x):
    """(B, C, H, W) -> (B, H, W, C)."""
    return T.transpose(x, (0, 2, 3, 1))


def to_channels_first(x):
    """(B, H, W, C) -> (B, C, H, W)."""
    return T.transpose(x, (0, 3, 1, 2))
