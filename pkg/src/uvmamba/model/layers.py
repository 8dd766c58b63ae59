"""Parameter containers and basic layers."""

from __future__ import annotations

import math
from dataclasses import is_dataclass
from typing import Iterator

import numpy as np

from ..autodiff import functional as F
from ..autodiff.tensor import Tensor


def parameter(data, dtype) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=True)


class Module:
    """Base class; parameters are discovered from attributes in assignment order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        seen: set[int] = set()
        yield from _walk(self, prefix, seen)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = own.keys() - state.keys()
        unexpected = state.keys() - own.keys()
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)[:5]} unexpected={sorted(unexpected)[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _walk(obj, prefix, seen):
    for key, value in vars(obj).items():
        name = f"{prefix}{key}"
        if isinstance(value, Tensor):
            if value.requires_grad and id(value) not in seen:
                seen.add(id(value))
                yield name, value
        elif isinstance(value, Module) or (is_dataclass(value) and not isinstance(value, type)):
            yield from _walk(value, name + ".", seen)
        elif isinstance(value, (list, tuple)):
            for i, item in enumerate(value):
                if isinstance(item, Tensor):
                    if item.requires_grad and id(item) not in seen:
                        seen.add(id(item))
                        yield f"{name}.{i}", item
                elif isinstance(item, Module) or is_dataclass(item):
                    yield from _walk(item, f"{name}.{i}.", seen)


class Linear(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator, bias: bool = True, dtype=np.float32):
        bound = 1.0 / math.sqrt(cin)
        self.weight = parameter(rng.uniform(-bound, bound, (cin, cout)), dtype)
        self.bias = parameter(np.zeros(cout), dtype) if bias else None

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel: int, rng: np.random.Generator, stride: int = 1,
                 padding: int = 0, groups: int = 1, bias: bool = True, dtype=np.float32):
        fan_in = (cin // groups) * kernel * kernel
        bound = math.sqrt(6.0 / fan_in) / math.sqrt(2.0)
        self.weight = parameter(rng.uniform(-bound, bound, (cout, cin // groups, kernel, kernel)), dtype)
        self.bias = parameter(np.zeros(cout), dtype) if bias else None
        self.stride, self.padding, self.groups = stride, padding, groups

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class ConvTranspose2d(Module):
    def __init__(self, cin: int, cout: int, kernel: int, rng: np.random.Generator, stride: int = 1,
                 padding: int = 0, dtype=np.float32):
        fan_in = cin * kernel * kernel // (stride * stride)
        bound = math.sqrt(3.0 / max(fan_in, 1))
        self.weight = parameter(rng.uniform(-bound, bound, (cin, cout, kernel, kernel)), dtype)
        self.bias = parameter(np.zeros(cout), dtype)
        self.stride, self.padding = stride, padding

    def forward(self, x):
        return F.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class LayerNorm(Module):
    """Normalizes over ``axis``: -1 for token tensors, 1 for NCHW images."""

    def __init__(self, channels: int, axis: int = -1, eps: float = 1e-5, dtype=np.float32):
        self.gamma = parameter(np.ones(channels), dtype)
        self.beta = parameter(np.zeros(channels), dtype)
        self.axis, self.eps = axis, eps

    def forward(self, x):
        return F.layer_norm(x, self.gamma, self.beta, self.eps, self.axis)


class ConvNormAct(Module):
    """conv -> channel LayerNorm -> GELU."""

    def __init__(self, cin, cout, kernel, rng, stride=1, padding=0, dtype=np.float32):
        self.conv = Conv2d(cin, cout, kernel, rng, stride=stride, padding=padding, dtype=dtype)
        self.norm = LayerNorm(cout, axis=1, dtype=dtype)

    def forward(self, x):
        return F.gelu(self.norm(self.conv(x)))
