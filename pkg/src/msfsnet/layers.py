"""Parameter containers and traversal helpers."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any, Iterator

import numpy as np

from .tensor import Tensor, conv2d, get_default_dtype


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=None) -> Tensor:
    """Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    bound = 1.0 / np.sqrt(fan_in)
    data = rng.uniform(-bound, bound, size=shape).astype(dtype or get_default_dtype())
    return Tensor(data, requires_grad=True)


@dataclass
class Conv:
    weight: Tensor
    bias: Tensor | None
    stride: int = 1
    padding: int = 0

    @classmethod
    def init(cls, rng: np.random.Generator, cin: int, cout: int, k: int, stride: int = 1, bias: bool = True) -> Conv:
        fan_in = cin * k * k
        w = uniform_init(rng, (cout, cin, k, k), fan_in)
        b = uniform_init(rng, (cout,), fan_in) if bias else None
        return cls(w, b, stride, k // 2)

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def zero_(self) -> None:
        self.weight.data[...] = 0
        if self.bias is not None:
            self.bias.data[...] = 0


def named_parameters(obj: Any, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Walk dataclasses, lists and dicts and yield every trainable tensor with a dotted name."""
    if isinstance(obj, Tensor):
        if obj.requires_grad:
            yield prefix, obj
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            yield from named_parameters(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_parameters(item, f"{prefix}.{i}" if prefix else str(i))
    elif isinstance(obj, dict):
        for k, item in obj.items():
            yield from named_parameters(item, f"{prefix}.{k}" if prefix else str(k))


def cast_parameters(obj: Any, dtype) -> None:
    for _, t in named_parameters(obj):
        t.data = t.data.astype(dtype)
        t.grad = None
