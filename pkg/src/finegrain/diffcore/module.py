"""Parameter containers with a fixed declaration order."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import ops
from .tensor import Tensor


class Module:
    """Collects parameters from attributes in the order they were assigned.

    Declaration order is the checkpoint order, so it must not depend on
    anything but the constructor code.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


def uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, gain: float = math.sqrt(2.0)) -> np.ndarray:
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, gain: float = 1.0):
        self.weight = Tensor(uniform_fan_in(rng, (d_in, d_out), d_in, gain), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True)
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ops.ShapeError(f"linear: input width {x.shape[-1]} does not match {self.d_in}")
        return ops.add_bias(ops.matmul(x, self.weight), self.bias, axis=-1)


class Conv2d(Module):
    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, kernel: int = 3,
                 stride: int = 1, padding: int | None = None, gain: float = math.sqrt(2.0)):
        fan_in = c_in * kernel * kernel
        self.weight = Tensor(uniform_fan_in(rng, (c_out, c_in, kernel, kernel), fan_in, gain), requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True)
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.conv2d(x, self.weight, stride=self.stride, padding=self.padding)
        return ops.add_bias(y, self.bias, axis=1)
