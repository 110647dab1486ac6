"""Parameter containers and initializers shared by all model blocks."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .autodiff import RngStream, Tensor, get_dtype


def uniform_fan_in(rng: RngStream, shape: tuple, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape).astype(get_dtype()), requires_grad=True)


def constant(shape: tuple, value: float) -> Tensor:
    return Tensor(np.full(shape, value, dtype=get_dtype()), requires_grad=True)


class Module:
    """Holds named parameters in ``self.params`` plus child modules as attributes."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, val in vars(self).items():
            if isinstance(val, Module):
                yield name, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self.params.items():
            yield prefix + name, p
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def add_linear(self, rng: RngStream, name: str, d_in: int, d_out: int, bias: bool = True):
        self.params[f"w_{name}"] = uniform_fan_in(rng, (d_in, d_out), d_in)
        if bias:
            self.params[f"b_{name}"] = uniform_fan_in(rng, (d_out,), d_in)

    def add_layer_norm(self, name: str, d: int):
        self.params[f"{name}_gamma"] = constant((d,), 1.0)
        self.params[f"{name}_beta"] = constant((d,), 0.0)
