"""Parameter-holding layers: Linear and Conv1d wrappers over the tensor ops.

Layers own their weight tensors and expose a stable named traversal so the
optimizer, checksummer, and checkpoint writer all see parameters in the
same order.
"""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from gaf import tensor as gt
from gaf.tensor import Tensor


def _uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.w = Tensor(_uniform_init(rng, (d_in, d_out), d_in), requires_grad=True)
        self.b = Tensor(_uniform_init(rng, (d_out,), d_in), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.w
        if self.b is not None:
            y = y + self.b
        return y

    def named_params(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.w", self.w
        if self.b is not None:
            yield f"{prefix}.b", self.b


class Conv1d:
    """Temporal conv over x[T, d_in]; weight layout [k, d_in, d_out]."""

    def __init__(
        self,
        k: int,
        d_in: int,
        d_out: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: str = "same",
        bias: bool = True,
    ):
        fan_in = k * d_in
        self.w = Tensor(_uniform_init(rng, (k, d_in, d_out), fan_in), requires_grad=True)
        self.b = Tensor(_uniform_init(rng, (d_out,), fan_in), requires_grad=True) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return gt.conv1d(x, self.w, self.b, stride=self.stride, padding=self.padding)

    def named_params(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.w", self.w
        if self.b is not None:
            yield f"{prefix}.b", self.b


def set_requires_grad(named, flag: bool) -> None:
    for _, p in named:
        p.requires_grad = flag


def collect(named) -> list[tuple[str, Tensor]]:
    return list(named)
