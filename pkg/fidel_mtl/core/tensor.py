"""Parameter bookkeeping and dtype helpers for the tensor engine."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from fidel_mtl.errors import DimensionError
from fidel_mtl.types import Tensor


TRAIN_DTYPE = np.float32
CHECK_DTYPE = np.float64


@dataclass
class ParamTensor:
    name: str
    value: Tensor
    grad: Tensor = field(init=False)
    regularized: bool = True
    head: str | None = None

    def __post_init__(self) -> None:
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def astype(self, dtype) -> "ParamTensor":
        return ParamTensor(
            name=self.name,
            value=self.value.astype(dtype, copy=True),
            regularized=self.regularized,
            head=self.head,
        )


@dataclass
class Parameters:
    """Ordered, uniquely named parameter list (trunk first, then heads)."""

    items: list[ParamTensor]

    def __post_init__(self) -> None:
        names = [item.name for item in self.items]
        if len(names) != len(set(names)):
            raise ValueError(f"parameter names must be unique: {names}")
        self._by_name = {item.name: item for item in self.items}

    def __iter__(self) -> Iterator[ParamTensor]:
        return iter(self.items)

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, name: str) -> ParamTensor:
        return self._by_name[name]

    def names(self) -> list[str]:
        return [item.name for item in self.items]

    def zero_grad(self) -> None:
        for item in self.items:
            item.zero_grad()

    def count(self) -> int:
        return int(sum(item.value.size for item in self.items))


def require_shape(name: str, actual: tuple[int, ...], expected: tuple[int, ...]) -> None:
    if tuple(actual) != tuple(expected):
        raise DimensionError(f"{name}: expected shape {tuple(expected)}, got {tuple(actual)}")


def assert_finite(name: str, tensor: Tensor) -> None:
    if not np.all(np.isfinite(tensor)):
        raise FloatingPointError(f"{name} contains NaN or Inf")
