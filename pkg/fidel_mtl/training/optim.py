"""Parameter update rules."""

from __future__ import annotations

from typing import Any, Iterable, Union

import numpy as np

from fidel_mtl.core.tensor import ParamTensor
from fidel_mtl.errors import FormatError, ValidationError
from fidel_mtl.types import Tensor


STATE_PREFIX = "optim."


class SGD:
    name = "sgd"

    def __init__(self, learning_rate: float) -> None:
        self.learning_rate = learning_rate
        self.steps = 0

    def step(self, params: Iterable[ParamTensor]) -> None:
        self.steps += 1
        if self.learning_rate == 0:
            return
        for param in params:
            param.value -= param.value.dtype.type(self.learning_rate) * param.grad

    def state_dict(self) -> tuple[dict[str, Tensor], dict[str, Any]]:
        return {}, {"name": self.name, "steps": self.steps}

    def load_state_dict(self, tensors: dict[str, Tensor], meta: dict[str, Any]) -> None:
        self.steps = int(meta.get("steps", 0))


class Adam:
    """Adaptive moments with bias correction."""

    name = "adam"

    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8) -> None:
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.steps = 0
        self.first: dict[str, Tensor] = {}
        self.second: dict[str, Tensor] = {}

    def step(self, params: Iterable[ParamTensor]) -> None:
        self.steps += 1
        correction1 = 1.0 - self.beta1**self.steps
        correction2 = 1.0 - self.beta2**self.steps
        for param in params:
            dtype = param.value.dtype.type
            first = self.first.setdefault(param.name, np.zeros_like(param.value))
            second = self.second.setdefault(param.name, np.zeros_like(param.value))
            first *= dtype(self.beta1)
            first += dtype(1.0 - self.beta1) * param.grad
            second *= dtype(self.beta2)
            second += dtype(1.0 - self.beta2) * param.grad * param.grad
            if self.learning_rate == 0:
                continue
            update = (first / dtype(correction1)) / (np.sqrt(second / dtype(correction2)) + dtype(self.epsilon))
            param.value -= dtype(self.learning_rate) * update

    def state_dict(self) -> tuple[dict[str, Tensor], dict[str, Any]]:
        tensors: dict[str, Tensor] = {}
        for name in sorted(self.first):
            tensors[f"{STATE_PREFIX}m.{name}"] = self.first[name]
            tensors[f"{STATE_PREFIX}v.{name}"] = self.second[name]
        return tensors, {"name": self.name, "steps": self.steps}

    def load_state_dict(self, tensors: dict[str, Tensor], meta: dict[str, Any]) -> None:
        self.steps = int(meta.get("steps", 0))
        self.first, self.second = {}, {}
        for key, value in tensors.items():
            if not key.startswith(STATE_PREFIX):
                continue
            kind, _, name = key[len(STATE_PREFIX):].partition(".")
            if kind == "m":
                self.first[name] = value.copy()
            elif kind == "v":
                self.second[name] = value.copy()
            else:
                raise FormatError(f"unknown optimizer state tensor '{key}'", 0)


Optimizer = Union[SGD, Adam]


def build_optimizer(name: str, learning_rate: float) -> Optimizer:
    if name == "adam":
        return Adam(learning_rate)
    if name == "sgd":
        return SGD(learning_rate)
    raise ValidationError(f"unknown optimizer '{name}'")
