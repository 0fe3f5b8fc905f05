"""Parameter containers, training configuration and momentum SGD."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .tensor import StateError, Tensor


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    momentum: float = 0.9
    dropout_prob: float = 0.5
    batch_images: int = 5
    pixels_per_image: int = 1000
    batch_size: int = 32
    steps: int = 1000
    seed: int = 0
    weight_decay: float = 0.0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ValueError("dropout_prob must be in [0, 1)")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


class ParameterSet:
    """Named trainable tensors with one momentum buffer each."""

    def __init__(self, params: dict[str, Tensor] | None = None):
        self._params: dict[str, Tensor] = {}
        self._velocity: dict[str, np.ndarray] = {}
        for name, t in (params or {}).items():
            self.add(name, t)

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = True
        tensor.name = name
        self._params[name] = tensor
        self._velocity[name] = np.zeros_like(tensor.data)
        return tensor

    def update(self, other: "ParameterSet", prefix: str = "") -> None:
        for name, t in other.items():
            self.add(prefix + name, t)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def velocity(self, name: str) -> np.ndarray:
        return self._velocity[name]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, t in self._params.items():
            if k not in state:
                raise KeyError(f"checkpoint lacks parameter {k!r}")
            arr = np.asarray(state[k])
            if arr.shape != t.shape:
                raise ValueError(f"parameter {k!r}: shape {arr.shape} != {t.shape}")
            t.data = arr.astype(t.dtype)


def sgd_step(params: ParameterSet, config: TrainConfig) -> ParameterSet:
    """One momentum SGD update, ``v <- mu v + g; w <- w - lr v``, then zero grads."""
    for name, t in params.items():
        if t.grad is None:
            raise StateError(f"parameter {name!r} has no gradient")
    for name, t in params.items():
        g = t.grad
        if config.weight_decay:
            g = g + config.weight_decay * t.data
        v = params._velocity[name]
        v *= config.momentum
        v += g
        t.data -= (config.learning_rate * v).astype(t.dtype)
        t.grad = np.zeros_like(t.data)
    return params
