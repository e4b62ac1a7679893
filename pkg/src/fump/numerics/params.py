from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor


class ParameterStore:
    """Named trainable tensors with their gradient buffers.

    Parameters are leaf tensors; ``backward`` writes into ``tensor.grad``.
    Names are unique and insertion order is preserved, which keeps
    checkpoints and optimizer sweeps deterministic.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise KeyError(f"unknown parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def grad(self, name: str) -> np.ndarray:
        return self[name].grad

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def set(self, name: str, value) -> None:
        """Overwrite a parameter value in place (shape must match)."""
        t = self[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != t.data.shape:
            raise ValueError(f"{name}: shape {value.shape} != {t.data.shape}")
        t.data = value.copy()

    def num_values(self) -> int:
        return sum(t.size for t in self._params.values())

    def clone(self) -> "ParameterStore":
        out = ParameterStore()
        for name, t in self._params.items():
            out.add(name, t.data.copy())
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._params.items()}
