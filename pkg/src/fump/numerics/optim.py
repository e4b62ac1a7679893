from __future__ import annotations

import numpy as np

from .params import ParameterStore


class Adam:
    """Adam with bias correction; moments persist across ``step`` calls."""

    def __init__(self, lr: float = 3e-4, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, store: ParameterStore) -> None:
        adam_step(store, self, self.lr, self.betas, self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}


def adam_step(store: ParameterStore, opt: Adam, lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    b1, b2 = betas
    opt.t += 1
    c1 = 1.0 - b1 ** opt.t
    c2 = 1.0 - b2 ** opt.t
    for name, p in store.items():
        g = p.grad
        if g is None:
            continue
        m = opt.m.get(name)
        if m is None:
            m = opt.m[name] = np.zeros_like(p.data)
            opt.v[name] = np.zeros_like(p.data)
        v = opt.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
