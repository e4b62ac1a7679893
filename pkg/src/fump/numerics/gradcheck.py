from __future__ import annotations

from typing import Callable

import numpy as np

from .params import ParameterStore
from .tensor import Tensor, backward


def finite_diff_check(f: Callable[[ParameterStore], Tensor], store: ParameterStore, step: float = 1e-6,
                      n_coords: int | None = 64, rng: np.random.Generator | None = None,
                      names: list[str] | None = None) -> float:
    """Largest relative disagreement between tape gradients and central differences.

    The error at a coordinate is |analytic - numeric| / max(1, |numeric|).
    ``n_coords`` coordinates are sampled uniformly over all selected
    parameters (``None`` checks every coordinate).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    names = list(store) if names is None else names

    loss = f(store)
    if not np.all(np.isfinite(loss.data)):
        raise FloatingPointError("objective is not finite")
    backward(loss, store)
    analytic = {n: store.grad(n).copy() for n in names}

    coords = [(n, i) for n in names for i in range(store[n].size)]
    if n_coords is not None and n_coords < len(coords):
        picks = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[j] for j in sorted(picks)]

    worst = 0.0
    for name, i in coords:
        p = store[name]
        flat = p.data.reshape(-1)
        orig = flat[i]
        flat[i] = orig + step
        up = f(store).item()
        flat[i] = orig - step
        down = f(store).item()
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise FloatingPointError(f"objective is not finite near {name}[{i}]")
        numeric = (up - down) / (2.0 * step)
        err = abs(analytic[name].reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst
