"""Hard-sample memory: an EMA-gated, fixed-capacity queue of high-loss motion samples."""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Context, Decimal
from fractions import Fraction

import numpy as np

from .numerics import MLP, ParameterStore, Tensor
from .numerics.tensor import concat

CAPACITY = 700
GAMMA = 0.2

# the queue threshold is accumulated at 80 significant digits so that its
# double view stays the correctly rounded value of the closed-form EMA
_EMA = Context(prec=80)


@dataclass
class MemoryEntry:
    trajectory: np.ndarray
    loss: float
    embedding: np.ndarray

    def __post_init__(self):
        self.trajectory = np.asarray(self.trajectory, dtype=np.float64)
        self.embedding = np.asarray(self.embedding, dtype=np.float64)
        if not (self.loss >= 0.0 and np.isfinite(self.loss)):
            raise ValueError(f"memory loss must be finite and >= 0, got {self.loss}")


def update_threshold(eps_prev: float, batch_mean_loss: float, gamma: float = GAMMA) -> float:
    """EMA threshold: gamma * previous + (1 - gamma) * current batch mean loss.

    Evaluated exactly and rounded once, so the result is the nearest double
    to the true value (this runs once per batch, cost is irrelevant).
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    g = Fraction(gamma)
    return float(g * Fraction(eps_prev) + (1 - g) * Fraction(batch_mean_loss))


class HardSampleQueue:
    def __init__(self, capacity: int = CAPACITY, gamma: float = GAMMA, threshold=0.0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if not 0.0 < gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        self.capacity = capacity
        self.gamma = gamma
        self._eps = Decimal(threshold)  # exact for floats, accepts decimal strings from checkpoints
        self.entries: list[MemoryEntry] = []

    @property
    def threshold(self) -> float:
        return float(self._eps)

    @property
    def threshold_text(self) -> str:
        """Full-precision threshold, for checkpoints."""
        return str(self._eps)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def full(self) -> bool:
        return len(self.entries) >= self.capacity

    def losses(self) -> np.ndarray:
        return np.array([e.loss for e in self.entries])

    def update_threshold(self, batch_mean_loss: float) -> float:
        g = Decimal(self.gamma)
        self._eps = _EMA.add(_EMA.multiply(g, self._eps),
                             _EMA.multiply(_EMA.subtract(Decimal(1), g), Decimal(batch_mean_loss)))
        return self.threshold

    def snapshot(self) -> "HardSampleQueue":
        q = HardSampleQueue(self.capacity, self.gamma, self._eps)
        q.entries = list(self.entries)
        return q

    def trajectories(self) -> np.ndarray:
        if not self.entries:
            return np.zeros((0, 0, 2))
        return np.stack([e.trajectory for e in self.entries])


def batch_update(queue: HardSampleQueue, candidates: list[MemoryEntry], rng: np.random.Generator) -> list[int]:
    """Admit candidates above the threshold with lowest-loss eviction, then refresh one random slot.

    Returns the indices (into ``candidates``) that were admitted through the
    gate. The random refresh writes the highest-loss candidate that was not
    admitted into a uniformly chosen slot; it runs only when something was
    admitted and such a candidate exists.
    """
    admitted = []
    for i, c in enumerate(candidates):
        if not c.loss > queue.threshold:
            continue
        if not queue.full:
            queue.entries.append(c)
            admitted.append(i)
            continue
        losses = queue.losses()
        j = int(np.argmin(losses))
        if c.loss > losses[j]:
            queue.entries[j] = c
            admitted.append(i)
    if admitted and queue.entries:
        taken = set(admitted)
        rest = [i for i in range(len(candidates)) if i not in taken]
        if rest:
            best = max(rest, key=lambda i: (candidates[i].loss, -i))
            slot = int(rng.integers(len(queue.entries)))
            queue.entries[slot] = candidates[best]
    return admitted


def trajectory_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Mean per-step Euclidean distance; broadcasts over leading axes."""
    d = a - b
    return np.mean(np.sqrt(np.sum(d * d, axis=-1)), axis=-1)


def match(queue: HardSampleQueue, trajectory: np.ndarray) -> MemoryEntry | None:
    """Closest stored sample by mean per-step distance; ties resolve to the earliest slot."""
    if not queue.entries:
        return None
    d = trajectory_distance(queue.trajectories(), np.asarray(trajectory)[None])
    return queue.entries[int(np.argmin(d))]


@dataclass(frozen=True)
class FusionParams:
    encode: MLP   # flattened trajectory -> d
    fusion: MLP   # [query, encoded trajectory] -> d

    @classmethod
    def create(cls, store: ParameterStore, rng, d: int, horizon: int, hidden: int, prefix: str = "memory"):
        from .numerics import mlp_sizes
        return cls(MLP(f"{prefix}.psi", mlp_sizes(2 * horizon, d, hidden)).init(store, rng),
                   MLP(f"{prefix}.fusion", mlp_sizes(2 * d, d, hidden)).init(store, rng))


TRAJ_SCALE = 10.0


def fuse(store: ParameterStore, params: FusionParams, query: Tensor, trajectories: np.ndarray) -> Tensor:
    """Fusion(query, encode(trajectory)) row-wise; ``trajectories`` is R x T x 2."""
    flat = np.asarray(trajectories).reshape(len(trajectories), -1) / TRAJ_SCALE
    return params.fusion(store, concat([query, params.encode(store, flat)], axis=-1))


def queue_arrays(queue: HardSampleQueue) -> dict[str, np.ndarray]:
    """Tensor view of a queue for checkpointing."""
    if queue.entries:
        return {"memory.trajectories": queue.trajectories(),
                "memory.losses": queue.losses(),
                "memory.embeddings": np.stack([e.embedding for e in queue.entries])}
    return {"memory.trajectories": np.zeros((0, 0, 2)), "memory.losses": np.zeros(0),
            "memory.embeddings": np.zeros((0, 0))}


def queue_from_arrays(arrays: dict, capacity: int, gamma: float, threshold) -> HardSampleQueue:
    q = HardSampleQueue(capacity, gamma, threshold)
    for t, l, e in zip(arrays["memory.trajectories"], arrays["memory.losses"], arrays["memory.embeddings"]):
        q.entries.append(MemoryEntry(t, float(l), e))
    return q
