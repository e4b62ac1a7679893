"""Neural building blocks on top of the tape: MLPs and cross-attention."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import ParameterStore
from .tensor import Tensor, as_tensor, concat, exp, matmul, segment_softmax, segment_sum, silu, tsum

HIDDEN = 64


def mlp_forward(layers: list[tuple[Tensor, Tensor]], x, name: str = "mlp") -> Tensor:
    """Affine layers with SiLU between them and an identity output."""
    h = as_tensor(x)
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        if h.shape[-1] != w.shape[0]:
            raise ValueError(
                f"{name} layer {i}: input width {h.shape[-1]} does not match weight rows {w.shape[0]}")
        h = matmul(h, w) + b
        if i < last:
            h = silu(h)
    return h


@dataclass(frozen=True)
class MLP:
    """Handle to an MLP whose weights live in a ParameterStore under ``prefix``."""

    prefix: str
    sizes: tuple[int, ...]

    def init(self, store: ParameterStore, rng: np.random.Generator, out_scale: float = 1.0) -> "MLP":
        last = len(self.sizes) - 2
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            std = math.sqrt(2.0 / (fan_in + fan_out))
            if i == last:
                std *= out_scale
            store.add(f"{self.prefix}.{i}.w", rng.normal(0.0, std, size=(fan_in, fan_out)))
            store.add(f"{self.prefix}.{i}.b", np.zeros(fan_out))
        return self

    def layers(self, store: ParameterStore) -> list[tuple[Tensor, Tensor]]:
        n = len(self.sizes) - 1
        return [(store[f"{self.prefix}.{i}.w"], store[f"{self.prefix}.{i}.b"]) for i in range(n)]

    def __call__(self, store: ParameterStore, x) -> Tensor:
        return mlp_forward(self.layers(store), x, self.prefix)

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]


def mlp_sizes(d_in: int, d_out: int, hidden: int = HIDDEN, depth: int = 2) -> tuple[int, ...]:
    return (d_in,) + (hidden,) * depth + (d_out,)


@dataclass(frozen=True)
class Attention:
    """Single-head cross-attention with query/key/value/output projections."""

    prefix: str
    dim: int

    def init(self, store: ParameterStore, rng: np.random.Generator) -> "Attention":
        std = 1.0 / math.sqrt(self.dim)
        for p in ("q", "k", "v", "o"):
            store.add(f"{self.prefix}.{p}", rng.normal(0.0, std, size=(self.dim, self.dim)))
        return self

    def init_identity(self, store: ParameterStore) -> "Attention":
        for p in ("q", "k", "v", "o"):
            store.add(f"{self.prefix}.{p}", np.eye(self.dim))
        return self

    def weights(self, store: ParameterStore):
        return tuple(store[f"{self.prefix}.{p}"] for p in ("q", "k", "v", "o"))


def cross_attention(q, k, v, proj, return_weights: bool = False):
    """Dense cross-attention: row i of the output is softmax(q_i K^T / sqrt(d)) V.

    ``proj`` is a (Wq, Wk, Wv, Wo) tuple applied before/after the weighting.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if k.shape[0] == 0:
        raise ValueError("empty key set")
    wq, wk, wv, wo = proj
    d = wq.shape[1]
    qp, kp, vp = q @ wq, k @ wk, v @ wv
    logits = (qp @ kp.T) * (1.0 / math.sqrt(d))
    shifted = logits - np.max(logits.data, axis=1, keepdims=True)
    e = exp(shifted)
    w = e / tsum(e, axis=1, keepdims=True)
    out = (w @ vp) @ wo
    return (out, w) if return_weights else out


def grouped_cross_attention(q, k, v, pair_q: np.ndarray, pair_k: np.ndarray, proj,
                            return_weights: bool = False):
    """Cross-attention restricted to an explicit list of (query, key) pairs.

    Each query attends only to the keys it is paired with; this lets one call
    serve many independent attention problems (one per scene or per zone) in
    a batched graph. Every query row must have at least one pair.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    n_q = q.shape[0]
    if k.shape[0] == 0 or len(pair_q) == 0:
        raise ValueError("empty key set")
    counts = np.bincount(pair_q, minlength=n_q)
    if np.any(counts == 0):
        raise ValueError("empty key set for query rows %s" % np.flatnonzero(counts == 0).tolist())
    wq, wk, wv, wo = proj
    d = wq.shape[1]
    qp, kp, vp = q @ wq, k @ wk, v @ wv
    logits = tsum(qp[pair_q] * kp[pair_k], axis=1) * (1.0 / math.sqrt(d))
    w = segment_softmax(logits, pair_q, n_q)
    mixed = segment_sum(vp[pair_k] * w.reshape(-1, 1), pair_q, n_q)
    out = mixed @ wo
    return (out, w) if return_weights else out


def concat_features(parts) -> Tensor:
    return concat(parts, axis=-1)
