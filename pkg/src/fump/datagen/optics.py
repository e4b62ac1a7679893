"""OPTICS ordering with a flat reachability cut, plus long-tail curation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CUT_PERCENTILE = 75.0
GAP_RATIO = 4.0


@dataclass
class ClusterResult:
    labels: np.ndarray          # -1 marks noise
    ordering: np.ndarray
    reachability: np.ndarray    # indexed by sample, inf where undefined
    core_distances: np.ndarray
    threshold: float
    sizes: dict[int, int] = field(default_factory=dict)


def pairwise_distances(x: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Euclidean distances from explicit differences (no Gram-matrix cancellation)."""
    out = np.empty((len(x), len(x)))
    for lo in range(0, len(x), chunk):
        d = x[lo:lo + chunk, None, :] - x[None, :, :]
        out[lo:lo + chunk] = np.sqrt(np.sum(d * d, axis=-1))
    return out


def core_distances(dist: np.ndarray, min_pts: int, max_eps: float = np.inf) -> np.ndarray:
    """Distance to the min_pts-th nearest sample (the sample itself counts as the first)."""
    core = np.partition(dist, min_pts - 1, axis=1)[:, min_pts - 1]
    core[core > max_eps] = np.inf
    return core


def optics_order(dist: np.ndarray, core: np.ndarray, max_eps: float = np.inf) -> tuple[np.ndarray, np.ndarray]:
    """Cluster ordering and reachability distances.

    The next point is the unprocessed one with the smallest reachability;
    ties go to the lowest index.
    """
    n = len(dist)
    reach = np.full(n, np.inf)
    processed = np.zeros(n, dtype=bool)
    order = np.empty(n, dtype=int)
    for step in range(n):
        left = np.flatnonzero(~processed)
        p = left[np.argmin(reach[left])]
        processed[p] = True
        order[step] = p
        if np.isfinite(core[p]):
            cand = np.flatnonzero(~processed & (dist[p] <= max_eps))
            r = np.maximum(dist[p, cand], core[p])
            reach[cand] = np.minimum(reach[cand], r)
    return order, reach


def extract_flat(order: np.ndarray, reach: np.ndarray, core: np.ndarray, eps: float) -> np.ndarray:
    """DBSCAN-equivalent labels at threshold ``eps`` read off the ordering."""
    labels = np.zeros(len(order), dtype=int)
    far = reach > eps
    near_core = core <= eps
    labels[order] = np.cumsum(far[order] & near_core[order]) - 1
    labels[far & ~near_core] = -1
    return labels


def default_threshold(reach: np.ndarray, percentile: float = CUT_PERCENTILE, gap_ratio: float = GAP_RATIO) -> float:
    """Flat-cut level read off the reachability plot.

    When consecutive sorted reachabilities at or above the given percentile
    jump by at least ``gap_ratio`` the data has well separated groups and the
    cut goes inside the largest such jump (geometric mean of its ends).
    Otherwise the cut is the percentile itself.
    """
    finite = np.sort(reach[np.isfinite(reach)])
    if len(finite) == 0:
        return np.inf
    level = float(np.percentile(finite, percentile))
    pos = finite[(finite >= level) & (finite > 0)]
    if len(pos) >= 2:
        ratios = pos[1:] / pos[:-1]
        i = int(np.argmax(ratios))
        if ratios[i] >= gap_ratio:
            return float(np.sqrt(pos[i] * pos[i + 1]))
    return level


def optics(points, min_pts: int = 5, max_eps: float = np.inf, threshold: float | None = None) -> ClusterResult:
    x = np.asarray(points, dtype=np.float64)
    x = x.reshape(len(x), -1)
    if len(x) < min_pts:
        raise ValueError(f"need at least min_pts={min_pts} samples, got {len(x)}")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    dist = pairwise_distances(x)
    core = core_distances(dist, min_pts, max_eps)
    order, reach = optics_order(dist, core, max_eps)
    eps = default_threshold(reach) if threshold is None else float(threshold)
    labels = extract_flat(order, reach, core, eps)
    ids, counts = np.unique(labels[labels >= 0], return_counts=True)
    return ClusterResult(labels, order, reach, core, eps, {int(i): int(c) for i, c in zip(ids, counts)})


def coarsest_cut(order: np.ndarray, reach: np.ndarray, core: np.ndarray, n_clusters: int) -> float | None:
    """Highest reachability level whose flat cut yields at least ``n_clusters`` clusters."""
    levels = np.unique(np.concatenate([reach[np.isfinite(reach)], core[np.isfinite(core)]]))
    for eps in levels[::-1]:
        if extract_flat(order, reach, core, eps).max() + 1 >= n_clusters:
            return float(eps)
    return None
