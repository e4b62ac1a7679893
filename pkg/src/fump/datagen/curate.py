"""Long-tail subset selection from OPTICS clusters of ego futures."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..scene import Scene
from .optics import ClusterResult, coarsest_cut, extract_flat, optics


@dataclass
class CurateResult:
    scenes: list[Scene]
    indices: np.ndarray
    clusters: ClusterResult
    selected_labels: list[int]
    warnings: list[str] = field(default_factory=list)


def ego_features(scenes: list[Scene]) -> np.ndarray:
    return np.stack([s.ego_future_gt.reshape(-1) for s in scenes])


def curate_longtail(scenes: list[Scene], k_smallest: int, min_pts: int = 5) -> CurateResult:
    """Scenes in the ``k_smallest`` smallest clusters (noise excluded).

    The flat cut is the coarsest reachability level that still resolves
    ``k_smallest + 1`` clusters, so the bulk of the data stays one cluster and
    the selected ones are its most distinct satellites.
    """
    if k_smallest < 0:
        raise ValueError("k_smallest must be >= 0")
    res = optics(ego_features(scenes), min_pts)
    warnings = []
    if k_smallest > 0:
        eps = coarsest_cut(res.ordering, res.reachability, res.core_distances, k_smallest + 1)
        if eps is not None:
            res.labels = extract_flat(res.ordering, res.reachability, res.core_distances, eps)
            res.threshold = eps
            ids, counts = np.unique(res.labels[res.labels >= 0], return_counts=True)
            res.sizes = {int(i): int(c) for i, c in zip(ids, counts)}
    if len(res.sizes) < k_smallest:
        warnings.append(f"only {len(res.sizes)} clusters for k_smallest={k_smallest}; returning all clustered scenes")
        chosen = sorted(res.sizes)
    else:
        chosen = sorted(res.sizes, key=lambda lab: (res.sizes[lab], lab))[:k_smallest]
    idx = np.flatnonzero(np.isin(res.labels, chosen))
    return CurateResult([scenes[i] for i in idx], idx, res, sorted(chosen), warnings)
