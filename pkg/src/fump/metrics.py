"""Planning and motion metrics: horizon L2, disc-overlap collision rate, minADE and CEGR."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

HORIZON_STEPS = {"1s": 2, "2s": 4, "3s": 6}
EGO_RADIUS = 2.0
AGENT_RADIUS = 1.0


def _step_errors(pred, gt) -> np.ndarray:
    d = np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)
    return np.sqrt(np.sum(d * d, axis=-1))


def l2_at_horizons(pred, gt) -> dict[str, float]:
    """Mean displacement error over the steps up to each horizon, plus their average."""
    err = _step_errors(pred, gt)
    if len(err) < max(HORIZON_STEPS.values()):
        raise ValueError(f"need {max(HORIZON_STEPS.values())} steps, got {len(err)}")
    out = {h: float(np.mean(err[:n])) for h, n in HORIZON_STEPS.items()}
    out["avg"] = float(np.mean([out[h] for h in HORIZON_STEPS]))
    return out


def collision_rate(pred, agent_futures, r_e: float = EGO_RADIUS, r_a: float = AGENT_RADIUS) -> dict[str, float]:
    """Collision percentage of one sample (0 or 100 per horizon).

    The ego disc at step t collides when it overlaps any agent disc at the
    same step; a horizon counts every step up to it.
    """
    pred = np.asarray(pred, dtype=np.float64)
    futures = np.asarray(agent_futures, dtype=np.float64).reshape(-1, len(pred), 2)
    if len(futures):
        hit = np.any(_step_errors(futures, pred[None]) < r_e + r_a, axis=0)
    else:
        hit = np.zeros(len(pred), dtype=bool)
    out = {h: 100.0 * float(np.any(hit[:n])) for h, n in HORIZON_STEPS.items()}
    out["avg"] = float(np.mean([out[h] for h in HORIZON_STEPS]))
    return out


def min_ade(proposals, gt) -> float:
    """Smallest mean per-step L2 over the K proposals."""
    p = np.asarray(proposals, dtype=np.float64)
    if p.ndim != 3 or len(p) == 0:
        raise ValueError("proposals must be K x T x 2 with K >= 1")
    return float(np.min(np.mean(_step_errors(p, np.asarray(gt)[None]), axis=1)))


def cegr(acc: float, acc_base: float, d_ego: float, d_total: float, lower_is_better: bool = True) -> float:
    """Cross-vehicle efficiency gain ratio in percent."""
    if d_total == 0:
        raise ValueError("d_total must be nonzero")
    if acc_base == 0:
        raise ValueError("acc_base must be nonzero")
    if not 0 < d_ego <= d_total:
        raise ValueError("need 0 < d_ego <= d_total")
    gain = (acc_base - acc) / acc_base if lower_is_better else (acc - acc_base) / acc_base
    return gain * (1.0 - d_ego / d_total) * 100.0


def data_ratio(scenes) -> tuple[int, int]:
    """(ego trajectories, ego + agent trajectories) in a training set."""
    n_ego = len(scenes)
    n_agents = sum(len(s.agents) - 1 for s in scenes)
    return n_ego, n_ego + n_agents


@dataclass
class EvalReport:
    l2: dict[str, float]
    collision: dict[str, float]
    n_samples: int
    config_hash: str
    state_mode: str = "ground_truth"
    min_ade: float | None = None
    cegr: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_text(self) -> str:
        cols = list(HORIZON_STEPS) + ["avg"]
        lines = [f"samples: {self.n_samples}  config: {self.config_hash}  state: {self.state_mode}",
                 "metric        " + "".join(f"{c:>9}" for c in cols),
                 "L2 (m)        " + "".join(f"{self.l2[c]:9.4f}" for c in cols),
                 "Col. Rate (%) " + "".join(f"{self.collision[c]:9.3f}" for c in cols)]
        if self.min_ade is not None:
            lines.append(f"minADE (m)    {self.min_ade:9.4f}")
        for k, v in self.cegr.items():
            lines.append(f"CEGR {k} (%)  {v:9.3f}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["horizon", "l2", "collision"])
        for h in list(HORIZON_STEPS) + ["avg"]:
            w.writerow([h, repr(self.l2[h]), repr(self.collision[h])])
        return buf.getvalue()


def aggregate(l2s: list[dict], cols: list[dict]) -> tuple[dict, dict]:
    """Mean of per-sample horizon dictionaries, in a fixed key order."""
    keys = list(HORIZON_STEPS) + ["avg"]
    return ({k: float(np.mean([d[k] for d in l2s])) for k in keys},
            {k: float(np.mean([d[k] for d in cols])) for k in keys})
