"""Unified two-stage trajectory decoder.

Stage I decodes K proposals for the ego (plan query) and for the other agents
(motion query) with one shared head. Stage II refines the ego proposals given
the (possibly masked) ego state and an optional memory match. All
trajectories are in the owning agent's t0 frame: heading along +y, +x to the
right.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .memory import FusionParams, HardSampleQueue, fuse, match
from .numerics import MLP, Attention, ParameterStore, Tensor, grouped_cross_attention, mlp_sizes
from .numerics.nn import HIDDEN
from .numerics.tensor import concat, cumsum, logsumexp, mean, norm, relu, reshape, tsum
from .scene import HISTORY, HORIZON, AgentRecord, EgoState, MapPolyline, Scene, history_encoding, to_local

K_MODES = 6
STEP_SCALE = 2.0      # metres per unit of a displacement output
TRAJ_SCALE = 10.0     # trajectories are divided by this before being embedded
STATE_SCALE = np.array([10.0, 0.5, 2.0])   # speed, yaw rate, accel
MASK_PROB = 0.0625


@dataclass(frozen=True)
class DecoderParams:
    d: int
    k: int
    t: int
    q_plan: str
    q_motion: str
    ca: Attention
    tdc: MLP
    stp: MLP
    state_embed: MLP
    traj_embed: MLP
    refine: MLP

    @classmethod
    def create(cls, store: ParameterStore, rng, d: int = HIDDEN, hidden: int = HIDDEN, k: int = K_MODES,
               t: int = HORIZON, history: int = HISTORY, prefix: str = "uttd") -> "DecoderParams":
        n_out = k * t * 2 + k
        store.add(f"{prefix}.q_plan", rng.normal(0.0, 1.0, size=(1, d)))
        store.add(f"{prefix}.q_motion", rng.normal(0.0, 1.0, size=(1, d)))
        return cls(
            d=d, k=k, t=t, q_plan=f"{prefix}.q_plan", q_motion=f"{prefix}.q_motion",
            ca=Attention(f"{prefix}.ca", d).init(store, rng),
            tdc=MLP(f"{prefix}.tdc", mlp_sizes(d, n_out, hidden)).init(store, rng),
            stp=MLP(f"{prefix}.stp", mlp_sizes(d + 2 * history, 3, hidden)).init(store, rng),
            state_embed=MLP(f"{prefix}.state", mlp_sizes(3, d, hidden)).init(store, rng),
            traj_embed=MLP(f"{prefix}.traj", mlp_sizes(k * t * 2, d, hidden)).init(store, rng),
            refine=MLP(f"{prefix}.refine", mlp_sizes(3 * d, n_out, hidden)).init(store, rng, out_scale=0.1),
        )


@dataclass
class QueryBank:
    """Learned base queries; per-row queries add the agent's own node embedding."""

    q_plan: Tensor     # 1 x d
    q_motion: Tensor   # 1 x d

    @classmethod
    def of(cls, store: ParameterStore, params: DecoderParams) -> "QueryBank":
        return cls(store[params.q_plan], store[params.q_motion])


@dataclass
class Proposals:
    queries: Tensor    # R x d, after cross-attention
    trajs: Tensor      # R x K x T x 2
    scores: Tensor     # R x K


def _split_head(out: Tensor, k: int, t: int) -> tuple[Tensor, Tensor]:
    n = k * t * 2
    disp = reshape(out[:, :n], (-1, k, t, 2)) * STEP_SCALE
    return cumsum(disp, axis=2), out[:, n:]


def scene_pairs(row_scene: np.ndarray, offsets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(query row, key node) pairs letting each row attend to every node of its scene."""
    sizes = offsets[row_scene + 1] - offsets[row_scene]
    pair_q = np.repeat(np.arange(len(row_scene)), sizes)
    starts = np.repeat(offsets[row_scene], sizes)
    within = np.arange(len(pair_q)) - np.repeat(np.cumsum(sizes) - sizes, sizes)
    return pair_q, starts + within


def stage1_decode(store: ParameterStore, params: DecoderParams, V: Tensor, rows: np.ndarray,
                  is_plan: np.ndarray, row_scene: np.ndarray, offsets: np.ndarray) -> Proposals:
    """Proposals for the query rows ``rows`` (node indices into V).

    ``is_plan`` marks rows that use the plan query; others use the motion
    query. Each row attends to all nodes of scene ``row_scene``.
    """
    if V.shape[0] == 0:
        raise ValueError("empty node embedding set")
    bank = QueryBank.of(store, params)
    flag = np.asarray(is_plan, dtype=np.float64)[:, None]
    q0 = bank.q_plan * flag + bank.q_motion * (1.0 - flag) + V[rows]
    pair_q, pair_k = scene_pairs(np.asarray(row_scene), np.asarray(offsets))
    q = q0 + grouped_cross_attention(q0, V, V, pair_q, pair_k, params.ca.weights(store))
    trajs, scores = _split_head(params.tdc(store, q), params.k, params.t)
    return Proposals(q, trajs, scores)


def decode_scene(store: ParameterStore, params: DecoderParams, V: Tensor, scene: Scene) -> Proposals:
    """Stage I for one scene: row 0 is the ego plan, then the other agents in scene order."""
    ego = scene.ego_index
    others = [i for i in range(len(scene.agents)) if i != ego]
    rows = np.array([ego] + others)
    is_plan = np.zeros(len(rows), dtype=bool)
    is_plan[0] = True
    return stage1_decode(store, params, V, rows, is_plan, np.zeros(len(rows), dtype=int),
                         np.array([0, V.shape[0]]))


# ---------------------------------------------------------------------------
# pseudo plan targets
# ---------------------------------------------------------------------------
def circle_segment(center, radius: float, a, b) -> list[np.ndarray]:
    """Intersections of a circle with segment a-b (0, 1 or 2 points)."""
    a, b, center = np.asarray(a, float), np.asarray(b, float), np.asarray(center, float)
    d = b - a
    f = a - center
    qa = d @ d
    if qa == 0.0:
        return []
    qb = f @ d
    qc = f @ f - radius * radius
    disc = qb * qb - qa * qc
    if disc < 0:
        return []
    root = math.sqrt(disc)
    ts = {(-qb - root) / qa, (-qb + root) / qa}
    return [a + t * d for t in sorted(ts) if 0.0 <= t <= 1.0]


def pseudo_plan_gt(ego: AgentRecord, lanes: list[MapPolyline], t_traj_seconds: float) -> np.ndarray:
    """Lane-centre points on the forward semicircle of radius speed * t around the ego (scene frame).

    Falls back to the ego position when the radius is zero or nothing intersects.
    """
    radius = ego.speed * t_traj_seconds
    p = ego.position
    if radius <= 0.0:
        return p[None].copy()
    h = np.array([math.cos(ego.heading), math.sin(ego.heading)])
    pts = []
    for lane in lanes:
        if lane.kind != "lane-center":
            continue
        for a, b in zip(lane.points[:-1], lane.points[1:]):
            for x in circle_segment(p, radius, a, b):
                if (x - p) @ h >= 0.0 and not any(np.allclose(x, y, rtol=0, atol=1e-9) for y in pts):
                    pts.append(x)
    return np.array(pts) if pts else p[None].copy()


# ---------------------------------------------------------------------------
# losses; the *_rows variants return one value per query row
# ---------------------------------------------------------------------------
def mode_ade(trajs: Tensor, gt: np.ndarray) -> Tensor:
    """Mean per-step L2 of every mode: R x K."""
    return mean(norm(trajs - np.asarray(gt)[:, None], axis=-1), axis=-1)


def score_ce_rows(scores: Tensor, target: np.ndarray) -> Tensor:
    r = np.arange(scores.shape[0])
    return logsumexp(scores, axis=1) - scores[r, target]


def wta_rows(trajs: Tensor, scores: Tensor, gt: np.ndarray) -> tuple[Tensor, Tensor]:
    """Winner-take-all L2 and score cross-entropy toward the closest mode, per row."""
    ade = mode_ade(trajs, gt)
    best = np.argmin(ade.data, axis=1)
    return ade[np.arange(len(best)), best], score_ce_rows(scores, best)


def motion_loss_rows(trajs: Tensor, scores: Tensor, gt: np.ndarray) -> Tensor:
    l2, ce = wta_rows(trajs, scores, gt)
    return l2 + ce


def motion_loss(trajs: Tensor, scores: Tensor, gt: np.ndarray) -> Tensor:
    """Single agent: trajs K x T x 2, scores K, gt T x 2."""
    return motion_loss_rows(reshape(trajs, (1,) + trajs.shape), reshape(scores, (1, -1)),
                            np.asarray(gt)[None])[0]


def distribution_rows(trajs: Tensor, pseudo: list[np.ndarray], hinge_d: float = 0.0) -> Tensor:
    """Per row: mean over modes of the hinged distance from the endpoint to the nearest pseudo target."""
    r, k = trajs.shape[0], trajs.shape[1]
    ends = reshape(trajs[:, :, -1, :], (r * k, 2))
    sizes = np.array([len(p) for p in pseudo])
    if np.any(sizes == 0):
        raise ValueError("pseudo target set must be nonempty")
    pts = np.concatenate(pseudo)
    # one segment per (row, mode), paired with every target of its row
    counts = np.repeat(sizes, k)
    seg = np.repeat(np.arange(r * k), counts)
    within = np.arange(len(seg)) - np.repeat(np.cumsum(counts) - counts, counts)
    tgt = (np.cumsum(sizes) - sizes)[seg // k] + within
    diff = ends.data[seg] - pts[tgt]
    dist = np.sqrt(np.sum(diff * diff, axis=1))
    order = np.lexsort((dist, seg))
    first = order[np.searchsorted(seg[order], np.arange(r * k))]
    chosen = norm(ends - pts[tgt[first]], axis=1)
    hinged = relu(chosen - hinge_d)
    return mean(reshape(hinged, (r, k)), axis=1)


def stage1_plan_loss_rows(trajs: Tensor, pseudo: list[np.ndarray], plan_gt: np.ndarray,
                          hinge_d: float = 0.0) -> Tensor:
    ade = mode_ade(trajs, plan_gt)
    best = np.argmin(ade.data, axis=1)
    return distribution_rows(trajs, pseudo, hinge_d) + ade[np.arange(len(best)), best]


def stage1_plan_loss(trajs: Tensor, pseudo_gt: np.ndarray, plan_gt: np.ndarray, hinge_d: float = 0.0) -> Tensor:
    """Single plan: trajs K x T x 2, pseudo_gt G x 2 (ego frame), plan_gt T x 2."""
    return stage1_plan_loss_rows(reshape(trajs, (1,) + trajs.shape), [np.asarray(pseudo_gt)],
                                 np.asarray(plan_gt)[None], hinge_d)[0]


# ---------------------------------------------------------------------------
# state predictor and masking
# ---------------------------------------------------------------------------
def stp_forward(store: ParameterStore, params: DecoderParams, queries: Tensor, history_enc: np.ndarray) -> Tensor:
    """Normalised state prediction (R x 3); multiply by STATE_SCALE for physical units."""
    return params.stp(store, concat([queries, np.asarray(history_enc)], axis=-1))


def stp_loss(pred_norm: Tensor, states: np.ndarray) -> Tensor:
    d = pred_norm - np.asarray(states) / STATE_SCALE
    return mean(tsum(d * d, axis=1))


def state_predictor(store: ParameterStore, params: DecoderParams, q_row: Tensor, agent: AgentRecord) -> EgoState:
    enc = history_encoding(agent.history, agent.position, agent.heading)[None]
    out = stp_forward(store, params, reshape(q_row, (1, -1)), enc).data[0]
    return EgoState.from_array(out * STATE_SCALE)


def apply_state_mask(state, u: float, prob: float = MASK_PROB) -> tuple[np.ndarray, int]:
    """Zero the whole state when ``u < prob``; returns (masked state, m)."""
    s = state.as_array() if isinstance(state, EgoState) else np.asarray(state, dtype=np.float64)
    m = 0 if u < prob else 1
    # the + 0.0 turns -0.0 into +0.0 so a masked state carries no sign information
    return m * s + 0.0, m


# ---------------------------------------------------------------------------
# stage II
# ---------------------------------------------------------------------------
def stage2_refine(store: ParameterStore, params: DecoderParams, q_plan: Tensor, masked_state: np.ndarray,
                  stage1_trajs: Tensor, stage1_scores: Tensor, fusion: FusionParams | None = None, matched: np.ndarray | None = None,
                  has_match: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Refined plan proposals (B x K x T x 2) and rescored modes (B x K).

    Both outputs are residual on Stage I: a zero head reproduces the Stage-I
    trajectories and scores.

    ``matched`` holds a memory trajectory per row (B x T x 2); rows with
    ``has_match`` false keep their query unchanged.
    """
    b = q_plan.shape[0]
    if fusion is not None and matched is not None:
        m = np.asarray(has_match if has_match is not None else np.ones(b, bool), dtype=np.float64)[:, None]
        if m.any():
            fused = fuse(store, fusion, q_plan, matched)
            q_plan = q_plan * (1.0 - m) + fused * m
    state_in = np.asarray(masked_state, dtype=np.float64).reshape(b, 3) / STATE_SCALE
    flat = reshape(stage1_trajs, (b, -1)) * (1.0 / TRAJ_SCALE)
    head_in = concat([q_plan, params.state_embed(store, state_in), params.traj_embed(store, flat)], axis=-1)
    offsets, dscores = _split_head(params.refine(store, head_in), params.k, params.t)
    return stage1_trajs + offsets, stage1_scores + dscores


def stage2_loss_rows(trajs: Tensor, scores: Tensor, plan_gt: np.ndarray) -> Tensor:
    return motion_loss_rows(trajs, scores, plan_gt)


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------
def _history_rows(scene: Scene, idx) -> np.ndarray:
    return np.stack([history_encoding(scene.agents[i].history, scene.agents[i].position, scene.agents[i].heading)
                     for i in idx])


def infer_plan(scene: Scene, model, state_mode: str = "ground_truth") -> np.ndarray:
    """Ego plan (T x 2) from the highest-scoring proposal.

    ``model`` provides ``store``, ``decoder``, ``fusion``, ``memory``,
    ``use_stage2`` and ``encode_scenes``.
    """
    if state_mode not in ("ground_truth", "predicted"):
        raise ValueError(f"unknown state mode {state_mode!r}")
    store, dec = model.store, model.decoder
    V = model.encode_scenes([scene])
    ego = scene.ego_index
    s1 = stage1_decode(store, dec, V, np.array([ego]), np.array([True]), np.zeros(1, dtype=int),
                       np.array([0, V.shape[0]]))
    best1 = int(np.argmax(s1.scores.data[0]))
    if not model.use_stage2:
        return s1.trajs.data[0, best1].copy()
    if state_mode == "predicted":
        pred = stp_forward(store, dec, s1.queries, _history_rows(scene, [ego])).data * STATE_SCALE
    else:
        pred = scene.ego_state_gt.as_array()[None]
    matched, has = None, None
    queue: HardSampleQueue | None = model.memory
    if model.fusion is not None and queue is not None and len(queue):
        entry = match(queue, s1.trajs.data[0, best1])
        matched, has = entry.trajectory[None], np.array([True])
    trajs, scores = stage2_refine(store, dec, s1.queries, pred, s1.trajs, s1.scores, model.fusion, matched, has)
    return trajs.data[0, int(np.argmax(scores.data[0]))].copy()


def infer_motion_refined(scene: Scene, model, enable: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Proposals (N_m x K x T x 2) and scores for every non-ego agent.

    When enabled, Stage-I proposals of each agent pass through Stage II with
    the state predicted from that agent's own query and history.
    """
    store, dec = model.store, model.decoder
    others = np.array([i for i in range(len(scene.agents)) if i != scene.ego_index], dtype=int)
    if len(others) == 0:
        return np.zeros((0, dec.k, dec.t, 2)), np.zeros((0, dec.k))
    V = model.encode_scenes([scene])
    s1 = stage1_decode(store, dec, V, others, np.zeros(len(others), dtype=bool), np.zeros(len(others), dtype=int),
                       np.array([0, V.shape[0]]))
    if not enable:
        return s1.trajs.data.copy(), s1.scores.data.copy()
    pred = stp_forward(store, dec, s1.queries, _history_rows(scene, others)).data * STATE_SCALE
    trajs, scores = stage2_refine(store, dec, s1.queries, pred, s1.trajs, s1.scores)
    return trajs.data.copy(), scores.data.copy()
