"""Property suites shared by the ``check`` command and the test-suite.

Each suite returns a list of ``Case`` records: a measured quantity, the
tolerance it must not exceed, and a short label.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .datagen import ScenarioConfig, generate_dataset, generate_scene, optics
from .ecsa import ECSAParams, ecsa_forward, random_rigid
from .geometry import Pose, RigidTransform, compose, transform_chain, world_to_target
from .memory import HardSampleQueue, MemoryEntry, batch_update, match
from .numerics import ParameterStore, finite_diff_check
from .scene import AgentRecord, EgoState, MapPolyline
from .uttd import apply_state_mask, circle_segment, pseudo_plan_gt, stage1_decode, stage2_refine


@dataclass
class Case:
    suite: str
    name: str
    value: float
    tol: float

    @property
    def ok(self) -> bool:
        return bool(self.value <= self.tol)

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} {self.suite}: {self.name} = {self.value:.3g} (tol {self.tol:g})"


# ---------------------------------------------------------------------------
# equivariance
# ---------------------------------------------------------------------------
def equivariance_suite(n_scenes: int = 100, n_transforms: int = 10, seed: int = 0, d: int = 64) -> list[Case]:
    """Largest change of ECSA node embeddings under random rigid motions of the scene."""
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    params = ECSAParams.create(store, rng, d=d, hidden=d)
    worst = 0.0
    for sc in generate_dataset(seed, n_scenes):
        base = ecsa_forward(sc, store, params)
        for _ in range(n_transforms):
            moved = ecsa_forward(sc.transformed(random_rigid(rng)), store, params)
            worst = max(worst, float(np.max(np.abs(moved - base))))
    return [Case("equivariance", f"max |dV| over {n_scenes}x{n_transforms} transforms", worst, 1e-9)]


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------
def three_agent_scenes(seed: int, count: int) -> list:
    cfg = ScenarioConfig(agent_count=(3, 3))
    out, s = [], seed * 1000
    while len(out) < count:
        sc = generate_scene(s, cfg)
        s += 1
        if len(sc.agents) == 3:
            out.append(sc)
    return out


def pipeline_gradient_error(seed: int, step: float = 1e-6, per_tensor: int = 2, d: int = 16) -> float:
    """Finite-difference error of the full training loss (ECSA, both decoder stages, STP, memory fusion)."""
    from .trainer import TrainConfig, batch_losses, init_state, prepare

    cfg = TrainConfig(seed=seed, d=d, hidden=d)
    state = init_state(cfg)
    items = [prepare(s) for s in three_agent_scenes(seed, 2)]
    rng = np.random.default_rng(seed)
    for _ in range(3):   # a stocked queue so the fusion path carries gradient
        state.model.memory.entries.append(MemoryEntry(np.cumsum(rng.normal(size=(6, 2)), axis=0), 1.0, np.zeros(d)))
    f = lambda store: batch_losses(state, items, frozen=True)["total"]
    store = state.model.store
    worst = 0.0
    for k, name in enumerate(store):
        sub = np.random.default_rng([seed, k])
        worst = max(worst, finite_diff_check(f, store, step, per_tensor, sub, [name]))
    return worst


def gradient_suite(n_seeds: int = 10, step: float = 1e-6) -> list[Case]:
    return [Case("gradients", f"seed {s} max relative error", pipeline_gradient_error(s, step), 1e-5)
            for s in range(n_seeds)]


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------
def _random_chain(rng: np.random.Generator):
    n = int(rng.integers(1, 9))
    x, y, yaw = rng.uniform(-200, 200), rng.uniform(-200, 200), rng.uniform(-math.pi, math.pi)
    ego = []
    for _ in range(n):
        ego.append(RigidTransform.from_pose(Pose(x, y, rng.uniform(-1, 1), yaw)))
        v = rng.uniform(0, 15)
        x += 0.5 * v * math.cos(yaw)
        y += 0.5 * v * math.sin(yaw)
        yaw += rng.uniform(-0.3, 0.3)
    boxes = [Pose(*rng.uniform(-60, 60, size=2), rng.uniform(-1, 1), rng.uniform(-math.pi, math.pi))
             for _ in range(n)]
    return boxes, ego


def geometry_suite(n_chains: int = 1000, seed: int = 0) -> list[Case]:
    rng = np.random.default_rng(seed)
    round_trip = anchor = frame = 0.0
    for _ in range(n_chains):
        boxes, ego = _random_chain(rng)
        out = transform_chain(boxes, ego)
        anchor = max(anchor, float(np.max(np.abs(out[0]))))
        g = RigidTransform.from_pose(Pose(*rng.uniform(-1000, 1000, size=3), rng.uniform(-math.pi, math.pi)))
        moved = transform_chain(boxes, [compose(g, t) for t in ego])
        frame = max(frame, float(np.max(np.abs(moved - out))))
        p = Pose(*rng.uniform(-1000, 1000, size=3), rng.uniform(-math.pi, math.pi))
        to_t = world_to_target(p)
        pts = rng.uniform(-1000, 1000, size=(5, 3))
        round_trip = max(round_trip, float(np.max(np.abs(to_t.inverse().apply(to_t.apply(pts)) - pts))))
    return [Case("geometry", "world->target->world round trip (m)", round_trip, 1e-9),
            Case("geometry", "t0 anchoring (m)", anchor, 1e-12),
            Case("geometry", "world-frame choice invariance (m)", frame, 1e-9)]


# ---------------------------------------------------------------------------
# memory
# ---------------------------------------------------------------------------
def _ulps(value: float, exact: Fraction) -> float:
    return float(abs(Fraction(value) - exact) / Fraction(math.ulp(float(exact))))


def _match_oracle(entries, traj):
    best, best_d = None, math.inf
    for i, e in enumerate(entries):
        d = sum(math.hypot(*(e.trajectory[t] - traj[t])) for t in range(len(traj))) / len(traj)
        if d < best_d:
            best, best_d = i, d
    return best, best_d


def memory_suite(n_seeds: int = 1000, max_len: int = 200, max_capacity: int = 5) -> list[Case]:
    """Random operation sequences against the queue laws, the EMA closed form and a match oracle."""
    cap_bad = gate_bad = evict_bad = match_bad = 0
    ulp = 0.0
    for seed in range(n_seeds):
        rng = np.random.default_rng(seed)
        op_rng = np.random.default_rng([seed, 1])
        cap = int(rng.integers(1, max_capacity + 1))
        gamma = 0.2 if seed % 2 == 0 else float(rng.uniform(0.01, 0.99))
        eps0 = float(rng.exponential())
        q = HardSampleQueue(cap, gamma, eps0)
        exact = Fraction(eps0)
        g = Fraction(gamma)
        for _ in range(int(rng.integers(1, max_len + 1))):
            op = rng.integers(3)
            if op == 0:
                loss = float(rng.exponential() * 10 ** rng.uniform(-2, 2))
                q.update_threshold(loss)
                exact = g * exact + (1 - g) * Fraction(loss)
                ulp = max(ulp, _ulps(q.threshold, exact))
            elif op == 1:
                eps = q.threshold
                before = list(q.entries)
                cands = []
                for _ in range(int(rng.integers(0, 5))):
                    pick = rng.random()
                    loss = eps if pick < 0.15 else (before[0].loss if before and pick < 0.3 else float(rng.exponential()))
                    cands.append(MemoryEntry(rng.normal(size=(6, 2)), loss, rng.normal(size=2)))
                admitted = batch_update(q, cands, op_rng)
                after = q.entries
                if len(after) > cap:
                    cap_bad += 1
                passing = [i for i, c in enumerate(cands) if c.loss > eps]
                if not passing and [id(e) for e in after] != [id(e) for e in before]:
                    gate_bad += 1
                if any(not cands[i].loss > eps for i in admitted):
                    gate_bad += 1
                new_ids = {id(e) for e in after} - {id(e) for e in before}
                cand_ids = {id(c): i for i, c in enumerate(cands)}
                # at most one new entry may bypass the gate (the random refresh)
                if sum(1 for e in after if id(e) in new_ids and not cands[cand_ids[id(e)]].loss > eps) > 1:
                    gate_bad += 1
                evict_bad += _eviction_violations(before, after, cands, eps, cap)
            else:
                traj = rng.normal(size=(6, 2))
                got = match(q, traj)
                i, d = _match_oracle(q.entries, traj)
                if (got is None) != (i is None) or (got is not None and got is not q.entries[i]):
                    match_bad += 1
    return [Case("memory", "capacity violations", cap_bad, 0),
            Case("memory", "admission gate violations", gate_bad, 0),
            Case("memory", "min-eviction violations", evict_bad, 0),
            Case("memory", "match vs exhaustive scan mismatches", match_bad, 0),
            Case("memory", "EMA threshold vs closed form (ulp)", ulp, 1.0)]


def _eviction_violations(before, after, cands, eps, cap) -> int:
    """Replay the gated admissions and check that each eviction removed a minimum-loss entry.

    The replay ignores the random refresh; the real queue may differ from the
    replay in exactly one slot.
    """
    sim = list(before)
    admitted = set()
    bad = 0
    for i, c in enumerate(cands):
        if not c.loss > eps:
            continue
        if len(sim) < cap:
            sim.append(c)
            admitted.add(i)
            continue
        losses = [e.loss for e in sim]
        j = losses.index(min(losses))
        if c.loss > losses[j]:
            if any(e.loss < sim[j].loss for e in sim):
                bad += 1
            sim[j] = c
            admitted.add(i)
    diff = sum(1 for a, b in zip(sim, after) if a is not b) + abs(len(sim) - len(after))
    return bad + (1 if diff > 1 else 0)


# ---------------------------------------------------------------------------
# masking
# ---------------------------------------------------------------------------
def masking_suite(n_scenes: int = 100, n_states: int = 10, seed: int = 0, d: int = 32) -> list[Case]:
    """Stage-II outputs with m = 0 must not depend on the ego state at all (bitwise)."""
    from .model import Model, ModelConfig

    model = Model(ModelConfig(d=d, hidden=d), seed)
    rng = np.random.default_rng(seed)
    for _ in range(4):
        model.memory.entries.append(MemoryEntry(np.cumsum(rng.normal(size=(6, 2)), axis=0), 1.0, np.zeros(d)))
    differing = 0
    for sc in generate_dataset(seed + 1, n_scenes):
        V = model.encode_scenes([sc])
        s1 = stage1_decode(model.store, model.decoder, V, np.array([sc.ego_index]), np.array([True]),
                           np.zeros(1, dtype=int), np.array([0, V.shape[0]]))
        best = int(np.argmax(s1.scores.data[0]))
        matched = match(model.memory, s1.trajs.data[0, best]).trajectory[None]
        ref = None
        for _ in range(n_states):
            state = EgoState(rng.uniform(0, 30), rng.normal(0, 1), rng.normal(0, 3))
            masked, m = apply_state_mask(state, 0.0)
            assert m == 0
            t, s = stage2_refine(model.store, model.decoder, s1.queries, masked[None], s1.trajs, s1.scores,
                                 model.fusion, matched, np.array([True]))
            out = (t.data.tobytes(), s.data.tobytes())
            if ref is None:
                ref = out
            elif out != ref:
                differing += 1
    return [Case("masking", f"state-dependent Stage-II outputs with m=0 ({n_scenes} scenes x {n_states} states)",
                 differing, 0)]


# ---------------------------------------------------------------------------
# pseudo plan targets
# ---------------------------------------------------------------------------
def random_lane_layout(rng: np.random.Generator):
    """An ego agent and a handful of lane-centre polylines (straight and curved) around it."""
    heading = rng.uniform(-math.pi, math.pi)
    speed = 0.0 if rng.random() < 0.05 else rng.uniform(0.5, 15.0)
    ego = AgentRecord(0, 0, rng.uniform(-50, 50, size=2), heading, speed, np.zeros((4, 2)), np.zeros((6, 2)))
    lanes = []
    for _ in range(int(rng.integers(1, 5))):
        start = ego.position + rng.uniform(-40, 40, size=2)
        yaw = rng.uniform(-math.pi, math.pi)
        k = 0.0 if rng.random() < 0.5 else rng.uniform(-0.08, 0.08)
        n = int(rng.integers(2, 12))
        seg = rng.uniform(3, 15)
        pts = [start]
        for _ in range(n - 1):
            yaw += k * seg
            pts.append(pts[-1] + seg * np.array([math.cos(yaw), math.sin(yaw)]))
        lanes.append(MapPolyline("lane-center", np.array(pts)))
    return ego, lanes


def sampled_intersections(ego, lanes, t_seconds: float, spacing: float = 0.01) -> np.ndarray:
    """Brute force: walk every lane at ``spacing`` and report where the distance crosses the radius."""
    radius = ego.speed * t_seconds
    p = ego.position
    if radius <= 0.0:
        return p[None].copy()
    h = np.array([math.cos(ego.heading), math.sin(ego.heading)])
    found = []
    for lane in lanes:
        dense = [lane.points[:1]]
        for a, b in zip(lane.points[:-1], lane.points[1:]):
            n = max(1, int(math.ceil(np.linalg.norm(b - a) / spacing)))
            t = np.arange(1, n + 1)[:, None] / n
            dense.append(a + t * (b - a))
        pts = np.concatenate(dense)
        f = np.linalg.norm(pts - p, axis=1) - radius
        cross = np.flatnonzero((f[:-1] < 0) != (f[1:] < 0))
        for i in cross:
            w = f[i] / (f[i] - f[i + 1])
            x = pts[i] + w * (pts[i + 1] - pts[i])
            if (x - p) @ h >= 0.0:
                found.append(x)
    return np.array(found) if found else p[None].copy()


def pseudo_gt_suite(n_layouts: int = 500, seed: int = 0, t_seconds: float = 3.0) -> list[Case]:
    rng = np.random.default_rng(seed)
    worst, count_bad = 0.0, 0
    for _ in range(n_layouts):
        ego, lanes = random_lane_layout(rng)
        exact = pseudo_plan_gt(ego, lanes, t_seconds)
        brute = sampled_intersections(ego, lanes, t_seconds)
        if len(exact) != len(brute):
            count_bad += 1
            continue
        d = np.linalg.norm(exact[:, None] - brute[None], axis=-1)
        worst = max(worst, float(max(d.min(axis=1).max(), d.min(axis=0).max())))
    return [Case("pseudo-gt", "layouts with a different number of intersections", count_bad, 0),
            Case("pseudo-gt", f"max endpoint error vs 1 cm sampling over {n_layouts} layouts (m)", worst, 1e-2)]


# ---------------------------------------------------------------------------
# OPTICS
# ---------------------------------------------------------------------------
def reference_optics_labels(x: np.ndarray, min_pts: int, eps: float) -> np.ndarray:
    """Textbook OPTICS with an explicit seed list and DBSCAN-style extraction at ``eps``.

    Quadratic, loop based; ties in reachability go to the lower index. Each
    pair distance uses the same floating-point recipe as the library so that
    a cut placed exactly on a reachability value is judged identically.
    """
    n = len(x)

    def euclid(a, b):
        d = a - b
        return float(np.sqrt(np.sum(d * d)))

    dist = [[euclid(x[i], x[j]) for j in range(n)] for i in range(n)]
    core = [sorted(row)[min_pts - 1] for row in dist]
    reach = [math.inf] * n
    done = [False] * n
    order = []
    for start in range(n):
        if done[start]:
            continue
        seeds = {start}
        while seeds:
            p = min(seeds, key=lambda i: (reach[i], i))
            seeds.discard(p)
            if done[p]:
                continue
            # an unprocessed point with lower reachability outside the seed list cannot exist
            done[p] = True
            order.append(p)
            for o in range(n):
                if not done[o]:
                    r = max(core[p], dist[p][o])
                    if r < reach[o]:
                        reach[o] = r
                    seeds.add(o)
    labels = [0] * n
    current = -1
    for p in order:
        if reach[p] > eps:
            if core[p] <= eps:
                current += 1
                labels[p] = current
            else:
                labels[p] = -1
        else:
            labels[p] = current
    return np.array(labels)


def blob_set(rng: np.random.Generator) -> np.ndarray:
    dim = int(rng.integers(2, 13))
    n_blobs = int(rng.integers(1, 6))
    sizes = rng.integers(5, 41, size=n_blobs)
    while sizes.sum() > 200:
        sizes = np.maximum(5, sizes // 2)
    centres = rng.uniform(-50, 50, size=(n_blobs, dim))
    parts = [c + rng.normal(0, rng.uniform(0.3, 3.0), size=(s, dim)) for c, s in zip(centres, sizes)]
    return np.concatenate(parts)


def optics_suite(n_sets: int = 100, seed: int = 0, min_pts: int = 5) -> list[Case]:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(n_sets):
        x = blob_set(rng)
        res = optics(x, min_pts)
        if not np.array_equal(res.labels, reference_optics_labels(x, min_pts, res.threshold)):
            bad += 1
    return [Case("optics", f"label mismatches vs quadratic reference on {n_sets} blob sets", bad, 0)]


SUITES = {
    "equivariance": equivariance_suite,
    "gradients": gradient_suite,
    "geometry": geometry_suite,
    "memory": memory_suite,
    "masking": masking_suite,
    "pseudo-gt": pseudo_gt_suite,
    "optics": optics_suite,
}


def run_suite(name: str, echo=None) -> tuple[list[Case], float]:
    t0 = time.time()
    cases = SUITES[name]()
    if echo is not None:
        for c in cases:
            echo(c.line())
    return cases, time.time() - t0
