"""Seeded synthetic driving scenarios.

Every actor follows a kinematic control profile (speed with a constant
acceleration phase, curvature from the lane it follows plus an optional
yaw-rate pulse) integrated from t = -2 s to t = +3 s. Actor boxes are then
exported per frame in the moving ego frame and turned into local-frame
futures with the annotation transform chain, the same path real annotations
take.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import STEP_SECONDS, Pose, RigidTransform, transform_chain, world_to_target
from ..scene import HISTORY, HORIZON, AgentRecord, EgoState, MapPolyline, Scene

MANEUVERS = ("keep-lane", "turn", "lane-change", "overtake", "stop")
LAYOUTS = ("straight", "curve", "intersection")

SUBSTEPS = 10
LANE_WIDTH = 3.5


@dataclass
class ScenarioConfig:
    agent_count: tuple[int, int] = (6, 10)
    layouts: dict = field(default_factory=lambda: {"straight": 0.5, "curve": 0.3, "intersection": 0.2})
    curve_radius: tuple[float, float] = (40.0, 150.0)
    turn_radius: tuple[float, float] = (10.0, 30.0)
    maneuvers: dict = field(default_factory=lambda: {
        "keep-lane": 0.6, "turn": 0.1, "lane-change": 0.15, "overtake": 0.05, "stop": 0.1})
    ego_speed: tuple[float, float] = (2.0, 12.0)
    n_lanes: int = 3
    history_noise: float = 0.05
    clearance: float = 3.5
    step: float = STEP_SECONDS
    horizon: int = HORIZON
    history: int = HISTORY

    def __post_init__(self):
        for name in ("layouts", "maneuvers"):
            probs = getattr(self, name)
            if any(p < 0 for p in probs.values()) or abs(sum(probs.values()) - 1.0) > 1e-9:
                raise ValueError(f"{name} probabilities must be non-negative and sum to 1")
        unknown = set(self.layouts) - set(LAYOUTS) | set(self.maneuvers) - set(MANEUVERS)
        if unknown:
            raise ValueError(f"unknown layout/maneuver names {sorted(unknown)}")
        lo, hi = self.agent_count
        if lo < 1 or hi < lo:
            raise ValueError("agent_count must satisfy 1 <= lo <= hi")
        if self.step != STEP_SECONDS or self.horizon != HORIZON or self.history != HISTORY:
            raise ValueError("step, horizon and history are fixed at 0.5 s, 6 and 4")


@dataclass
class Profile:
    """Control inputs over absolute time (seconds, t0 = 0)."""

    v0: float
    accel: float = 0.0
    accel_start: float = -math.inf
    accel_end: float = math.inf
    curvature: float = 0.0
    pulse_amp: float = 0.0
    pulse_start: float = 0.0
    pulse_len: float = 1.0
    turn_rate: float = 0.0
    turn_start: float = math.inf

    def speed(self, t: float) -> float:
        active = min(max(t, self.accel_start), self.accel_end) - self.accel_start
        if not math.isfinite(self.accel_start):
            active = 0.0
        return max(0.0, self.v0 + self.accel * active)

    def accel_at(self, t: float) -> float:
        if self.accel_start <= t < self.accel_end and self.speed(t) > 0:
            return self.accel
        return 0.0

    def yaw_rate(self, t: float) -> float:
        w = self.curvature * self.speed(t)
        if self.pulse_amp and self.pulse_start <= t <= self.pulse_start + self.pulse_len:
            w += self.pulse_amp * math.sin(2.0 * math.pi * (t - self.pulse_start) / self.pulse_len)
        if t >= self.turn_start:
            w += self.turn_rate * self.speed(t)
        return w


T_START = -STEP_SECONDS * HISTORY
T_END = STEP_SECONDS * HORIZON


def simulate(start: Pose, profile: Profile) -> list[Pose]:
    """Poses at every 0.5 s step from T_START to T_END (11 samples)."""
    x, y, yaw = start.x, start.y, start.yaw
    dt = STEP_SECONDS / SUBSTEPS
    out = [Pose(x, y, 0.0, yaw)]
    n_steps = HISTORY + HORIZON
    for k in range(n_steps * SUBSTEPS):
        t = T_START + k * dt
        v_a, v_b = profile.speed(t), profile.speed(t + dt)
        ds = 0.5 * (v_a + v_b) * dt
        # midpoint yaw rate, exact for constant-curvature arcs
        dyaw = profile.yaw_rate(t + 0.5 * dt) * dt
        half = 0.5 * dyaw
        chord = ds * (math.sin(half) / half if abs(half) > 1e-12 else 1.0)
        x += chord * math.cos(yaw + half)
        y += chord * math.sin(yaw + half)
        yaw += dyaw
        if (k + 1) % SUBSTEPS == 0:
            out.append(Pose(x, y, 0.0, yaw))
    return out


def _arc_path(start: Pose, curvature: float, s0: float, s1: float, ds: float = 2.0) -> np.ndarray:
    s = np.arange(s0, s1 + 1e-9, ds)
    if abs(curvature) < 1e-12:
        xs, ys = s, np.zeros_like(s)
    else:
        xs = np.sin(curvature * s) / curvature
        ys = (1.0 - np.cos(curvature * s)) / curvature
    c, si = math.cos(start.yaw), math.sin(start.yaw)
    return np.stack([start.x + c * xs - si * ys, start.y + si * xs + c * ys], axis=1)


def _lane_start(road: Pose, offset: float) -> Pose:
    """Pose of the lane at arc position 0, shifted left by ``offset``."""
    return Pose(road.x - offset * math.sin(road.yaw), road.y + offset * math.cos(road.yaw), 0.0, road.yaw)


def _lane_curvature(curvature: float, offset: float) -> float:
    if curvature == 0.0:
        return 0.0
    return curvature / (1.0 - curvature * offset)


def _pose_on_lane(lane_start: Pose, curvature: float, s: float) -> Pose:
    pts = _arc_path(lane_start, curvature, s, s, 1.0)
    return Pose(pts[0, 0], pts[0, 1], 0.0, lane_start.yaw + curvature * s)


def _pick(rng: np.random.Generator, probs: dict) -> str:
    names = sorted(probs)
    p = np.array([probs[n] for n in names])
    return names[int(rng.choice(len(names), p=p / p.sum()))]


def _maneuver_profile(rng: np.random.Generator, maneuver: str, v0: float, curvature: float,
                      turn_radius: tuple[float, float] = (10.0, 30.0)) -> Profile:
    prof = Profile(v0=v0, curvature=curvature)
    if maneuver == "turn":
        radius = rng.uniform(*turn_radius)
        prof.curvature = 0.0
        prof.turn_rate = rng.choice([-1.0, 1.0]) / radius
        prof.turn_start = rng.uniform(-1.5, 1.0)
    elif maneuver in ("lane-change", "overtake"):
        length = rng.uniform(3.0, 5.0)
        direction = rng.choice([-1.0, 1.0])
        vm = max(v0, 1.0)
        prof.pulse_amp = direction * 2.0 * math.pi * LANE_WIDTH / (vm * length ** 2)
        prof.pulse_start = rng.uniform(-1.5, 0.5)
        prof.pulse_len = length
        if maneuver == "overtake":
            prof.accel = rng.uniform(1.0, 2.0)
            prof.accel_start = prof.pulse_start
            prof.accel_end = prof.pulse_start + length
    elif maneuver == "stop":
        t_stop = rng.uniform(2.0, 4.0)
        prof.accel = -v0 / t_stop
        prof.accel_start = rng.uniform(-1.5, 0.5)
        prof.accel_end = prof.accel_start + t_stop
    return prof


@dataclass
class _Actor:
    class_id: int
    poses: list[Pose]
    profile: Profile


def _too_close(a: list[Pose], b: list[Pose], clearance: float) -> bool:
    for pa, pb in zip(a[HISTORY:], b[HISTORY:]):
        if math.hypot(pa.x - pb.x, pa.y - pb.y) < clearance:
            return True
    return False


def _build_map(road: Pose, layout: str, curvature: float, n_lanes: int, cross_s: float) -> list[MapPolyline]:
    lanes = []
    offsets = [(i - (n_lanes - 1) / 2.0) * LANE_WIDTH for i in range(n_lanes)]
    for off in offsets:
        kc = _lane_curvature(curvature, off)
        lanes.append(MapPolyline("lane-center", _arc_path(_lane_start(road, off), kc, -20.0, 90.0, 10.0)))
    for off in (offsets[0] - LANE_WIDTH / 2, offsets[-1] + LANE_WIDTH / 2):
        kc = _lane_curvature(curvature, off)
        lanes.append(MapPolyline("boundary", _arc_path(_lane_start(road, off), kc, -20.0, 90.0, 10.0)))
    if layout == "intersection":
        centre = _pose_on_lane(road, curvature, cross_s)
        for side in (-1.0, 1.0):
            heading = centre.yaw + side * math.pi / 2
            for k in range(2):
                off = (k + 0.5) * LANE_WIDTH
                start = Pose(centre.x - 30.0 * math.cos(heading) - off * math.sin(heading),
                             centre.y - 30.0 * math.sin(heading) + off * math.cos(heading), 0.0, heading)
                lanes.append(MapPolyline("lane-center", _arc_path(start, 0.0, 0.0, 60.0, 10.0)))
    return lanes


def _local_future(poses: list[Pose], ego_poses: list[Pose]) -> np.ndarray:
    """Future of an actor in its t0 frame (heading along +y), via per-frame ego-frame boxes."""
    frames = range(HISTORY, HISTORY + HORIZON + 1)
    boxes, ego_to_world = [], []
    for i in frames:
        e = ego_poses[i]
        rel = world_to_target(e).apply(poses[i].xyz)
        boxes.append(Pose(rel[0], rel[1], 0.0, poses[i].yaw - e.yaw))
        ego_to_world.append(RigidTransform.from_pose(e))
    traj = transform_chain(boxes, ego_to_world)[1:]
    return to_model_frame(traj)


def to_model_frame(traj_xfwd: np.ndarray) -> np.ndarray:
    """Rotate an x-forward local trajectory into the +y-forward convention (x to the right)."""
    return np.stack([-traj_xfwd[:, 1], traj_xfwd[:, 0]], axis=1)


def generate_scene(seed: int, config: ScenarioConfig | None = None) -> Scene:
    return _build_scene(seed, config or ScenarioConfig())[0]


def export_annotations(seed: int, config: ScenarioConfig | None = None) -> tuple[Scene, dict]:
    """A scene plus its per-frame ego-frame boxes (t0 .. horizon) in the annotation schema."""
    scene, actors = _build_scene(seed, config or ScenarioConfig())
    ego_poses = actors[0].poses
    frames = []
    for i in range(HISTORY, HISTORY + HORIZON + 1):
        e = ego_poses[i]
        to_ego = world_to_target(e)
        boxes = []
        for tid, a in enumerate(actors):
            rel = to_ego.apply(a.poses[i].xyz)
            boxes.append({"track_id": tid, "pose": {"x": rel[0], "y": rel[1], "z": rel[2],
                                                    "yaw": a.poses[i].yaw - e.yaw}})
        frames.append({"t": (i - HISTORY) * STEP_SECONDS, "ego_pose": {"x": e.x, "y": e.y, "z": e.z, "yaw": e.yaw},
                       "boxes": boxes})
    return scene, {"frames": frames}


def _build_scene(seed: int, config: ScenarioConfig) -> tuple[Scene, list[_Actor]]:
    rng = np.random.default_rng(seed)
    layout = _pick(rng, config.layouts)
    curvature = 0.0
    if layout == "curve":
        curvature = rng.choice([-1.0, 1.0]) / rng.uniform(*config.curve_radius)
    road = Pose(rng.uniform(-500, 500), rng.uniform(-500, 500), 0.0, rng.uniform(-math.pi, math.pi))
    n_lanes = config.n_lanes
    offsets = [(i - (n_lanes - 1) / 2.0) * LANE_WIDTH for i in range(n_lanes)]

    maneuver = _pick(rng, config.maneuvers)
    ego_lane = offsets[int(rng.integers(n_lanes))]
    v_ego = float(rng.uniform(*config.ego_speed))
    ego_prof = _maneuver_profile(rng, maneuver, v_ego, _lane_curvature(curvature, ego_lane), config.turn_radius)
    ego_start = _pose_on_lane(_lane_start(road, ego_lane), _lane_curvature(curvature, ego_lane), 0.0)
    ego = _Actor(0, simulate(ego_start, ego_prof), ego_prof)
    cross_s = 2.0 * v_ego + rng.uniform(10.0, 30.0)
    lanes = _build_map(road, layout, curvature, n_lanes, cross_s)

    actors = [ego]
    target = int(rng.integers(config.agent_count[0], config.agent_count[1] + 1)) - 1
    tries = 0
    while len(actors) - 1 < target and tries < 50 * max(target, 1):
        tries += 1
        cls = int(rng.choice(3, p=[0.75, 0.15, 0.10]))
        s = rng.uniform(-30.0, 70.0)
        if cls == 1:  # pedestrians walk beside the road
            side = rng.choice([-1.0, 1.0])
            off = side * (offsets[-1] + LANE_WIDTH / 2 + rng.uniform(1.0, 4.0))
            base = _pose_on_lane(_lane_start(road, off), _lane_curvature(curvature, off), s)
            start = Pose(base.x, base.y, 0.0, base.yaw + rng.choice([0.0, math.pi]) + rng.normal(0, 0.3))
            prof = Profile(v0=rng.uniform(0.5, 2.0))
            if rng.random() < 0.2:
                prof = _maneuver_profile(rng, "stop", prof.v0, 0.0)
        else:
            off = offsets[-1] + 0.8 if cls == 2 else offsets[int(rng.integers(n_lanes))]
            kc = _lane_curvature(curvature, off)
            start = _pose_on_lane(_lane_start(road, off), kc, s)
            v0 = rng.uniform(3.0, 6.0) if cls == 2 else rng.uniform(2.0, 14.0)
            m = "keep-lane" if cls == 2 else _pick(rng, config.maneuvers)
            prof = _maneuver_profile(rng, m, v0, kc, config.turn_radius)
        actor = _Actor(cls, simulate(start, prof), prof)
        if _too_close(actor.poses, ego.poses, config.clearance):
            continue
        if any(_too_close(actor.poses, o.poses, 1.0) for o in actors[1:]):
            continue
        actors.append(actor)

    agents = []
    ego_poses = ego.poses
    for i, a in enumerate(actors):
        now = a.poses[HISTORY]
        hist = np.array([[p.x, p.y] for p in a.poses[:HISTORY]])
        if config.history_noise > 0:
            hist = hist + rng.normal(0.0, config.history_noise, size=hist.shape)
        agents.append(AgentRecord(
            id=i, class_id=a.class_id, position=np.array([now.x, now.y]), heading=now.yaw,
            speed=a.profile.speed(0.0), history=hist, future_gt=_local_future(a.poses, ego_poses)))

    state = EgoState(ego_prof.speed(0.0), ego_prof.yaw_rate(0.0), ego_prof.accel_at(0.0))
    scene = Scene(ego_id=0, agents=agents, map=lanes, ego_state_gt=state,
                  ego_future_gt=agents[0].future_gt.copy(), scene_id=int(seed), maneuver_tag=maneuver)
    return scene, actors


def generate_dataset(seed: int, count: int, config: ScenarioConfig | None = None) -> list[Scene]:
    if count < 1:
        raise ValueError("count must be >= 1")
    seeds = np.random.SeedSequence(seed).generate_state(count, dtype=np.uint32)
    return [generate_scene(int(s), config) for s in seeds]
