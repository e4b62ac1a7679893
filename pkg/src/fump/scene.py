"""Vectorized scene model, zone partitioning and KNN subgraphs.

Frames: scene quantities (positions, histories, map points, headings) live in
one planar scene frame. Trajectories attached to an agent (``future_gt``) live
in that agent's t0 frame with the heading along +y and +x to its right.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np

from .geometry import Pose, RigidTransform, wrap_angle

HORIZON = 6
HISTORY = 4
N_ZONES = 4
K_NEIGHBORS = 4

AGENT_CLASSES = ("vehicle", "pedestrian", "cyclist")
MAP_KINDS = ("lane-center", "boundary")
N_NODE_CLASSES = len(AGENT_CLASSES) + len(MAP_KINDS)

# feature scales keep raw inputs O(1)
SPEED_SCALE = 10.0
DISP_SCALE = 5.0
LENGTH_SCALE = 50.0
DIST_WAVELENGTHS = np.geomspace(2.0, 200.0, 8)
TIE_RESOLUTION = 1e-6   # metres


class Zone(IntEnum):
    FORWARD = 0
    LATERAL_RIGHT = 1
    LATERAL_LEFT = 2
    REAR = 3


@dataclass
class EgoState:
    speed: float
    yaw_rate: float
    accel: float

    def as_array(self) -> np.ndarray:
        return np.array([self.speed, self.yaw_rate, self.accel])

    @classmethod
    def from_array(cls, a) -> "EgoState":
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass
class AgentRecord:
    id: int
    class_id: int
    position: np.ndarray
    heading: float
    speed: float
    history: np.ndarray
    future_gt: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(2)
        self.history = np.asarray(self.history, dtype=np.float64).reshape(-1, 2)
        self.future_gt = np.asarray(self.future_gt, dtype=np.float64).reshape(-1, 2)
        if self.speed < 0:
            raise ValueError(f"agent {self.id}: negative speed {self.speed}")

    @property
    def velocity(self) -> np.ndarray:
        return self.speed * np.array([math.cos(self.heading), math.sin(self.heading)])


@dataclass
class MapPolyline:
    kind: str
    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if self.kind not in MAP_KINDS:
            raise ValueError(f"unknown polyline kind {self.kind!r}")
        if len(self.points) < 2:
            raise ValueError("polyline needs at least 2 points")

    @property
    def tangents(self) -> np.ndarray:
        """Per-point tangent heading (segment heading, last point repeats)."""
        d = np.diff(self.points, axis=0)
        seg = np.arctan2(d[:, 1], d[:, 0])
        return np.append(seg, seg[-1])

    @property
    def length(self) -> float:
        return float(np.sum(np.hypot(*np.diff(self.points, axis=0).T)))

    def midpoint(self) -> tuple[np.ndarray, float]:
        """Point and tangent heading at half the arc length."""
        d = np.diff(self.points, axis=0)
        seg_len = np.hypot(d[:, 0], d[:, 1])
        half = 0.5 * seg_len.sum()
        cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        i = int(np.clip(np.searchsorted(cum, half, side="right") - 1, 0, len(seg_len) - 1))
        frac = (half - cum[i]) / seg_len[i] if seg_len[i] > 0 else 0.0
        return self.points[i] + frac * d[i], math.atan2(d[i, 1], d[i, 0])


@dataclass
class Scene:
    ego_id: int
    agents: list[AgentRecord]
    map: list[MapPolyline]
    ego_state_gt: EgoState
    ego_future_gt: np.ndarray
    scene_id: int = 0
    maneuver_tag: str = ""

    def __post_init__(self):
        self.ego_future_gt = np.asarray(self.ego_future_gt, dtype=np.float64).reshape(-1, 2)
        if not any(a.id == self.ego_id for a in self.agents):
            raise ValueError(f"ego id {self.ego_id} not among agents")

    @property
    def ego_index(self) -> int:
        return next(i for i, a in enumerate(self.agents) if a.id == self.ego_id)

    @property
    def ego(self) -> AgentRecord:
        return self.agents[self.ego_index]

    @property
    def n_nodes(self) -> int:
        return len(self.agents) + len(self.map)

    def transformed(self, t: RigidTransform) -> "Scene":
        """The same scene seen from another planar frame (local futures are unchanged)."""
        dyaw = t.yaw
        agents = [replace(a, position=t.apply(a.position), history=t.apply(a.history),
                          heading=wrap_angle(a.heading + dyaw)) for a in self.agents]
        lanes = [MapPolyline(p.kind, t.apply(p.points)) for p in self.map]
        return replace(self, agents=agents, map=lanes)


def assign_zone(position, ego_pose: Pose) -> Zone:
    """Zone of a point relative to the ego; angles measured with ego heading at +90 degrees."""
    dx = position[0] - ego_pose.x
    dy = position[1] - ego_pose.y
    c, s = math.cos(ego_pose.yaw), math.sin(ego_pose.yaw)
    fwd = c * dx + s * dy
    left = -s * dx + c * dy
    ang = math.degrees(math.atan2(left, fwd)) + 90.0  # heading maps to 90, right-hand axis to 0
    if ang > 180.0:
        ang -= 360.0
    if 30.0 < ang <= 150.0:
        return Zone.FORWARD
    if -30.0 < ang <= 30.0:
        return Zone.LATERAL_RIGHT
    if -150.0 < ang <= -30.0:
        return Zone.REAR
    return Zone.LATERAL_LEFT


def encode_distance(dist) -> np.ndarray:
    """Sinusoidal encoding of a scalar distance plus the scaled raw value."""
    d = np.asarray(dist, dtype=np.float64)[..., None]
    ang = 2.0 * math.pi * d / DIST_WAVELENGTHS
    return np.concatenate([np.sin(ang), np.cos(ang), d / LENGTH_SCALE], axis=-1)


DIST_ENC_DIM = 2 * len(DIST_WAVELENGTHS) + 1
EDGE_DIM = DIST_ENC_DIM + 1 + 2 * N_NODE_CLASSES
GLOBAL_EDGE_DIM = DIST_ENC_DIM + 1


def edge_features(pos_i, pos_j, speed_i, speed_j, cls_i, cls_j) -> np.ndarray:
    """Rigid-invariant relation vector r_ij; vectorized over leading axes."""
    pos_i, pos_j = np.asarray(pos_i, dtype=np.float64), np.asarray(pos_j, dtype=np.float64)
    diff = pos_i - pos_j
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    eye = np.eye(N_NODE_CLASSES)
    dv = (np.asarray(speed_i, dtype=np.float64) - np.asarray(speed_j, dtype=np.float64)) / SPEED_SCALE
    return np.concatenate([encode_distance(dist), dv[..., None], eye[np.asarray(cls_i)], eye[np.asarray(cls_j)]],
                          axis=-1)


def history_encoding(history: np.ndarray, position: np.ndarray, heading: float) -> np.ndarray:
    """Per-step displacements of the past track expressed in the agent's heading frame.

    Returns H values pairs (forward, left) flattened; invariant to rigid motions of the scene.
    """
    track = np.vstack([history, position[None]])
    d = np.diff(track, axis=0)
    c, s = math.cos(heading), math.sin(heading)
    local = np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1]], axis=1)
    return local.reshape(-1) / DISP_SCALE


def to_local(points, position, heading: float) -> np.ndarray:
    """Scene-frame points into an agent frame with heading along +y and +x to the right."""
    d = np.asarray(points, dtype=np.float64) - position
    c, s = math.cos(heading), math.sin(heading)
    fwd = c * d[..., 0] + s * d[..., 1]
    left = -s * d[..., 0] + c * d[..., 1]
    return np.stack([-left, fwd], axis=-1)


def local_to_scene(points, position, heading: float) -> np.ndarray:
    """Inverse of ``to_local``."""
    p = np.asarray(points, dtype=np.float64)
    fwd, left = p[..., 1], -p[..., 0]
    c, s = math.cos(heading), math.sin(heading)
    return np.stack([position[0] + c * fwd - s * left, position[1] + s * fwd + c * left], axis=-1)


NODE_FEAT_DIM = N_NODE_CLASSES + 1 + 2 * HISTORY + 3


@dataclass
class Subgraph:
    zone: Zone
    nodes: np.ndarray           # indices into the scene node order
    features: np.ndarray        # len(nodes) x NODE_FEAT_DIM
    edges: np.ndarray           # E x 2 local (receiver, sender) indices into ``nodes``
    edge_features: np.ndarray   # E x EDGE_DIM
    positions: np.ndarray
    speeds: np.ndarray
    velocities: np.ndarray
    classes: np.ndarray


@dataclass
class SceneNodes:
    """Flat per-node arrays for a scene, in scene order (agents, then polylines)."""

    positions: np.ndarray
    speeds: np.ndarray
    velocities: np.ndarray
    classes: np.ndarray
    features: np.ndarray
    zones: np.ndarray
    n_agents: int


def scene_nodes(scene: Scene) -> SceneNodes:
    if not scene.agents:
        raise ValueError("empty scene")
    ego = scene.ego
    ego_pose = Pose(ego.position[0], ego.position[1], 0.0, ego.heading)
    pos, speed, vel, cls, feats, zones = [], [], [], [], [], []
    for a in scene.agents:
        f = np.zeros(NODE_FEAT_DIM)
        f[a.class_id] = 1.0
        f[N_NODE_CLASSES] = a.speed / SPEED_SCALE
        f[N_NODE_CLASSES + 1:N_NODE_CLASSES + 1 + 2 * HISTORY] = history_encoding(a.history, a.position, a.heading)
        pos.append(a.position)
        speed.append(a.speed)
        vel.append(a.velocity)
        cls.append(a.class_id)
        feats.append(f)
        zones.append(Zone.FORWARD if a.id == scene.ego_id else assign_zone(a.position, ego_pose))
    for p in scene.map:
        mid, _ = p.midpoint()
        t = p.tangents
        turn = wrap_angle(t[-2] - t[0]) if len(t) > 1 else 0.0
        c = len(AGENT_CLASSES) + MAP_KINDS.index(p.kind)
        f = np.zeros(NODE_FEAT_DIM)
        f[c] = 1.0
        f[-3:] = (p.length / LENGTH_SCALE, math.sin(turn), math.cos(turn))
        pos.append(mid)
        speed.append(0.0)
        vel.append(np.zeros(2))
        cls.append(c)
        feats.append(f)
        zones.append(assign_zone(mid, ego_pose))
    return SceneNodes(np.array(pos), np.array(speed), np.array(vel), np.array(cls, dtype=int),
                      np.array(feats), np.array(zones, dtype=int), len(scene.agents))


def knn_edges(positions: np.ndarray, k: int) -> np.ndarray:
    """(receiver, sender) pairs linking each node to its k nearest others; ties by lower index.

    Distances are compared at TIE_RESOLUTION so geometric ties stay ties
    after the scene is rotated or shifted.
    """
    n = len(positions)
    kk = min(k, n - 1)
    if kk <= 0:
        return np.zeros((0, 2), dtype=int)
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    dist = np.round(dist / TIE_RESOLUTION)
    np.fill_diagonal(dist, np.inf)
    idx = np.arange(n)
    edges = []
    for i in range(n):
        order = np.lexsort((idx, dist[i]))[:kk]
        edges.extend((i, j) for j in order)
    return np.array(edges, dtype=int)


def build_subgraphs(scene: Scene, k_neighbors: int = K_NEIGHBORS, nodes: SceneNodes | None = None) -> list[Subgraph]:
    if k_neighbors < 1:
        raise ValueError("k_neighbors must be >= 1")
    nodes = nodes if nodes is not None else scene_nodes(scene)
    out = []
    for z in Zone:
        members = np.flatnonzero(nodes.zones == z)
        pos = nodes.positions[members]
        e = knn_edges(pos, k_neighbors)
        if len(e):
            gi, gj = members[e[:, 0]], members[e[:, 1]]
            ef = edge_features(nodes.positions[gi], nodes.positions[gj], nodes.speeds[gi], nodes.speeds[gj],
                               nodes.classes[gi], nodes.classes[gj])
        else:
            ef = np.zeros((0, EDGE_DIM))
        out.append(Subgraph(z, members, nodes.features[members], e, ef, pos, nodes.speeds[members],
                            nodes.velocities[members], nodes.classes[members]))
    return out
