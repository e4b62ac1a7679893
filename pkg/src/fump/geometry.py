"""Planar poses, yaw-only rigid transforms and the annotation transform chain.

A :class:`RigidTransform` is a 4x4 homogeneous matrix whose rotation block is
a rotation about z. The chain converts per-frame object boxes expressed in the
ego frame of that frame into a trajectory expressed in the object's own frame
at the first (reference) frame, whose x axis points along the object heading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

STEP_SECONDS = 0.5


def wrap_angle(a: float) -> float:
    """Map an angle into (-pi, pi]."""
    w = math.atan2(math.sin(a), math.cos(a))
    return math.pi if w == -math.pi else w


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    z: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        vals = (self.x, self.y, self.z, self.yaw)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite pose {vals}")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def xyz(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


class RigidTransform:
    __slots__ = ("matrix",)

    def __init__(self, matrix):
        m = np.array(matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"expected 4x4 matrix, got {m.shape}")
        self.matrix = m

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(4))

    @classmethod
    def from_pose(cls, pose: Pose) -> "RigidTransform":
        """Transform taking coordinates in the frame of ``pose`` to the parent frame."""
        c, s = math.cos(pose.yaw), math.sin(pose.yaw)
        return cls([[c, -s, 0.0, pose.x],
                    [s, c, 0.0, pose.y],
                    [0.0, 0.0, 1.0, pose.z],
                    [0.0, 0.0, 0.0, 1.0]])

    @classmethod
    def translation(cls, x: float, y: float, z: float = 0.0) -> "RigidTransform":
        m = np.eye(4)
        m[:3, 3] = (x, y, z)
        return cls(m)

    @property
    def yaw(self) -> float:
        return math.atan2(self.matrix[1, 0], self.matrix[0, 0])

    def inverse(self) -> "RigidTransform":
        r = self.matrix[:3, :3]
        t = self.matrix[:3, 3]
        m = np.eye(4)
        m[:3, :3] = r.T
        m[:3, 3] = -r.T @ t
        return RigidTransform(m)

    def apply(self, points) -> np.ndarray:
        """Map (..., 3) points (or (..., 2), taken at z = 0) through the transform."""
        p = np.asarray(points, dtype=np.float64)
        planar = p.shape[-1] == 2
        if planar:
            p = np.concatenate([p, np.zeros(p.shape[:-1] + (1,))], axis=-1)
        out = p @ self.matrix[:3, :3].T + self.matrix[:3, 3]
        return out[..., :2] if planar else out

    def apply_pose(self, pose: Pose) -> Pose:
        x, y, z = self.apply(pose.xyz)
        return Pose(x, y, z, pose.yaw + self.yaw)

    def is_valid(self, tol: float = 1e-12) -> bool:
        m = self.matrix
        r = m[:3, :3]
        return (np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0])
                and np.allclose(r @ r.T, np.eye(3), atol=tol)
                and abs(np.linalg.det(r) - 1.0) <= tol
                and r[2, 2] == 1.0 and r[0, 2] == r[1, 2] == r[2, 0] == r[2, 1] == 0.0)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def __repr__(self) -> str:
        return f"RigidTransform(yaw={self.yaw:.6g}, t={self.matrix[:3, 3].tolist()})"


def world_to_target(pose_w: Pose) -> RigidTransform:
    """World-to-object transform for an object at ``pose_w``; maps its position to the origin."""
    c, s = math.cos(pose_w.yaw), math.sin(pose_w.yaw)
    x, y, z = pose_w.x, pose_w.y, pose_w.z
    return RigidTransform([[c, s, 0.0, -x * c - y * s],
                           [-s, c, 0.0, x * s - y * c],
                           [0.0, 0.0, 1.0, -z],
                           [0.0, 0.0, 0.0, 1.0]])


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Matrix product ``a @ b`` (apply ``b`` first)."""
    m = a.matrix @ b.matrix
    m[3] = (0.0, 0.0, 0.0, 1.0)
    return RigidTransform(m)


def transform_chain(boxes_ego: Sequence[Pose], ego_to_world: Sequence[RigidTransform]) -> np.ndarray:
    """Trajectory (T x 2) of a tracked object in its own frame at the first timestamp.

    ``boxes_ego[i]`` is the object's pose in the ego frame of timestamp i and
    ``ego_to_world[i]`` the matching ego-to-world transform. The reference
    heading is the object's ego-frame yaw plus the ego's world yaw at t0.
    """
    if len(boxes_ego) == 0:
        raise ValueError("transform_chain needs at least one box")
    if len(boxes_ego) != len(ego_to_world):
        raise ValueError(f"{len(boxes_ego)} boxes but {len(ego_to_world)} ego poses")

    world = [t.apply(b.xyz) for b, t in zip(boxes_ego, ego_to_world)]
    x0, y0, z0 = world[0]
    psi = wrap_angle(boxes_ego[0].yaw + ego_to_world[0].yaw)
    to_target = world_to_target(Pose(x0, y0, z0, psi))
    local = to_target.apply(np.array(world))
    return local[:, :2].copy()


def heading_from_path(xy: np.ndarray, fallback: float) -> float:
    """Heading of the first non-zero displacement along a path, else ``fallback``."""
    xy = np.asarray(xy, dtype=np.float64)
    for a, b in zip(xy[:-1], xy[1:]):
        d = b - a
        if np.hypot(d[0], d[1]) > 1e-9:
            return math.atan2(d[1], d[0])
    return fallback
