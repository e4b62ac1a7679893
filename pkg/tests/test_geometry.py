import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fump.geometry import Pose, RigidTransform, compose, transform_chain, world_to_target, wrap_angle

coord = st.floats(-100, 100, allow_nan=False)
angle = st.floats(-math.pi, math.pi, allow_nan=False)


def test_wrap_angle_range():
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    assert wrap_angle(0.25) == 0.25


def test_identity_pose_gives_identity():
    assert np.array_equal(world_to_target(Pose(0, 0, 0, 0)).matrix, np.eye(4))


def test_target_origin_maps_to_zero():
    p = Pose(3.5, -7.25, 1.5, 0.8)
    np.testing.assert_allclose(world_to_target(p).apply(p.xyz), 0.0, atol=1e-12)


def test_point_ahead_of_rotated_target():
    t = world_to_target(Pose(1, 2, 0, math.pi / 2))
    np.testing.assert_allclose(t.apply([1, 3, 0]), [1, 0, 0], atol=1e-15)


def test_world_to_target_is_inverse_of_pose_frame():
    p = Pose(4.0, -2.0, 0.3, -2.1)
    np.testing.assert_allclose(world_to_target(p).matrix, RigidTransform.from_pose(p).inverse().matrix,
                               atol=1e-14)


def test_compose_with_identity():
    t = world_to_target(Pose(1.0, 2.0, 0.5, 0.3))
    assert np.array_equal(compose(t, RigidTransform.identity()).matrix, t.matrix)


def test_compose_with_inverse_is_identity():
    t = world_to_target(Pose(-13.0, 22.0, 0.5, 2.3))
    inv = np.linalg.inv(t.matrix)
    np.testing.assert_allclose(compose(t, RigidTransform(inv)).matrix, np.eye(4), atol=1e-12)


def test_translations_add():
    c = compose(RigidTransform.translation(1, 2, 3), RigidTransform.translation(-4, 0.5, 1))
    np.testing.assert_allclose(c.matrix, RigidTransform.translation(-3, 2.5, 4).matrix)


@given(coord, coord, coord, angle, coord, coord, angle)
def test_compose_keeps_invariants(x, y, z, yaw, x2, y2, yaw2):
    c = compose(world_to_target(Pose(x, y, z, yaw)), RigidTransform.from_pose(Pose(x2, y2, 0, yaw2)))
    assert c.is_valid()


@settings(max_examples=200)
@given(coord, coord, coord, angle, coord, coord)
def test_round_trip_world_target_world(x, y, z, yaw, px, py):
    pose = Pose(x, y, z, yaw)
    to_t = world_to_target(pose)
    pt = np.array([px, py, 0.7])
    back = to_t.inverse().apply(to_t.apply(pt))
    np.testing.assert_allclose(back, pt, atol=1e-9)


def test_chain_static_object_static_ego():
    ego = [RigidTransform.from_pose(Pose(5, 5, 0, 0.4))] * 4
    boxes = [Pose(10, 1, 0, 0.2)] * 4
    np.testing.assert_allclose(transform_chain(boxes, ego), 0.0, atol=1e-12)


def _ego_path(n, rng):
    poses = []
    x, y, yaw = rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-math.pi, math.pi)
    for _ in range(n):
        poses.append(Pose(x, y, 0.0, yaw))
        v, w = rng.uniform(0, 10), rng.uniform(-0.5, 0.5)
        x += v * 0.5 * math.cos(yaw)
        y += v * 0.5 * math.sin(yaw)
        yaw += w * 0.5
    return poses


def test_chain_straight_object_with_moving_ego():
    rng = np.random.default_rng(0)
    ego_poses = _ego_path(7, rng)
    heading = 1.1
    start = np.array([20.0, -3.0])
    world = [start + 2.0 * 0.5 * i * np.array([math.cos(heading), math.sin(heading)]) for i in range(7)]
    boxes = []
    for p, w in zip(ego_poses, world):
        local = world_to_target(p).apply([w[0], w[1], 0.0])
        boxes.append(Pose(local[0], local[1], 0.0, heading - p.yaw))
    traj = transform_chain(boxes, [RigidTransform.from_pose(p) for p in ego_poses])
    expected = np.array([[float(i), 0.0] for i in range(7)])
    np.testing.assert_allclose(traj, expected, atol=1e-9)


def test_chain_matches_compose_free_oracle():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = rng.integers(1, 9)
        ego_poses = _ego_path(n, rng)
        obj_world = rng.uniform(-80, 80, size=(n, 2))
        obj_yaw = rng.uniform(-math.pi, math.pi, size=n)
        boxes = []
        for p, w, yw in zip(ego_poses, obj_world, obj_yaw):
            local = world_to_target(p).apply([w[0], w[1], 0.0])
            boxes.append(Pose(local[0], local[1], 0.0, yw - p.yaw))
        traj = transform_chain(boxes, [RigidTransform.from_pose(p) for p in ego_poses])
        # oracle: rotate world offsets by minus the reference heading, straight from world data
        c, s = math.cos(obj_yaw[0]), math.sin(obj_yaw[0])
        d = obj_world - obj_world[0]
        oracle = np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1]], axis=1)
        np.testing.assert_allclose(traj, oracle, atol=1e-9)


def test_chain_errors():
    with pytest.raises(ValueError):
        transform_chain([], [])
    with pytest.raises(ValueError):
        transform_chain([Pose(0, 0)], [RigidTransform.identity()] * 2)


def test_chain_world_frame_invariance():
    rng = np.random.default_rng(2)
    ego_poses = _ego_path(6, rng)
    boxes = [Pose(*rng.uniform(-30, 30, size=2), 0.0, rng.uniform(-3, 3)) for _ in range(6)]
    ego = [RigidTransform.from_pose(p) for p in ego_poses]
    g = RigidTransform.from_pose(Pose(37.0, -81.0, 2.0, 2.2))
    a = transform_chain(boxes, ego)
    b = transform_chain(boxes, [compose(g, t) for t in ego])
    np.testing.assert_allclose(a, b, atol=1e-9)
    np.testing.assert_allclose(a[0], 0.0, atol=1e-12)
