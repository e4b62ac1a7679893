import numpy as np
import pytest

from fump.scene import AgentRecord, EgoState, MapPolyline, Scene


def straight_history(position, heading, speed, h=4, dt=0.5):
    d = np.array([np.cos(heading), np.sin(heading)])
    return np.array([np.asarray(position) - (h - i) * dt * speed * d for i in range(h)])


def make_agent(i, position, heading=0.0, speed=0.0, class_id=0, future=None):
    future = np.zeros((6, 2)) if future is None else future
    return AgentRecord(i, class_id, position, heading, speed, straight_history(position, heading, speed), future)


def make_scene(positions, headings=None, speeds=None, lanes=(), ego_future=None):
    n = len(positions)
    headings = [0.0] * n if headings is None else headings
    speeds = [0.0] * n if speeds is None else speeds
    agents = [make_agent(i, p, h, s) for i, (p, h, s) in enumerate(zip(positions, headings, speeds))]
    ego_future = np.zeros((6, 2)) if ego_future is None else ego_future
    agents[0].future_gt = ego_future
    return Scene(0, agents, [MapPolyline("lane-center", l) for l in lanes],
                 EgoState(speeds[0], 0.0, 0.0), ego_future)


@pytest.fixture(scope="session")
def small_scenes():
    from fump.datagen import generate_dataset
    return generate_dataset(7, 12)
