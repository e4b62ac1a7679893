"""Line-delimited JSON dataset files and ego-frame annotation conversion."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..geometry import Pose, RigidTransform, transform_chain
from ..scene import AGENT_CLASSES, AgentRecord, EgoState, MapPolyline, Scene
from .generator import to_model_frame

DATASET_VERSION = 1
ANNOTATION_VERSION = 1


class DatasetError(ValueError):
    pass


def _pts(a: np.ndarray) -> list:
    # floats serialise via repr, the shortest string that parses back to the same double
    return np.asarray(a, dtype=np.float64).tolist()


def scene_to_record(scene: Scene) -> dict:
    return {
        "version": DATASET_VERSION,
        "scene_id": scene.scene_id,
        "ego_id": scene.ego_id,
        "ego_state": {"speed": scene.ego_state_gt.speed, "yaw_rate": scene.ego_state_gt.yaw_rate,
                      "accel": scene.ego_state_gt.accel},
        "agents": [{"id": a.id, "class": AGENT_CLASSES[a.class_id], "heading": a.heading, "speed": a.speed,
                    "position": _pts(a.position), "history": _pts(a.history), "future_local": _pts(a.future_gt)}
                   for a in scene.agents],
        "map": [{"kind": p.kind, "points": _pts(p.points)} for p in scene.map],
        "maneuver_tag": scene.maneuver_tag,
    }


def record_to_scene(rec: dict) -> Scene:
    if rec.get("version") != DATASET_VERSION:
        raise DatasetError(f"dataset version {rec.get('version')!r}, expected {DATASET_VERSION}")
    agents = [AgentRecord(id=int(a["id"]), class_id=AGENT_CLASSES.index(a["class"]), position=a["position"],
                          heading=float(a["heading"]), speed=float(a["speed"]), history=a["history"],
                          future_gt=a["future_local"]) for a in rec["agents"]]
    st = rec["ego_state"]
    ego = next((a for a in agents if a.id == rec["ego_id"]), None)
    if ego is None:
        raise DatasetError(f"ego id {rec['ego_id']} not among agents")
    return Scene(ego_id=int(rec["ego_id"]), agents=agents,
                 map=[MapPolyline(p["kind"], p["points"]) for p in rec["map"]],
                 ego_state_gt=EgoState(float(st["speed"]), float(st["yaw_rate"]), float(st["accel"])),
                 ego_future_gt=ego.future_gt.copy(), scene_id=int(rec["scene_id"]),
                 maneuver_tag=str(rec.get("maneuver_tag", "")))


def write_dataset(scenes: list[Scene], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in scenes:
            fh.write(json.dumps(scene_to_record(s), separators=(",", ":")))
            fh.write("\n")


def read_dataset(path) -> list[Scene]:
    scenes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                scenes.append(record_to_scene(json.loads(line)))
            except DatasetError as e:
                raise DatasetError(f"{path}:{lineno}: {e}") from None
            except (ValueError, KeyError, TypeError, IndexError) as e:
                raise DatasetError(f"{path}:{lineno}: malformed record ({type(e).__name__}: {e})") from None
    return scenes


def _pose(d: dict) -> Pose:
    return Pose(float(d["x"]), float(d["y"]), float(d.get("z", 0.0)), float(d["yaw"]))


def convert_annotations(data: dict) -> dict:
    """Per-track local trajectories from per-frame ego-frame boxes and ego poses.

    Each track is anchored at its first frame; output points use the +y
    heading convention and start at the origin.
    """
    frames = data.get("frames")
    if frames is None:
        raise DatasetError("annotation input has no 'frames'")
    tracks: dict = {}
    for f in frames:
        t = f.get("t")
        if f.get("boxes") and "ego_pose" not in f:
            raise DatasetError(f"frame t={t}: missing ego pose")
        for b in f.get("boxes", []):
            tracks.setdefault(b["track_id"], []).append((t, f, b))
    out = []
    for tid in sorted(tracks, key=lambda x: (str(type(x)), x)):
        items = sorted(tracks[tid], key=lambda it: it[0])
        boxes = [_pose(b["pose"]) for _, _, b in items]
        ego = [RigidTransform.from_pose(_pose(f["ego_pose"])) for _, f, _ in items]
        traj = to_model_frame(transform_chain(boxes, ego))
        out.append({"track_id": tid, "t": [t for t, _, _ in items], "trajectory": traj.tolist()})
    return {"version": ANNOTATION_VERSION, "tracks": out}


def convert_file(src, dst) -> dict:
    try:
        data = json.loads(Path(src).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DatasetError(f"{src}: {e}") from None
    result = convert_annotations(data)
    Path(dst).write_text(json.dumps(result), encoding="utf-8")
    return result
