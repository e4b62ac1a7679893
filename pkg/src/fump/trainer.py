"""Joint training loop, evaluation, checkpoints and the module ablation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .ecsa import SceneGraph, batch_graphs, scene_graph
from .geometry import STEP_SECONDS
from .memory import MemoryEntry, batch_update, match, queue_arrays, queue_from_arrays
from .metrics import AGENT_RADIUS, EGO_RADIUS, EvalReport, aggregate, cegr, collision_rate, data_ratio, l2_at_horizons, min_ade
from .model import Model, ModelConfig, config_hash
from .numerics import Adam, CheckpointError, backward, load_container, save_container
from .numerics.tensor import mean
from .scene import HORIZON, Scene, history_encoding, local_to_scene, to_local
from .uttd import (MASK_PROB, STATE_SCALE, apply_state_mask, infer_motion_refined, motion_loss_rows,
                   pseudo_plan_gt, score_ce_rows, stage1_decode, stage1_plan_loss_rows, stage2_loss_rows,
                   stage2_refine, stp_forward, stp_loss)

CHECKPOINT_SECTION_VERSION = 1
LOSS_KEYS = ("total", "motion", "plan1", "plan2", "stp")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 30
    batch_size: int = 8
    lr: float = 3e-4
    w_motion: float = 1.0
    w_plan1: float = 1.0
    w_plan2: float = 1.0
    w_stp: float = 0.5
    capacity: int = 700
    gamma: float = 0.2
    mask_prob: float = MASK_PROB
    hinge_d: float = 0.0
    use_ecsa: bool = True
    use_uttd_stage2: bool = True
    use_memory: bool = True
    joint_motion: bool = True
    d: int = 64
    hidden: int = 64
    k_neighbors: int = 4
    data: str = ""
    heldout: str = ""

    def __post_init__(self):
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ValueError("mask_prob must lie in [0, 1]")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.capacity < 1 or self.d < 1 or self.hidden < 1:
            raise ValueError("capacity, d and hidden must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        for k in d:
            if k not in known:
                raise ValueError(f"unknown config key {k!r}")
        return cls(**d)

    def model_config(self) -> ModelConfig:
        return ModelConfig(d=self.d, hidden=self.hidden, k_neighbors=self.k_neighbors, use_ecsa=self.use_ecsa,
                           use_stage2=self.use_uttd_stage2, use_memory=self.use_memory,
                           capacity=self.capacity, gamma=self.gamma)

    def hash(self) -> str:
        """Hash of everything that shapes the model and its training (not the epoch budget or paths)."""
        d = self.to_dict()
        for k in ("epochs", "data", "heldout"):
            d.pop(k)
        return config_hash(d)


@dataclass
class SceneData:
    """Per-scene training targets, computed once."""

    graph: SceneGraph
    ego_index: int
    others: np.ndarray
    ego_future: np.ndarray
    agent_futures: np.ndarray
    pseudo: np.ndarray
    state: np.ndarray
    ego_history: np.ndarray


def prepare(scene: Scene, k_neighbors: int = 4) -> SceneData:
    ego = scene.ego
    others = np.array([i for i in range(len(scene.agents)) if i != scene.ego_index], dtype=int)
    lanes = scene.map
    pseudo = to_local(pseudo_plan_gt(ego, lanes, HORIZON * STEP_SECONDS), ego.position, ego.heading)
    futures = (np.stack([scene.agents[i].future_gt for i in others]) if len(others)
               else np.zeros((0, HORIZON, 2)))
    return SceneData(scene_graph(scene, k_neighbors), scene.ego_index, others, scene.ego_future_gt, futures,
                     pseudo, scene.ego_state_gt.as_array(), history_encoding(ego.history, ego.position, ego.heading))


@dataclass
class TrainState:
    model: Model
    config: TrainConfig
    opt: Adam
    epoch: int
    shuffle_rng: np.random.Generator
    aux_rng: np.random.Generator
    records: list[dict]


def _rngs(seed: int):
    init, shuffle, aux = np.random.SeedSequence(seed).spawn(3)
    return int(init.generate_state(1)[0]), np.random.default_rng(shuffle), np.random.default_rng(aux)


def init_state(config: TrainConfig) -> TrainState:
    init_seed, shuffle, aux = _rngs(config.seed)
    return TrainState(Model(config.model_config(), init_seed), config, Adam(config.lr), 0, shuffle, aux, [])


def _batch_layout(items: list[SceneData], joint_motion: bool):
    batch = batch_graphs([it.graph for it in items])
    rows, is_plan, row_scene = [], [], []
    for b, it in enumerate(items):
        base = batch.offsets[b]
        rows.append(base + it.ego_index)
        is_plan.append(True)
        row_scene.append(b)
        if joint_motion:
            rows.extend(base + it.others)
            is_plan.extend([False] * len(it.others))
            row_scene.extend([b] * len(it.others))
    rows, is_plan, row_scene = np.array(rows), np.array(is_plan), np.array(row_scene)
    return batch, rows, is_plan, row_scene


def batch_losses(state: TrainState, items: list[SceneData], frozen: bool = False) -> dict:
    """Forward pass and weighted losses for one batch; also updates the memory queue.

    ``frozen`` leaves the queue and the RNGs untouched and disables state
    masking, which makes the loss a fixed function of the parameters.
    """
    cfg, model = state.config, state.model
    store, dec = model.store, model.decoder
    batch, rows, is_plan, row_scene = _batch_layout(items, cfg.joint_motion)
    V = model.encode_batch(batch)
    s1 = stage1_decode(store, dec, V, rows, is_plan, row_scene, batch.offsets)
    plan_idx = np.flatnonzero(is_plan)
    ego_gt = np.stack([it.ego_future for it in items])
    p_trajs, p_scores = s1.trajs[plan_idx], s1.scores[plan_idx]
    plan1_rows = stage1_plan_loss_rows(p_trajs, [it.pseudo for it in items], ego_gt, cfg.hinge_d)
    ade = np.mean(np.sqrt(np.sum((p_trajs.data - ego_gt[:, None]) ** 2, axis=-1)), axis=-1)
    plan1 = mean(plan1_rows + score_ce_rows(p_scores, np.argmin(ade, axis=1)))
    out = {"plan1": plan1}
    total = plan1 * cfg.w_plan1

    if cfg.joint_motion:
        m_idx = np.flatnonzero(~is_plan)
        if len(m_idx):
            gt_m = np.concatenate([it.agent_futures for it in items])
            m_rows = motion_loss_rows(s1.trajs[m_idx], s1.scores[m_idx], gt_m)
            motion = mean(m_rows)
            total = total + motion * cfg.w_motion
            out["motion"] = motion
            if model.memory is not None and not frozen:
                model.memory.update_threshold(float(np.mean(m_rows.data)))
                q = s1.queries.data[m_idx]
                cands = [MemoryEntry(gt_m[i], float(m_rows.data[i]), q[i]) for i in range(len(m_idx))]
                batch_update(model.memory, cands, state.aux_rng)

    if cfg.use_uttd_stage2:
        states = np.stack([it.state for it in items])
        u = np.ones(len(items)) if frozen else state.aux_rng.random(len(items))
        masked = np.stack([apply_state_mask(s, ui, cfg.mask_prob)[0] for s, ui in zip(states, u)])
        q_plan = s1.queries[plan_idx]
        matched, has = None, None
        if model.memory is not None and len(model.memory):
            best = np.argmax(p_scores.data, axis=1)
            matched = np.stack([match(model.memory, p_trajs.data[b, k]).trajectory for b, k in enumerate(best)])
            has = np.ones(len(items), dtype=bool)
        r_trajs, r_scores = stage2_refine(store, dec, q_plan, masked, p_trajs, p_scores, model.fusion, matched, has)
        plan2 = mean(stage2_loss_rows(r_trajs, r_scores, ego_gt))
        stp = stp_loss(stp_forward(store, dec, q_plan, np.stack([it.ego_history for it in items])), states)
        total = total + plan2 * cfg.w_plan2 + stp * cfg.w_stp
        out["plan2"] = plan2
        out["stp"] = stp
    out["total"] = total
    return out


def train_epoch(state: TrainState, data: list[SceneData], csv_rows: list | None = None) -> dict:
    cfg = state.config
    order = state.shuffle_rng.permutation(len(data))
    sums = dict.fromkeys(LOSS_KEYS, 0.0)
    n_batches = 0
    for bi, start in enumerate(range(0, len(order), cfg.batch_size)):
        items = [data[i] for i in order[start:start + cfg.batch_size]]
        losses = batch_losses(state, items)
        values = {k: (losses[k].item() if k in losses else 0.0) for k in LOSS_KEYS}
        if not all(math.isfinite(v) for v in values.values()):
            ids = [int(i) for i in order[start:start + cfg.batch_size]]
            raise TrainingError(f"non-finite loss at epoch {state.epoch} batch {bi} (scenes {ids}): {values}")
        backward(losses["total"], state.model.store)
        state.opt.step(state.model.store)
        for k in LOSS_KEYS:
            sums[k] += values[k]
        n_batches += 1
        if csv_rows is not None:
            csv_rows.append({"epoch": state.epoch, "batch": bi, **values})
    state.epoch += 1
    rec = {"epoch": state.epoch - 1, **{k: sums[k] / n_batches for k in LOSS_KEYS}}
    state.records.append(rec)
    return rec


def train(config: TrainConfig, scenes: list[Scene], resume: TrainState | None = None,
          csv_rows: list | None = None, progress=None) -> TrainState:
    """Train until ``config.epochs`` epochs are done (continuing ``resume`` when given)."""
    if not scenes:
        raise ValueError("no training samples")
    state = resume if resume is not None else init_state(config)
    if resume is not None:
        if resume.config.hash() != config.hash():
            raise CheckpointError("checkpoint config hash does not match the requested config")
        state.config = config
    data = [prepare(s, config.k_neighbors) for s in scenes]
    while state.epoch < config.epochs:
        rec = train_epoch(state, data, csv_rows)
        if progress is not None:
            progress(rec)
    return state


def loss_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["epoch", "batch", *LOSS_KEYS], lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------
def save_checkpoint(path, state: TrainState) -> None:
    model = state.model
    tensors = {f"param/{n}": t.data for n, t in model.store.items()}
    for n in model.store:
        if n in state.opt.m:
            tensors[f"adam.m/{n}"] = state.opt.m[n]
            tensors[f"adam.v/{n}"] = state.opt.v[n]
    sections = {
        "config": state.config.to_dict(),
        "epoch": state.epoch,
        "adam_t": state.opt.t,
        "rng": {"shuffle": state.shuffle_rng.bit_generator.state, "aux": state.aux_rng.bit_generator.state},
        "records": state.records,
    }
    if model.memory is not None:
        tensors.update({f"memory/{k}": v for k, v in queue_arrays(model.memory).items()})
        sections["memory"] = {"version": CHECKPOINT_SECTION_VERSION, "capacity": model.memory.capacity,
                              "gamma": model.memory.gamma, "threshold": model.memory.threshold_text,
                              "size": len(model.memory)}
    save_container(path, tensors, state.config.hash(), sections)


def load_checkpoint(path) -> TrainState:
    tensors, h, sections = load_container(path)
    try:
        config = TrainConfig.from_dict(sections["config"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: bad config section ({e})") from None
    if config.hash() != h:
        raise CheckpointError(f"{path}: config hash mismatch ({h} vs {config.hash()})")
    state = init_state(config)
    model = state.model
    for n in model.store:
        key = f"param/{n}"
        if key not in tensors:
            raise CheckpointError(f"{path}: missing parameter {n!r}")
        model.store.set(n, tensors[key])
        if f"adam.m/{n}" in tensors:
            state.opt.m[n] = tensors[f"adam.m/{n}"].copy()
            state.opt.v[n] = tensors[f"adam.v/{n}"].copy()
    state.opt.t = int(sections["adam_t"])
    state.epoch = int(sections["epoch"])
    state.shuffle_rng.bit_generator.state = sections["rng"]["shuffle"]
    state.aux_rng.bit_generator.state = sections["rng"]["aux"]
    state.records = list(sections.get("records", []))
    if model.memory is not None:
        mem = sections["memory"]
        if mem.get("version") != CHECKPOINT_SECTION_VERSION:
            raise CheckpointError(f"{path}: memory section version {mem.get('version')}")
        arrays = {k[len("memory/"):]: v for k, v in tensors.items() if k.startswith("memory/")}
        model.memory = queue_from_arrays(arrays, mem["capacity"], mem["gamma"], mem["threshold"])
    return state


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------
def predict_plans(model: Model, scenes: list[Scene], state_mode: str = "ground_truth",
                  batch_size: int = 32) -> np.ndarray:
    """Batched ego plans (N x T x 2); same result as calling ``infer_plan`` per scene."""
    if state_mode not in ("ground_truth", "predicted"):
        raise ValueError(f"unknown state mode {state_mode!r}")
    store, dec = model.store, model.decoder
    memory = model.memory.snapshot() if model.memory is not None else None
    out = []
    for start in range(0, len(scenes), batch_size):
        chunk = scenes[start:start + batch_size]
        batch = batch_graphs([model.graph(s) for s in chunk])
        V = model.encode_batch(batch)
        rows = batch.ego_node
        s1 = stage1_decode(store, dec, V, rows, np.ones(len(rows), bool), np.arange(len(rows)), batch.offsets)
        best1 = np.argmax(s1.scores.data, axis=1)
        if not model.use_stage2:
            out.append(s1.trajs.data[np.arange(len(rows)), best1])
            continue
        if state_mode == "predicted":
            hist = np.stack([history_encoding(s.ego.history, s.ego.position, s.ego.heading) for s in chunk])
            states = stp_forward(store, dec, s1.queries, hist).data * STATE_SCALE
        else:
            states = np.stack([s.ego_state_gt.as_array() for s in chunk])
        matched, has = None, None
        if model.fusion is not None and memory is not None and len(memory):
            matched = np.stack([match(memory, s1.trajs.data[b, k]).trajectory for b, k in enumerate(best1)])
            has = np.ones(len(rows), dtype=bool)
        trajs, scores = stage2_refine(store, dec, s1.queries, states, s1.trajs, s1.scores, model.fusion,
                                      matched, has)
        out.append(trajs.data[np.arange(len(rows)), np.argmax(scores.data, axis=1)])
    return np.concatenate(out)


def agent_futures_in_ego_frame(scene: Scene) -> np.ndarray:
    ego = scene.ego
    fut = [to_local(local_to_scene(a.future_gt, a.position, a.heading), ego.position, ego.heading)
           for i, a in enumerate(scene.agents) if i != scene.ego_index]
    return np.stack(fut) if fut else np.zeros((0, HORIZON, 2))


def evaluate(state: TrainState, scenes: list[Scene], state_mode: str = "ground_truth",
             motion_refine: bool = False, expected_hash: str | None = None,
             radii: tuple[float, float] = (EGO_RADIUS, AGENT_RADIUS)) -> EvalReport:
    if not scenes:
        raise ValueError("no samples")
    if expected_hash is not None and expected_hash != state.config.hash():
        raise CheckpointError(f"config hash mismatch: checkpoint {state.config.hash()}, expected {expected_hash}")
    plans = predict_plans(state.model, scenes, state_mode)
    l2s = [l2_at_horizons(p, s.ego_future_gt) for p, s in zip(plans, scenes)]
    cols = [collision_rate(p, agent_futures_in_ego_frame(s), *radii) for p, s in zip(plans, scenes)]
    l2, col = aggregate(l2s, cols)
    report = EvalReport(l2, col, len(scenes), state.config.hash(), state_mode)
    if motion_refine:
        ades = []
        for s in scenes:
            trajs, _ = infer_motion_refined(s, state.model, enable=True)
            others = [a for i, a in enumerate(s.agents) if i != s.ego_index]
            ades.extend(min_ade(t, a.future_gt) for t, a in zip(trajs, others))
        report.min_ade = float(np.mean(ades)) if ades else 0.0
    return report


# ---------------------------------------------------------------------------
# ablation
# ---------------------------------------------------------------------------
ABLATION_ROWS = (
    ("baseline", dict(joint_motion=False, use_ecsa=False, use_uttd_stage2=False, use_memory=False)),
    ("+UMP", dict(joint_motion=True, use_ecsa=False, use_uttd_stage2=False, use_memory=False)),
    ("+UMP+ECSA", dict(joint_motion=True, use_ecsa=True, use_uttd_stage2=False, use_memory=False)),
    ("+UMP+ECSA+UTTD", dict(joint_motion=True, use_ecsa=True, use_uttd_stage2=True, use_memory=True)),
)


@dataclass
class AblationRow:
    name: str
    ump: bool
    ecsa: bool
    uttd: bool
    l2: dict
    cegr: float


def ablate(base: TrainConfig, scenes: list[Scene], heldout: list[Scene], progress=None) -> list[AblationRow]:
    n_ego, n_total = data_ratio(scenes)
    rows = []
    base_l2 = None
    for name, flags in ABLATION_ROWS:
        cfg = replace(base, **flags)
        state = train(cfg, scenes)
        rep = evaluate(state, heldout, "predicted" if cfg.use_uttd_stage2 else "ground_truth")
        if base_l2 is None:
            base_l2 = rep.l2["avg"]
        gain = cegr(rep.l2["avg"], base_l2, n_ego, n_total)
        rows.append(AblationRow(name, flags["joint_motion"], flags["use_ecsa"], flags["use_uttd_stage2"],
                                rep.l2, gain))
        if progress is not None:
            progress(rows[-1])
    return rows


def ablation_table(rows: list[AblationRow]) -> str:
    lines = ["config           UMP  ECSA  UTTD   L2 1s   L2 2s   L2 3s  L2 avg  CEGR(L2) %"]
    mark = lambda f: "x" if f else "-"
    for r in rows:
        lines.append(f"{r.name:<16} {mark(r.ump):>3} {mark(r.ecsa):>5} {mark(r.uttd):>5} "
                     f"{r.l2['1s']:7.4f} {r.l2['2s']:7.4f} {r.l2['3s']:7.4f} {r.l2['avg']:7.4f} {r.cegr:11.3f}")
    return "\n".join(lines) + "\n"
