"""Equivariant context-sharing scene encoder.

Scenes are processed as one disjoint-union graph per batch: subgraph ``s`` of
scene ``b`` has segment id ``4 * b + zone``. All geometric inputs to the
network are relative distances, speed differences and per-node features that
do not depend on the scene frame, so embeddings are invariant to rigid
motions of the whole scene.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose, RigidTransform
from .numerics.nn import HIDDEN
from .numerics import MLP, Attention, ParameterStore, Tensor, grouped_cross_attention, mlp_sizes
from .numerics.tensor import concat, segment_max, segment_sum, sigmoid
from .scene import (EDGE_DIM, GLOBAL_EDGE_DIM, K_NEIGHBORS, N_ZONES, NODE_FEAT_DIM, SPEED_SCALE, Scene,
                    SceneNodes, build_subgraphs, encode_distance, scene_nodes)


@dataclass
class GraphBatch:
    n_scenes: int
    features: np.ndarray
    positions: np.ndarray
    speeds: np.ndarray
    velocities: np.ndarray
    classes: np.ndarray
    scene_of: np.ndarray
    zone_seg: np.ndarray
    offsets: np.ndarray          # node offset of each scene, length n_scenes + 1
    n_agents: np.ndarray         # agents per scene (agents come first inside each scene block)
    ego_node: np.ndarray
    recv: np.ndarray
    send: np.ndarray
    edge_r: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.features)

    @property
    def n_global(self) -> int:
        return N_ZONES * self.n_scenes


@dataclass
class SceneGraph:
    """Per-scene node arrays and local KNN edges (indices local to the scene)."""

    nodes: SceneNodes
    ego_index: int
    recv: np.ndarray
    send: np.ndarray
    edge_r: np.ndarray


def scene_graph(scene: Scene, k_neighbors: int = K_NEIGHBORS) -> SceneGraph:
    nodes = scene_nodes(scene)
    recv, send, edge_r = [], [], []
    for sg in build_subgraphs(scene, k_neighbors, nodes):
        if len(sg.edges):
            recv.append(sg.nodes[sg.edges[:, 0]])
            send.append(sg.nodes[sg.edges[:, 1]])
            edge_r.append(sg.edge_features)
    if recv:
        return SceneGraph(nodes, scene.ego_index, np.concatenate(recv), np.concatenate(send), np.concatenate(edge_r))
    return SceneGraph(nodes, scene.ego_index, np.zeros(0, dtype=int), np.zeros(0, dtype=int), np.zeros((0, EDGE_DIM)))


def batch_graphs(graphs: list[SceneGraph]) -> GraphBatch:
    """Disjoint union of per-scene graphs."""
    if not graphs:
        raise ValueError("empty batch")
    sizes = np.array([len(g.nodes.features) for g in graphs])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    cat = np.concatenate
    base_e = [np.full(len(g.recv), offsets[b]) for b, g in enumerate(graphs)]
    return GraphBatch(
        n_scenes=len(graphs),
        features=cat([g.nodes.features for g in graphs]),
        positions=cat([g.nodes.positions for g in graphs]),
        speeds=cat([g.nodes.speeds for g in graphs]),
        velocities=cat([g.nodes.velocities for g in graphs]),
        classes=cat([g.nodes.classes for g in graphs]),
        scene_of=np.repeat(np.arange(len(graphs)), sizes),
        zone_seg=cat([N_ZONES * b + g.nodes.zones for b, g in enumerate(graphs)]),
        offsets=offsets,
        n_agents=np.array([g.nodes.n_agents for g in graphs]),
        ego_node=offsets[:-1] + np.array([g.ego_index for g in graphs]),
        recv=cat([g.recv for g in graphs]) + cat(base_e),
        send=cat([g.send for g in graphs]) + cat(base_e),
        edge_r=cat([g.edge_r for g in graphs]))


def make_batch(scenes: list[Scene], k_neighbors: int = K_NEIGHBORS) -> GraphBatch:
    return batch_graphs([scene_graph(sc, k_neighbors) for sc in scenes])


@dataclass(frozen=True)
class EGCL:
    """Parameter handles of one message-passing layer."""

    g_e: MLP
    g_x: MLP
    gate: MLP
    g_h: MLP

    @classmethod
    def create(cls, store: ParameterStore, rng, prefix: str, d: int, edge_dim: int, hidden: int = HIDDEN) -> "EGCL":
        return cls(
            g_e=MLP(f"{prefix}.g_e", mlp_sizes(2 * d + edge_dim, d, hidden)).init(store, rng),
            g_x=MLP(f"{prefix}.g_x", mlp_sizes(d, d, hidden)).init(store, rng, out_scale=0.5),
            gate=MLP(f"{prefix}.gate", mlp_sizes(d, 1, hidden)).init(store, rng),
            g_h=MLP(f"{prefix}.g_h", mlp_sizes(2 * d, d, hidden)).init(store, rng),
        )


def egcl_layer(store: ParameterStore, layer: EGCL, h: Tensor, recv: np.ndarray, send: np.ndarray,
               edge_emb, n_nodes: int) -> Tensor:
    """Message passing: gated mean-normalized residual, then the node MLP on (h, sum of messages)."""
    m = layer.g_e(store, concat([h[recv], h[send], edge_emb], axis=-1))
    c = sigmoid(layer.gate(store, m))
    indeg = np.bincount(recv, minlength=n_nodes).astype(np.float64)
    inv = (1.0 / np.maximum(indeg, 1.0))[:, None]
    h = h + segment_sum(c * layer.g_x(store, m), recv, n_nodes) * inv
    return layer.g_h(store, concat([h, segment_sum(m, recv, n_nodes)], axis=-1))


@dataclass
class GlobalGraph:
    features: Tensor          # (4B) x d
    positions: np.ndarray     # (4B) x 2
    velocities: np.ndarray    # (4B) x 2
    nonempty: np.ndarray      # (4B,) bool
    recv: np.ndarray
    send: np.ndarray
    edge_r: np.ndarray


@dataclass(frozen=True)
class ECSAParams:
    d: int
    embed: MLP
    edge: MLP
    local: tuple[EGCL, ...]
    pointnet: MLP
    global_edge: MLP
    global_layer: EGCL
    share_global: Attention
    share_ffn: MLP
    share_local: Attention

    @classmethod
    def create(cls, store: ParameterStore, rng, d: int = HIDDEN, n_local: int = 2, prefix: str = "ecsa",
               hidden: int = HIDDEN) -> "ECSAParams":
        de = d // 2
        return cls(
            d=d,
            embed=MLP(f"{prefix}.embed", mlp_sizes(NODE_FEAT_DIM, d, hidden)).init(store, rng),
            edge=MLP(f"{prefix}.edge", mlp_sizes(EDGE_DIM, de, hidden)).init(store, rng),
            local=tuple(EGCL.create(store, rng, f"{prefix}.local{i}", d, de, hidden) for i in range(n_local)),
            pointnet=MLP(f"{prefix}.pointnet", mlp_sizes(d, d, hidden)).init(store, rng),
            global_edge=MLP(f"{prefix}.gedge", mlp_sizes(GLOBAL_EDGE_DIM, de, hidden)).init(store, rng),
            global_layer=EGCL.create(store, rng, f"{prefix}.global", d, de, hidden),
            share_global=Attention(f"{prefix}.share_g", d).init(store, rng),
            share_ffn=MLP(f"{prefix}.share_ffn", mlp_sizes(d, d, hidden)).init(store, rng),
            share_local=Attention(f"{prefix}.share_l", d).init(store, rng),
        )


def _global_edges(n_scenes: int):
    pairs = [(i, j) for i in range(N_ZONES) for j in range(N_ZONES) if i != j]
    base = N_ZONES * np.repeat(np.arange(n_scenes), len(pairs))
    p = np.tile(np.array(pairs), (n_scenes, 1))
    return base + p[:, 0], base + p[:, 1]


def aggregate_global(store: ParameterStore, params: ECSAParams, batch: GraphBatch, h: Tensor) -> GlobalGraph:
    """PointNet max-pool per zone; mean position and summed velocity as global geometry."""
    n_g = batch.n_global
    feats = segment_max(params.pointnet(store, h), batch.zone_seg, n_g, fill=0.0)
    counts = np.bincount(batch.zone_seg, minlength=n_g).astype(np.float64)
    pos_sum = np.zeros((n_g, 2))
    np.add.at(pos_sum, batch.zone_seg, batch.positions)
    vel = np.zeros((n_g, 2))
    np.add.at(vel, batch.zone_seg, batch.velocities)
    nonempty = counts > 0
    ego_pos = np.repeat(batch.positions[batch.ego_node], N_ZONES, axis=0)
    pos = np.where(nonempty[:, None], pos_sum / np.maximum(counts, 1.0)[:, None], ego_pos)
    recv, send = _global_edges(batch.n_scenes)
    diff = pos[recv] - pos[send]
    dist = np.sqrt(np.sum(diff * diff, axis=1))
    speed = np.sqrt(np.sum(vel * vel, axis=1))
    r = np.concatenate([encode_distance(dist), ((speed[recv] - speed[send]) / SPEED_SCALE)[:, None]], axis=1)
    return GlobalGraph(feats, pos, vel, nonempty, recv, send, r)


def global_update(store: ParameterStore, params: ECSAParams, g: GlobalGraph) -> GlobalGraph:
    e = params.global_edge(store, g.edge_r)
    feats = egcl_layer(store, params.global_layer, g.features, g.recv, g.send, e, len(g.positions))
    return GlobalGraph(feats, g.positions, g.velocities, g.nonempty, g.recv, g.send, g.edge_r)


def context_share(store: ParameterStore, params: ECSAParams, global_feats: Tensor, nonempty: np.ndarray,
                  h: Tensor, zone_seg: np.ndarray) -> Tensor:
    """Global node attends over its zone, then every zone node attends over the refreshed summary."""
    active = np.flatnonzero(nonempty)
    slot = np.full(len(nonempty), -1)
    slot[active] = np.arange(len(active))
    node_slot = slot[zone_seg]
    summary = grouped_cross_attention(global_feats[active], h, h, node_slot, np.arange(len(zone_seg)),
                                      params.share_global.weights(store))
    hidden = params.share_ffn(store, summary)
    return grouped_cross_attention(h, hidden, hidden, np.arange(len(zone_seg)), node_slot,
                                   params.share_local.weights(store))


def ecsa_batch(store: ParameterStore, params: ECSAParams, batch: GraphBatch) -> Tensor:
    """Node embeddings (N x d) for a batch, aligned with the batch node order."""
    n = batch.n_nodes
    h = params.embed(store, batch.features)
    e = params.edge(store, batch.edge_r)
    for layer in params.local:
        h = egcl_layer(store, layer, h, batch.recv, batch.send, e, n)
    g = global_update(store, params, aggregate_global(store, params, batch, h))
    shared = context_share(store, params, g.features, g.nonempty, h, batch.zone_seg)
    return h + shared


def ecsa_forward(scene: Scene, store: ParameterStore, params: ECSAParams, k_neighbors: int = K_NEIGHBORS) -> np.ndarray:
    """Embeddings for a single scene, rows in scene node order."""
    return ecsa_batch(store, params, make_batch([scene], k_neighbors)).data


def random_rigid(rng: np.random.Generator, extent: float = 100.0) -> RigidTransform:
    yaw = rng.uniform(-np.pi, np.pi)
    x, y = rng.uniform(-extent, extent, size=2)
    return RigidTransform.from_pose(Pose(x, y, 0.0, yaw))
