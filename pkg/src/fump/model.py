"""Model assembly: scene encoder, decoder, memory fusion and the shared parameter store."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from .ecsa import ECSAParams, GraphBatch, SceneGraph, batch_graphs, ecsa_batch, scene_graph
from .memory import CAPACITY, GAMMA, FusionParams, HardSampleQueue
from .numerics import MLP, ParameterStore, Tensor, mlp_sizes
from .numerics.nn import HIDDEN
from .scene import HORIZON, K_NEIGHBORS, NODE_FEAT_DIM, Scene
from .uttd import K_MODES, DecoderParams


@dataclass(frozen=True)
class ModelConfig:
    d: int = HIDDEN
    hidden: int = HIDDEN
    k_neighbors: int = K_NEIGHBORS
    n_local: int = 2
    use_ecsa: bool = True
    use_stage2: bool = True
    use_memory: bool = True
    capacity: int = CAPACITY
    gamma: float = GAMMA

    def to_dict(self) -> dict:
        return asdict(self)


class Model:
    """Parameter handles plus the hard-sample queue; encodes scenes into node embeddings."""

    def __init__(self, config: ModelConfig, seed: int):
        self.config = config
        rng = np.random.default_rng(seed)
        self.store = ParameterStore()
        if config.use_ecsa:
            self.ecsa = ECSAParams.create(self.store, rng, d=config.d, n_local=config.n_local, hidden=config.hidden)
            self.encoder = None
        else:
            self.ecsa = None
            self.encoder = MLP("encoder", mlp_sizes(NODE_FEAT_DIM, config.d, config.hidden)).init(self.store, rng)
        self.decoder = DecoderParams.create(self.store, rng, d=config.d, hidden=config.hidden, k=K_MODES, t=HORIZON)
        self.fusion = (FusionParams.create(self.store, rng, config.d, HORIZON, config.hidden)
                       if config.use_memory else None)
        self.memory = HardSampleQueue(config.capacity, config.gamma) if config.use_memory else None

    @property
    def use_stage2(self) -> bool:
        return self.config.use_stage2

    def graph(self, scene: Scene) -> SceneGraph:
        return scene_graph(scene, self.config.k_neighbors)

    def encode_batch(self, batch: GraphBatch) -> Tensor:
        if self.ecsa is not None:
            return ecsa_batch(self.store, self.ecsa, batch)
        return self.encoder(self.store, batch.features)

    def encode_scenes(self, scenes: list[Scene]) -> Tensor:
        return self.encode_batch(batch_graphs([self.graph(s) for s in scenes]))


def config_hash(payload: dict) -> str:
    """Stable short hash of a JSON-serialisable configuration."""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]
