import numpy as np
import pytest

from fump.datagen import generate_dataset
from fump.ecsa import (ECSAParams, EGCL, aggregate_global, ecsa_batch, ecsa_forward, egcl_layer, make_batch,
                       random_rigid)
from fump.numerics import ParameterStore, Tensor
from fump.scene import N_ZONES, scene_nodes

from conftest import make_scene

D = 8


def np_mlp(store, mlp, x):
    h = np.asarray(x, dtype=np.float64)
    n = len(mlp.sizes) - 1
    for i in range(n):
        h = h @ store[f"{mlp.prefix}.{i}.w"].data + store[f"{mlp.prefix}.{i}.b"].data
        if i < n - 1:
            h = h / (1.0 + np.exp(-h))
    return h


def _layer(seed=0, edge_dim=3):
    store = ParameterStore()
    layer = EGCL.create(store, np.random.default_rng(seed), "l", D, edge_dim, hidden=16)
    return store, layer


def egcl_oracle(store, layer, h, recv, send, e):
    n = len(h)
    msgs = {}
    for k, (i, j) in enumerate(zip(recv, send)):
        msgs[k] = np_mlp(store, layer.g_e, np.concatenate([h[i], h[j], e[k]]))
    out = []
    for i in range(n):
        incoming = [k for k in range(len(recv)) if recv[k] == i]
        v = h[i].copy()
        if incoming:
            acc = np.zeros(D)
            for k in incoming:
                gate = 1.0 / (1.0 + np.exp(-np_mlp(store, layer.gate, msgs[k])[0]))
                acc += gate * np_mlp(store, layer.g_x, msgs[k])
            v = v + acc / len(incoming)
        msum = sum((msgs[k] for k in incoming), np.zeros(D))
        out.append(np_mlp(store, layer.g_h, np.concatenate([v, msum])))
    return np.array(out)


def test_egcl_path_graph_matches_loop():
    store, layer = _layer(1)
    rng = np.random.default_rng(2)
    h = rng.normal(size=(3, D))
    recv, send = np.array([0, 1, 1, 2]), np.array([1, 0, 2, 1])
    e = rng.normal(size=(4, 3))
    got = egcl_layer(store, layer, Tensor(h), recv, send, Tensor(e), 3).data
    assert np.allclose(got, egcl_oracle(store, layer, h, recv, send, e), atol=1e-12)


def test_egcl_complete_four_nodes_matches_loop():
    store, layer = _layer(3)
    rng = np.random.default_rng(4)
    h = rng.normal(size=(4, D))
    pairs = [(i, j) for i in range(4) for j in range(4) if i != j]
    recv, send = np.array(pairs).T
    e = rng.normal(size=(12, 3))
    got = egcl_layer(store, layer, Tensor(h), recv, send, Tensor(e), 4).data
    assert np.allclose(got, egcl_oracle(store, layer, h, recv, send, e), atol=1e-12)


def test_egcl_isolated_node():
    store, layer = _layer(5)
    h = np.random.default_rng(6).normal(size=(1, D))
    got = egcl_layer(store, layer, Tensor(h), np.zeros(0, int), np.zeros(0, int), Tensor(np.zeros((0, 3))), 1).data
    assert np.allclose(got, np_mlp(store, layer.g_h, np.concatenate([h[0], np.zeros(D)]))[None], atol=1e-14)


def test_egcl_zero_messages_identity_update():
    store, layer = _layer(7)
    for name in store.names("l.g_x"):
        store.set(name, np.zeros(store[name].shape))
    for name in store.names("l.g_e"):
        store.set(name, np.zeros(store[name].shape))
    # g_h reduced to a single identity layer on its first argument
    ident = EGCL(layer.g_e, layer.g_x, layer.gate, type(layer.g_h)("id", (2 * D, D)))
    store.add("id.0.w", np.vstack([np.eye(D), np.zeros((D, D))]))
    store.add("id.0.b", np.zeros(D))
    h = np.random.default_rng(8).normal(size=(3, D))
    recv, send = np.array([0, 1, 2]), np.array([1, 2, 0])
    got = egcl_layer(store, ident, Tensor(h), recv, send, Tensor(np.ones((3, 3))), 3).data
    assert np.array_equal(got, h)


def _ecsa(seed=0, d=16):
    store = ParameterStore()
    params = ECSAParams.create(store, np.random.default_rng(seed), d=d, hidden=16)
    return store, params


def test_one_agent_scene_shape():
    store, params = _ecsa()
    sc = make_scene([(0.0, 0.0)], speeds=[3.0], lanes=[[(0, -10), (0, 10)], [(3.5, -10), (3.5, 10)]])
    assert ecsa_forward(sc, store, params).shape == (3, 16)


def test_global_graph_has_four_nodes_per_scene():
    store, params = _ecsa()
    scenes = generate_dataset(3, 3)
    batch = make_batch(scenes)
    h = params.embed(store, batch.features)
    g = aggregate_global(store, params, batch, h)
    assert g.features.shape == (3 * N_ZONES, 16)
    assert len(g.recv) == 3 * 12


def test_global_position_is_mean():
    store, params = _ecsa()
    sc = make_scene([(0.0, 0.0), (10.0, 0.0), (12.0, 0.0)], speeds=[1.0, 2.0, 3.0])
    batch = make_batch([sc])
    g = aggregate_global(store, params, batch, params.embed(store, batch.features))
    assert np.allclose(g.positions[0], [22.0 / 3.0, 0.0])
    assert np.allclose(g.velocities[0], [6.0, 0.0])
    # empty zones sit at the ego with zero velocity and zero feature
    for z in range(1, 4):
        assert not g.nonempty[z]
        assert np.array_equal(g.positions[z], [0.0, 0.0])
        assert np.all(g.features.data[z] == 0.0)


def test_singleton_zone_global_feature():
    store, params = _ecsa()
    sc = make_scene([(0.0, 0.0)], speeds=[2.0])
    batch = make_batch([sc])
    h = params.embed(store, batch.features)
    g = aggregate_global(store, params, batch, h)
    assert np.array_equal(g.features.data[0], params.pointnet(store, h).data[0])


def test_pointnet_within_zone_permutation():
    store, params = _ecsa(2)
    pos = [(0.0, 0.0), (10.0, 1.0), (14.0, -2.0), (20.0, 0.5)]
    a = make_scene(pos, speeds=[1.0, 2.0, 3.0, 4.0])
    b = make_scene([pos[0], pos[3], pos[1], pos[2]], speeds=[1.0, 4.0, 2.0, 3.0])
    ga = aggregate_global(store, params, make_batch([a]), params.embed(store, make_batch([a]).features))
    gb = aggregate_global(store, params, make_batch([b]), params.embed(store, make_batch([b]).features))
    assert np.array_equal(ga.features.data, gb.features.data)


def test_permutation_equivariance():
    store, params = _ecsa(3)
    sc = generate_dataset(5, 1)[0]
    n_agents = len(sc.agents)
    perm = np.random.default_rng(0).permutation(n_agents)
    from dataclasses import replace
    shuffled = replace(sc, agents=[sc.agents[i] for i in perm])
    a = ecsa_forward(sc, store, params)
    b = ecsa_forward(shuffled, store, params)
    assert np.allclose(b[:n_agents], a[perm], atol=1e-12)
    assert np.allclose(b[n_agents:], a[n_agents:], atol=1e-12)


def test_rigid_invariance():
    store, params = _ecsa(4, d=32)
    rng = np.random.default_rng(9)
    worst = 0.0
    for sc in generate_dataset(21, 20):
        base = ecsa_forward(sc, store, params)
        for _ in range(3):
            moved = ecsa_forward(sc.transformed(random_rigid(rng)), store, params)
            worst = max(worst, float(np.max(np.abs(moved - base))))
    assert worst <= 1e-9


def test_batched_equals_single():
    store, params = _ecsa(5)
    scenes = generate_dataset(8, 4)
    batch = make_batch(scenes)
    emb = ecsa_batch(store, params, batch).data
    for b, sc in enumerate(scenes):
        lo, hi = batch.offsets[b], batch.offsets[b + 1]
        assert np.allclose(emb[lo:hi], ecsa_forward(sc, store, params), atol=1e-12)


def test_empty_batch_rejected():
    with pytest.raises(ValueError):
        make_batch([])
