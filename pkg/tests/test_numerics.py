import math

import numpy as np
import pytest

from fump.numerics import (MLP, Adam, Attention, ParameterStore, TapeError, Tensor, backward,
                           cross_attention, finite_diff_check, grouped_cross_attention,
                           load_container, mlp_forward, save_container)
from fump.numerics import tensor as T


def _silu(x):
    return x / (1.0 + math.exp(-x))


def test_zero_mlp_gives_zeros():
    store = ParameterStore()
    mlp = MLP("m", (3, 5, 2)).init(store, np.random.default_rng(0))
    for n in store:
        store.set(n, np.zeros(store[n].shape))
    out = mlp(store, np.random.default_rng(1).normal(size=(4, 3)))
    assert np.all(out.data == 0.0)


def test_identity_mlp():
    w = Tensor(np.eye(2))
    b = Tensor(np.zeros(2))
    out = mlp_forward([(w, b)], np.array([[1.0, 2.0]]))
    assert out.data.tolist() == [[1.0, 2.0]]


def test_mlp_matches_scalar_forward():
    rng = np.random.default_rng(3)
    store = ParameterStore()
    mlp = MLP("m", (3, 4, 2)).init(store, rng)
    x = rng.normal(size=3)
    w0, b0 = store["m.0.w"].data, store["m.0.b"].data
    w1, b1 = store["m.1.w"].data, store["m.1.b"].data
    hidden = []
    for j in range(4):
        acc = b0[j]
        for i in range(3):
            acc += x[i] * w0[i, j]
        hidden.append(_silu(acc))
    expected = []
    for j in range(2):
        acc = b1[j]
        for i in range(4):
            acc += hidden[i] * w1[i, j]
        expected.append(acc)
    np.testing.assert_allclose(mlp(store, x).data, expected, rtol=1e-13, atol=1e-13)


def test_mlp_shape_error_names_layer():
    store = ParameterStore()
    mlp = MLP("enc", (3, 4, 2)).init(store, np.random.default_rng(0))
    with pytest.raises(ValueError, match="enc layer 0"):
        mlp(store, np.zeros((2, 5)))


def _identity_proj(d):
    return tuple(Tensor(np.eye(d)) for _ in range(4))


def test_attention_single_key_returns_value():
    rng = np.random.default_rng(0)
    q = rng.normal(size=(3, 4))
    k = rng.normal(size=(1, 4))
    v = rng.normal(size=(1, 4))
    out = cross_attention(q, k, v, _identity_proj(4))
    np.testing.assert_allclose(out.data, np.repeat(v, 3, axis=0), atol=1e-15)


def test_attention_identical_keys_average_values():
    rng = np.random.default_rng(1)
    q = rng.normal(size=(2, 3))
    k = np.tile(rng.normal(size=(1, 3)), (5, 1))
    v = rng.normal(size=(5, 3))
    out = cross_attention(q, k, v, _identity_proj(3))
    np.testing.assert_allclose(out.data, np.tile(v.mean(axis=0), (2, 1)), atol=1e-14)


def _attention_oracle(q, k, v, wq, wk, wv, wo):
    d = wq.shape[1]
    out = np.zeros((q.shape[0], wo.shape[1]))
    for i in range(q.shape[0]):
        qi = q[i] @ wq
        logits = [float(qi @ (k[j] @ wk)) / math.sqrt(d) for j in range(k.shape[0])]
        m = max(logits)
        ws = [math.exp(l - m) for l in logits]
        s = sum(ws)
        acc = np.zeros(wv.shape[1])
        for j in range(k.shape[0]):
            acc += (ws[j] / s) * (v[j] @ wv)
        out[i] = acc @ wo
    return out


def test_attention_matches_loop_oracle():
    rng = np.random.default_rng(2)
    store = ParameterStore()
    att = Attention("a", 4).init(store, rng)
    q, k, v = rng.normal(size=(3, 4)), rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    out, w = cross_attention(q, k, v, att.weights(store), return_weights=True)
    ref = _attention_oracle(q, k, v, *(t.data for t in att.weights(store)))
    np.testing.assert_allclose(out.data, ref, atol=1e-12)
    np.testing.assert_allclose(w.data.sum(axis=1), 1.0, atol=1e-12)


def test_attention_empty_keys():
    with pytest.raises(ValueError, match="empty key set"):
        cross_attention(np.ones((1, 2)), np.zeros((0, 2)), np.zeros((0, 2)), _identity_proj(2))


def test_grouped_attention_equals_dense_per_group():
    rng = np.random.default_rng(4)
    store = ParameterStore()
    att = Attention("a", 3).init(store, rng)
    proj = att.weights(store)
    q = rng.normal(size=(4, 3))
    k = rng.normal(size=(6, 3))
    v = rng.normal(size=(6, 3))
    groups_q = [0, 0, 1, 1]
    groups_k = [0, 0, 0, 1, 1, 1]
    pq, pk = zip(*[(i, j) for i in range(4) for j in range(6) if groups_q[i] == groups_k[j]])
    out, w = grouped_cross_attention(q, k, v, np.array(pq), np.array(pk), proj, return_weights=True)
    dense0 = cross_attention(q[:2], k[:3], v[:3], proj).data
    dense1 = cross_attention(q[2:], k[3:], v[3:], proj).data
    np.testing.assert_allclose(out.data, np.vstack([dense0, dense1]), atol=1e-13)
    sums = np.bincount(np.array(pq), weights=w.data)
    np.testing.assert_allclose(sums, 1.0, atol=1e-12)


def test_backward_sum_gives_ones():
    store = ParameterStore()
    p = store.add("p", np.arange(6.0).reshape(2, 3))
    backward(p.sum(), store)
    assert np.all(store.grad("p") == 1.0)


def test_backward_zero_loss_and_unreached():
    store = ParameterStore()
    a = store.add("a", np.ones(3))
    store.add("b", np.ones(2))
    backward((a * 0.0).sum(), store)
    assert np.all(store.grad("a") == 0.0)
    assert np.all(store.grad("b") == 0.0)


def test_backward_twice_raises():
    store = ParameterStore()
    a = store.add("a", np.ones(3))
    loss = (a * a).sum()
    backward(loss, store)
    with pytest.raises(TapeError):
        backward(loss, store)


def test_backward_rejects_non_scalar():
    store = ParameterStore()
    a = store.add("a", np.ones(3))
    with pytest.raises(TapeError):
        backward(a * 2.0, store)


def _composed_store(seed):
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    MLP("m", (4, 6, 3)).init(store, rng)
    Attention("att", 3).init(store, rng)
    store.add("s", rng.normal(size=(5,)))
    return store, rng.normal(size=(5, 4)), rng.normal(size=(7, 3))


def _composed_loss(store, x, kv):
    mlp = MLP("m", (4, 6, 3))
    h = mlp(store, x)
    att = Attention("att", 3)
    pair_q = np.repeat(np.arange(5), 3)
    pair_k = np.array([(i + j) % 7 for i in range(5) for j in range(3)])
    a = grouped_cross_attention(h, kv, kv, pair_q, pair_k, att.weights(store))
    pooled = T.segment_max(a, np.array([0, 0, 1, 1, 1]), 3)
    traj = T.cumsum(T.tanh(a) * store["s"].reshape(5, 1), axis=0)
    lse = T.logsumexp(traj, axis=1)
    dist = T.norm(traj[:, :2] - 0.3, axis=1)
    return (pooled ** 2).sum() + lse.mean() + T.relu(dist - 0.5).sum() + T.sigmoid(store["s"]).sum()


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(seed):
    store, x, kv = _composed_store(seed)
    err = finite_diff_check(lambda s: _composed_loss(s, x, kv), store, step=1e-6, n_coords=None)
    assert err <= 1e-5


def test_finite_diff_quadratic():
    store = ParameterStore()
    store.add("x", np.array([0.3, -1.2, 2.0]))
    err = finite_diff_check(lambda s: ((s["x"] - 1.0) ** 2).sum() * 3.0, store, step=1e-6, n_coords=None)
    assert err <= 1e-8


def test_finite_diff_constant():
    store = ParameterStore()
    store.add("x", np.array([0.3, -1.2]))
    err = finite_diff_check(lambda s: (s["x"] * 0.0).sum() + 4.0, store, n_coords=None)
    assert err == 0.0


def test_finite_diff_nonfinite_raises():
    store = ParameterStore()
    store.add("x", np.array([-1.0]))
    with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
        finite_diff_check(lambda s: T.log(s["x"]).sum(), store)


def test_adam_zero_gradient_keeps_params():
    store = ParameterStore()
    store.add("x", np.array([1.0, -2.0]))
    opt = Adam(lr=0.1)
    opt.step(store)
    assert store["x"].data.tolist() == [1.0, -2.0]


def test_adam_first_step_is_lr_times_sign():
    store = ParameterStore()
    store.add("x", np.array([1.0, -2.0, 0.5]))
    store["x"].grad = np.array([3.0, -0.01, 0.0])
    Adam(lr=0.1, eps=1e-12).step(store)
    # bias-corrected m/sqrt(v) = g/|g| on the first step
    np.testing.assert_allclose(store["x"].data, [0.9, -1.9, 0.5], atol=1e-9)


def test_adam_converges_on_quadratic():
    store = ParameterStore()
    store.add("x", np.array([3.0, -4.0, 1.5]))
    opt = Adam(lr=0.05)
    losses = []
    for _ in range(200):
        loss = ((store["x"] - 0.5) ** 2).sum()
        losses.append(loss.item())
        backward(loss, store)
        opt.step(store)
    tail = losses[20:120]
    assert all(b < a for a, b in zip(tail, tail[1:]))
    assert losses[-1] < 1e-2 * losses[0]


def test_forward_is_deterministic():
    store, x, kv = _composed_store(7)
    a = _composed_loss(store, x, kv).data
    b = _composed_loss(store, x, kv).data
    assert a.tobytes() == b.tobytes()


def test_checkpoint_container_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"a": rng.normal(size=(3, 4)), "b": np.array(2.5), "c": rng.normal(size=(0, 2))}
    path = tmp_path / "x.ckpt"
    save_container(path, tensors, "abc", {"eps": 0.25})
    got, h, sections = load_container(path)
    assert h == "abc" and sections == {"eps": 0.25}
    for k, v in tensors.items():
        assert got[k].shape == v.shape
        assert got[k].tobytes() == v.tobytes()
