from dataclasses import replace

import numpy as np
import pytest

from fump.numerics import CheckpointError
from fump.trainer import (LOSS_KEYS, TrainConfig, ablation_table, batch_losses, evaluate, init_state, load_checkpoint,
                          loss_csv, predict_plans, prepare, save_checkpoint, train)
from fump.uttd import infer_plan

TINY = TrainConfig(epochs=1, batch_size=4, d=8, hidden=8, capacity=20)


@pytest.fixture(scope="module")
def scenes():
    from fump.datagen import generate_dataset
    return generate_dataset(13, 10)


def params(state):
    return {n: t.data.copy() for n, t in state.model.store.items()}


def test_one_epoch_deterministic(scenes):
    rows_a, rows_b = [], []
    a = train(TINY, scenes, csv_rows=rows_a)
    b = train(TINY, scenes, csv_rows=rows_b)
    pa, pb = params(a), params(b)
    assert all(np.array_equal(pa[n], pb[n]) for n in pa)
    assert loss_csv(rows_a) == loss_csv(rows_b)
    assert loss_csv(rows_a).splitlines()[0] == "epoch,batch," + ",".join(LOSS_KEYS)


def test_no_joint_motion_gives_zero_motion_loss(scenes):
    cfg = replace(TINY, joint_motion=False)
    state = train(cfg, scenes)
    assert state.records[0]["motion"] == 0.0
    assert len(state.model.memory) == 0


def test_losses_are_finite_and_nonnegative(scenes):
    state = init_state(TINY)
    out = batch_losses(state, [prepare(s) for s in scenes[:3]], frozen=True)
    for k in LOSS_KEYS:
        if k in out:
            assert np.isfinite(out[k].item()) and out[k].item() >= 0.0


def test_memory_filled_with_joint_motion(scenes):
    state = train(TINY, scenes)
    assert 0 < len(state.model.memory) <= TINY.capacity


def test_checkpoint_resume_equals_uninterrupted(scenes, tmp_path):
    two = replace(TINY, epochs=2)
    straight = train(two, scenes)
    half = train(TINY, scenes)
    save_checkpoint(tmp_path / "c.ckpt", half)
    resumed = train(two, scenes, resume=load_checkpoint(tmp_path / "c.ckpt"))
    pa, pb = params(straight), params(resumed)
    assert all(np.array_equal(pa[n], pb[n]) for n in pa)
    assert straight.records == resumed.records
    assert straight.model.memory.threshold_text == resumed.model.memory.threshold_text
    assert np.array_equal(straight.model.memory.losses(), resumed.model.memory.losses())


def test_resume_with_other_config_rejected(scenes):
    state = train(TINY, scenes)
    with pytest.raises(CheckpointError):
        train(replace(TINY, epochs=2, lr=1e-3), scenes, resume=state)


def test_eval_hash_mismatch(scenes):
    state = init_state(TINY)
    with pytest.raises(CheckpointError):
        evaluate(state, scenes, expected_hash="0" * 16)


def test_eval_empty(scenes):
    with pytest.raises(ValueError, match="no samples"):
        evaluate(init_state(TINY), [])
    with pytest.raises(ValueError):
        train(TINY, [])


def test_eval_report_deterministic(scenes):
    a = evaluate(train(TINY, scenes), scenes, "predicted", motion_refine=True)
    b = evaluate(train(TINY, scenes), scenes, "predicted", motion_refine=True)
    assert a.to_json() == b.to_json() and a.to_text() == b.to_text()
    assert a.min_ade is not None


def test_batched_plans_match_single(scenes):
    state = train(TINY, scenes)
    for mode in ("ground_truth", "predicted"):
        batched = predict_plans(state.model, scenes, mode, batch_size=3)
        for p, s in zip(batched, scenes):
            assert np.allclose(p, infer_plan(s, state.model, mode), atol=1e-10)


def test_unknown_config_key():
    with pytest.raises(ValueError, match="unknown config key"):
        TrainConfig.from_dict({"epochs": 1, "learning_rate": 0.1})
    assert TrainConfig.from_dict({"epochs": 3}).epochs == 3


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(gamma=1.0)
    with pytest.raises(ValueError):
        TrainConfig(mask_prob=1.5)


def test_hash_ignores_epoch_budget():
    assert TrainConfig(epochs=1).hash() == TrainConfig(epochs=9).hash()
    assert TrainConfig(lr=1e-3).hash() != TrainConfig().hash()


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.gamma, cfg.capacity, cfg.mask_prob) == (0.2, 700, 0.0625)
    assert (cfg.w_motion, cfg.w_plan1, cfg.w_plan2, cfg.w_stp) == (1.0, 1.0, 1.0, 0.5)


def test_ablation_baseline_zero(scenes):
    from fump.trainer import ablate
    rows = ablate(TINY, scenes[:6], scenes[6:])
    assert [r.name for r in rows][0] == "baseline"
    assert rows[0].cegr == 0.0
    assert len(ablation_table(rows).splitlines()) == 5
