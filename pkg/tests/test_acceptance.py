"""Acceptance criteria, one test each, every test printing a single PASS/FAIL line.

Criterion 8 trains ten models and takes roughly twenty minutes on one core.
"""

import time

import pytest

from fump.checks import run_suite
from fump.cli import run
from fump.experiment import run_seed
from fump.metrics import cegr


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}", flush=True)
    return emit


def suite_criterion(report, n, name, budget):
    cases, secs = run_suite(name)
    bad = [c for c in cases if not c.ok]
    ok = not bad and secs <= budget
    worst = "; ".join(f"{c.name} {c.value:.3g} (tol {c.tol:g})" for c in cases)
    limit = f" (budget {budget:g} s)" if budget != float("inf") else ""
    report(n, ok, f"{name} suite, {len(cases) - len(bad)}/{len(cases)} cases, {secs:.1f} s{limit}: {worst}")
    assert not bad, [c.line() for c in bad]
    assert secs <= budget


def test_c1_equivariance(report):
    suite_criterion(report, 1, "equivariance", 120)


def test_c2_gradients(report):
    suite_criterion(report, 2, "gradients", 300)


def test_c3_geometry(report):
    suite_criterion(report, 3, "geometry", 30)


def test_c4_memory_laws(report):
    suite_criterion(report, 4, "memory", 30)


def test_c5_masking_independence(report):
    suite_criterion(report, 5, "masking", float("inf"))


def test_c6_pseudo_gt_oracle(report):
    suite_criterion(report, 6, "pseudo-gt", float("inf"))


def test_c7_optics_oracle(report):
    suite_criterion(report, 7, "optics", float("inf"))


def test_c8_joint_learning_experiment(report):
    t0 = time.time()
    results = [run_seed(seed) for seed in range(5)]
    secs = time.time() - t0
    lower = sum(r.full_l2 < r.base_l2 for r in results)
    positive = sum(r.cegr > 0 for r in results)
    tail = sum(r.tail_gain >= r.gain for r in results)
    per_seed = "; ".join(f"seed {r.seed}: L2 {r.full_l2:.3f} vs {r.base_l2:.3f}, CEGR {r.cegr:.2f}, "
                         f"gain {r.gain:.3f}, tail gain {r.tail_gain:.3f} (n={r.n_tail})" for r in results)
    ok = lower >= 4 and positive >= 4 and tail >= 3 and secs <= 1800
    report(8, ok, f"L2 lower {lower}/5 (need 4), CEGR>0 {positive}/5 (need 4), tail>=overall {tail}/5 "
                  f"(need 3), {secs / 60:.1f} min (budget 30) | {per_seed}")
    assert lower >= 4
    assert positive >= 4
    assert tail >= 3
    assert secs <= 1800


def test_c9_cegr_arithmetic(report):
    value = cegr(0.39, 0.61, 1.0, 2.0)
    base = cegr(0.61, 0.61, 1.0, 2.0)
    ok = abs(value - 18.03) <= 0.01 and base == 0.0
    report(9, ok, f"cegr(0.39, 0.61, d_total/2) = {value:.4f} (want 18.03 +- 0.01), baseline row = {base}")
    assert abs(value - 18.03) <= 0.01
    assert base == 0.0


def test_c10_determinism(report, tmp_path):
    data = tmp_path / "data.jsonl"
    cfg = tmp_path / "config.json"
    cfg.write_text('{"epochs": 2, "batch_size": 8, "d": 16, "hidden": 16, "seed": 7}')
    assert run(["gen-data", "--seed", "5", "--count", "40", "--out", str(data)]) == 0
    outputs = []
    for rep in range(2):
        ckpt = tmp_path / f"m{rep}.ckpt"
        assert run(["train", "--config", str(cfg), "--data", str(data), "--out", str(ckpt)]) == 0
        files = [ckpt.with_suffix(".ckpt.losses.csv")]
        for fmt in ("text", "json", "csv"):
            out = tmp_path / f"report{rep}.{fmt}"
            assert run(["eval", "--ckpt", str(ckpt), "--data", str(data), "--state-mode", "stp",
                        "--motion-refine", "--format", fmt, "--out", str(out)]) == 0
            files.append(out)
        outputs.append([f.read_bytes() for f in files] + [ckpt.read_bytes()])
    same = outputs[0] == outputs[1]
    report(10, same, f"two train+eval runs, loss CSV, text/json/csv reports and checkpoint byte-identical: {same}")
    assert same
