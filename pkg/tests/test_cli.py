import json

import pytest

from fump.cli import run
from fump.datagen import export_annotations, read_dataset

TINY = {"epochs": 1, "batch_size": 4, "d": 8, "hidden": 8, "capacity": 20}


def write_config(path, extra=None):
    path.write_text(json.dumps({**TINY, **(extra or {})}))
    return str(path)


def test_help_lists_defaults(capsys):
    assert run(["--help"]) == 0
    out = capsys.readouterr().out
    for text in ("gamma=0.2", "capacity=700", "mask=0.0625", "K=6", "T=6", "zones=4"):
        assert text in out


def test_unknown_flag_is_usage_error(capsys):
    assert run(["gen-data", "--out", "x", "--bogus"]) == 2
    assert "usage:" in capsys.readouterr().err


def test_count_zero(tmp_path, capsys):
    assert run(["gen-data", "--count", "0", "--out", str(tmp_path / "d.jsonl")]) == 2
    assert "fump: error: count must be ≥ 1" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"epochs": 1, "learn_rate": 0.1}))
    assert run(["train", "--config", str(cfg), "--data", "x", "--out", str(tmp_path / "m")]) == 2
    assert "learn_rate" in capsys.readouterr().err
    cfg.write_text(json.dumps({"scenario": {"lanes": 3}}))
    assert run(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 2
    assert "scenario.lanes" in capsys.readouterr().err


def test_missing_dataset(tmp_path, capsys):
    assert run(["curate", "--in", str(tmp_path / "none.jsonl"), "--out", str(tmp_path / "o")]) == 2
    assert capsys.readouterr().err.splitlines()[-1].startswith("fump: error:")


def test_gen_data_with_scenario(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"scenario": {"agent_count": [2, 2]}}))
    out = tmp_path / "d.jsonl"
    assert run(["gen-data", "--seed", "4", "--count", "5", "--out", str(out), "--config", str(cfg)]) == 0
    scenes = read_dataset(out)
    assert len(scenes) == 5 and all(len(s.agents) <= 2 for s in scenes)


def test_convert(tmp_path):
    _, ann = export_annotations(2)
    src, dst = tmp_path / "a.json", tmp_path / "b.json"
    src.write_text(json.dumps(ann))
    assert run(["convert", "--in", str(src), "--out", str(dst)]) == 0
    assert json.loads(dst.read_text())["tracks"]


def test_curate(tmp_path):
    data = tmp_path / "d.jsonl"
    assert run(["gen-data", "--seed", "1", "--count", "60", "--out", str(data)]) == 0
    assert run(["curate", "--in", str(data), "--out", str(tmp_path / "t.jsonl"), "--k", "2"]) == 0
    assert len(read_dataset(tmp_path / "t.jsonl")) <= 60


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    data = d / "d.jsonl"
    assert run(["gen-data", "--seed", "3", "--count", "8", "--out", str(data)]) == 0
    cfg = write_config(d / "c.json")
    assert run(["train", "--config", cfg, "--data", str(data), "--out", str(d / "m.ckpt")]) == 0
    return d, data, cfg


def test_train_eval_reproducible(trained, tmp_path):
    d, data, cfg = trained
    assert run(["train", "--config", cfg, "--data", str(data), "--out", str(tmp_path / "m.ckpt")]) == 0
    assert (tmp_path / "m.ckpt.losses.csv").read_bytes() == (d / "m.ckpt.losses.csv").read_bytes()
    reports = []
    for ckpt in (d / "m.ckpt", tmp_path / "m.ckpt"):
        out = tmp_path / f"r{len(reports)}.json"
        assert run(["eval", "--ckpt", str(ckpt), "--data", str(data), "--state-mode", "stp", "--motion-refine",
                    "--format", "json", "--out", str(out)]) == 0
        reports.append(out.read_bytes())
    assert reports[0] == reports[1]
    assert json.loads(reports[0])["state_mode"] == "predicted"


def test_eval_config_hash_mismatch(trained, tmp_path, capsys):
    d, data, _ = trained
    other = write_config(tmp_path / "o.json", {"lr": 0.01})
    assert run(["eval", "--ckpt", str(d / "m.ckpt"), "--data", str(data), "--config", other]) == 1
    assert "fump: checkpoint error:" in capsys.readouterr().err


def test_eval_text_to_stdout(trained, capsys):
    d, data, _ = trained
    assert run(["eval", "--ckpt", str(d / "m.ckpt"), "--data", str(data)]) == 0
    cap = capsys.readouterr()
    assert cap.out.startswith("samples: 8")
    assert "fump: invocation: fump eval" in cap.err


def test_check_suite(capsys):
    assert run(["check", "--suite", "geometry"]) == 0
    out = capsys.readouterr().out
    assert "PASS suite geometry" in out and "FAIL" not in out
