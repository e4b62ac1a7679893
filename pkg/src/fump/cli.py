"""``fump`` command line: data generation, conversion, curation, training, evaluation and checks.

Exit codes: 0 success, 1 verification or runtime failure, 2 usage or input error.
Every error line on stderr starts with ``fump: <kind>:``.
"""

from __future__ import annotations

import os

# thread caps must be in place before numpy loads its BLAS
_THREADS = os.environ.get("FUMP_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _THREADS)

import argparse  # noqa: E402
import json  # noqa: E402
import shlex  # noqa: E402
import sys  # noqa: E402
from dataclasses import asdict, fields, replace  # noqa: E402
from pathlib import Path  # noqa: E402

from . import __version__  # noqa: E402
from .checks import SUITES, run_suite  # noqa: E402
from .datagen import (DatasetError, ScenarioConfig, convert_file, curate_longtail, generate_dataset,  # noqa: E402
                      read_dataset, write_dataset)
from .metrics import AGENT_RADIUS, EGO_RADIUS  # noqa: E402
from .numerics import CheckpointError  # noqa: E402
from .scene import HORIZON, N_ZONES  # noqa: E402
from .trainer import (TrainConfig, TrainingError, ablate, ablation_table, evaluate, load_checkpoint,  # noqa: E402
                      loss_csv, save_checkpoint, train)
from .uttd import K_MODES  # noqa: E402

CHECK_CHOICES = ["equivariance", "gradients", "geometry", "memory", "masking", "pseudo-gt", "optics", "all"]
STATE_MODES = {"gt": "ground_truth", "stp": "predicted"}


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration file
# ---------------------------------------------------------------------------
def _scenario_from(d: dict) -> ScenarioConfig:
    known = {f.name for f in fields(ScenarioConfig)}
    for k in d:
        if k not in known:
            raise UsageError(f"unknown config key 'scenario.{k}'")
    d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    return ScenarioConfig(**d)


def load_config(path) -> dict:
    """Parse a JSON config into ``train``, ``scenario`` and ``radii`` parts.

    Top-level keys are TrainConfig fields plus ``scenario`` (an object of
    ScenarioConfig fields), ``ego_radius`` and ``agent_radius``.
    """
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise UsageError(f"cannot read config {path}: {e.strerror}") from None
        except json.JSONDecodeError as e:
            raise UsageError(f"{path}: {e}") from None
        if not isinstance(raw, dict):
            raise UsageError(f"{path}: config must be a JSON object")
    raw = dict(raw)
    scenario = raw.pop("scenario", {})
    radii = (float(raw.pop("ego_radius", EGO_RADIUS)), float(raw.pop("agent_radius", AGENT_RADIUS)))
    try:
        train_cfg = TrainConfig.from_dict(raw)
        scen = _scenario_from(scenario)
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from None
    return {"train": train_cfg, "scenario": scen, "radii": radii}


def config_echo(cfg: dict) -> str:
    d = asdict(cfg["train"])
    d["scenario"] = asdict(cfg["scenario"])
    d["ego_radius"], d["agent_radius"] = cfg["radii"]
    return json.dumps(d, sort_keys=True)


def _defaults_epilog() -> str:
    t, s = TrainConfig(), ScenarioConfig()
    lines = ["model constants:",
             f"  K={K_MODES} proposals, T={HORIZON} steps of 0.5 s, zones={N_ZONES}",
             f"  gamma={t.gamma}  capacity={t.capacity}  mask={t.mask_prob}",
             f"  collision radii: ego_radius={EGO_RADIUS} agent_radius={AGENT_RADIUS}",
             "training config defaults (JSON keys):"]
    lines += [f"  {f.name}={getattr(t, f.name)!r}" for f in fields(t)]
    lines.append("scenario defaults (JSON object 'scenario'):")
    lines += [f"  {f.name}={getattr(s, f.name)!r}" for f in fields(s)]
    lines.append("environment: FUMP_THREADS caps numeric threads (default 1)")
    return "\n".join(lines)


class _Formatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fump", formatter_class=_Formatter, epilog=_defaults_epilog(),
                                description="Joint motion prediction and planning on synthetic driving scenes.")
    p.add_argument("--version", action="version", version=f"fump {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(name, help_text):
        return sub.add_parser(name, help=help_text, description=help_text, formatter_class=_Formatter,
                              epilog=_defaults_epilog())

    g = cmd("gen-data", "generate a synthetic scene dataset (JSON lines)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--out", required=True)
    g.add_argument("--config", default=None, help="JSON config; only the 'scenario' object is used")

    c = cmd("convert", "turn per-frame ego-frame annotations into per-track local trajectories")
    c.add_argument("--in", dest="src", required=True)
    c.add_argument("--out", required=True)

    c = cmd("curate", "select the scenes of the k smallest OPTICS clusters of ego futures")
    c.add_argument("--in", dest="src", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--k", type=int, default=3)

    t = cmd("train", "train a model and write a checkpoint plus a per-batch loss CSV")
    t.add_argument("--config", default=None)
    t.add_argument("--data", default=None, help="training dataset (overrides the config 'data' key)")
    t.add_argument("--out", required=True, help="checkpoint path; losses go to <out>.losses.csv")
    t.add_argument("--resume", default=None, help="checkpoint to continue from")

    e = cmd("eval", "evaluate a checkpoint on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--state-mode", choices=sorted(STATE_MODES), default="gt")
    e.add_argument("--motion-refine", action="store_true")
    e.add_argument("--config", default=None, help="JSON config; its hash must match the checkpoint")
    e.add_argument("--format", choices=["text", "json", "csv"], default="text")
    e.add_argument("--out", default=None, help="write the report here instead of standard output")

    a = cmd("ablate", "train and evaluate the four module-ablation rows")
    a.add_argument("--config", default=None)
    a.add_argument("--data", default=None)
    a.add_argument("--heldout", default=None)
    a.add_argument("--out", required=True)

    k = cmd("check", "run the property suites and print pass/fail per invariant")
    k.add_argument("--suite", choices=CHECK_CHOICES, default="all")
    return p


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------
def _log(msg: str) -> None:
    print(f"fump: {msg}", file=sys.stderr, flush=True)


def _read(path) -> list:
    if path is None or path == "":
        raise UsageError("a dataset path is required")
    if not Path(path).exists():
        raise UsageError(f"no such file: {path}")
    return read_dataset(path)


def _write_text(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")


def cmd_gen_data(args) -> int:
    if args.count < 1:
        raise UsageError("count must be ≥ 1")
    cfg = load_config(args.config)
    _log(f"config: {json.dumps(asdict(cfg['scenario']), sort_keys=True)}")
    scenes = generate_dataset(args.seed, args.count, cfg["scenario"])
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_dataset(scenes, args.out)
    print(f"wrote {len(scenes)} scenes to {args.out}")
    return 0


def cmd_convert(args) -> int:
    if not Path(args.src).exists():
        raise UsageError(f"no such file: {args.src}")
    out = convert_file(args.src, args.out)
    print(f"wrote {len(out['tracks'])} tracks to {args.out}")
    return 0


def cmd_curate(args) -> int:
    if args.k < 0:
        raise UsageError("k must be >= 0")
    scenes = _read(args.src)
    if not scenes:
        raise UsageError(f"{args.src}: empty dataset")
    res = curate_longtail(scenes, args.k)
    for w in res.warnings:
        _log(f"warning: {w}")
    write_dataset(res.scenes, args.out)
    print(f"selected {len(res.scenes)} of {len(scenes)} scenes from clusters {res.selected_labels} "
          f"(cut {res.clusters.threshold:.6g})")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    tc = cfg["train"]
    if args.data is not None:
        tc = replace(tc, data=args.data)
    _log(f"config: {config_echo({**cfg, 'train': tc})}")
    scenes = _read(tc.data)
    if not scenes:
        raise UsageError(f"{tc.data}: no training samples")
    resume = load_checkpoint(args.resume) if args.resume else None
    rows = []
    state = train(tc, scenes, resume=resume, csv_rows=rows,
                  progress=lambda r: _log("epoch {epoch}: total {total:.6f}".format(**r)))
    save_checkpoint(args.out, state)
    _write_text(f"{args.out}.losses.csv", loss_csv(rows))
    print(f"wrote checkpoint {args.out} (config {tc.hash()}, epoch {state.epoch})")
    return 0


def cmd_eval(args) -> int:
    state = load_checkpoint(args.ckpt)
    cfg = load_config(args.config)
    expected = cfg["train"].hash() if args.config is not None else None
    scenes = _read(args.data)
    if not scenes:
        raise UsageError(f"{args.data}: no samples")
    rep = evaluate(state, scenes, STATE_MODES[args.state_mode], args.motion_refine, expected, cfg["radii"])
    text = {"text": rep.to_text, "json": rep.to_json, "csv": rep.to_csv}[args.format]()
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    tc = cfg["train"]
    data, heldout = args.data or tc.data, args.heldout or tc.heldout
    tc = replace(tc, data=data, heldout=heldout)
    _log(f"config: {config_echo({**cfg, 'train': tc})}")
    scenes, held = _read(data), _read(heldout)
    if not scenes or not held:
        raise UsageError("ablation needs non-empty training and held-out sets")
    rows = ablate(tc, scenes, held, progress=lambda r: _log(f"{r.name}: L2 avg {r.l2['avg']:.4f}"))
    table = ablation_table(rows)
    _write_text(args.out, table)
    sys.stdout.write(table)
    return 0


def cmd_check(args) -> int:
    names = [n for n in SUITES] if args.suite == "all" else [args.suite]
    failed = 0
    for name in names:
        cases, secs = run_suite(name, echo=print)
        bad = sum(not c.ok for c in cases)
        failed += bad
        print(f"{'PASS' if not bad else 'FAIL'} suite {name}: {len(cases) - bad}/{len(cases)} cases in {secs:.1f} s",
              flush=True)
    if failed:
        raise CheckFailed(f"{failed} invariant case(s) failed")
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "convert": cmd_convert, "curate": cmd_curate, "train": cmd_train,
            "eval": cmd_eval, "ablate": cmd_ablate, "check": cmd_check}


def run(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    _log(f"invocation: fump {shlex.join(argv)}  (FUMP_THREADS={_THREADS})")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"fump: error: {e}", file=sys.stderr)
        return 2
    except (DatasetError, FileNotFoundError) as e:
        print(f"fump: data error: {e}", file=sys.stderr)
        return 2
    except CheckpointError as e:
        print(f"fump: checkpoint error: {e}", file=sys.stderr)
        return 1
    except TrainingError as e:
        print(f"fump: training error: {e}", file=sys.stderr)
        return 1
    except CheckFailed as e:
        print(f"fump: check failed: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
