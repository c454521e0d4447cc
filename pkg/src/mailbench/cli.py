"""Command-line entry point.

Subcommands:
  train            run a (mode x seed) grid from an INI config
  record-scripted  generate a demonstration dataset with the scripted expert
  eval             greedy evaluation of a saved checkpoint
  export-curves    tidy per-mode CSV curves from a finished run directory
  serve-demo       play the arena in a browser and record demonstrations

Config values come from the INI file (sections [experiment], [train],
[env]); environment variables MAILBENCH_<SECTION>_<KEY> override file
values, and a handful of dedicated flags override both.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import statistics
import sys

from . import config as cfgmod
from .arena import EnvConfig
from .config import ExperimentSpec, load_spec, save_spec
from .expert_data import DemoLoadError, load as load_demos, record_scripted, save as save_demos
from .trainer import MailTrainer, train


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 2


# -- train ------------------------------------------------------------------

def _cell_dir(out_dir: str, mode: str, seed: int) -> str:
    return os.path.join(out_dir, mode, f"seed{seed}")


def _load_expert_checked(spec: ExperimentSpec):
    """Fail fast, before any training starts, when expert data is needed."""
    needed = [m for m in spec.modes if m in cfgmod.EXPERT_MODES]
    if not needed:
        return None
    if spec.expert_path is None:
        raise SystemExit(_fail(
            f"modes {needed} need a demonstration dataset but expert_path "
            "is not set. Record one first:\n  mailbench record-scripted "
            "--episodes 30 --seed 7 --out demos/scripted.jsonl"))
    if not os.path.exists(spec.expert_path):
        raise SystemExit(_fail(
            f"expert dataset not found: {spec.expert_path}\nRecord one "
            "first:\n  mailbench record-scripted --episodes 30 --seed 7 "
            f"--out {spec.expert_path}"))
    try:
        return load_demos(spec.expert_path)
    except DemoLoadError as exc:
        raise SystemExit(_fail(f"could not load {spec.expert_path}: {exc}"))


def _run_cell(spec: ExperimentSpec, expert, mode: str, seed: int,
              resume: bool) -> dict:
    cell = _cell_dir(spec.out_dir, mode, seed)
    result_path = os.path.join(cell, "result.json")
    if resume and os.path.exists(result_path):
        with open(result_path) as fh:
            prior = json.load(fh)
        if prior.get("status") == "completed":
            print(f"[{mode} seed {seed}] already completed, skipping")
            return prior
    os.makedirs(cell, exist_ok=True)
    cfg = spec.cell_config(mode, seed)
    cell_spec = ExperimentSpec(
        modes=[mode], seeds=[seed], out_dir=cell,
        expert_path=spec.expert_path, train=cfg, env=spec.env)
    save_spec(cell_spec, os.path.join(cell, "config.ini"))

    cell_expert = expert if cfg.uses_expert else None
    try:
        out = train(cfg, spec.env, cell_expert,
                    metrics_path=os.path.join(cell, "metrics.csv"),
                    checkpoint_path=os.path.join(cell, "checkpoint.ckpt"),
                    progress=print)
        result = {"status": "completed", "mode": mode, "seed": seed,
                  "final": {k: v for k, v in out["final"].items()
                            if k != "eval_scores"},
                  "wall_time": round(out["wall_time"], 3),
                  "incidents": out["incidents"]}
    except KeyboardInterrupt:
        raise
    except Exception as exc:  # mark the cell failed, keep the grid going
        result = {"status": "failed", "mode": mode, "seed": seed,
                  "error": f"{type(exc).__name__}: {exc}"}
        print(f"[{mode} seed {seed}] FAILED: {exc}", file=sys.stderr)
    with open(result_path, "w") as fh:
        json.dump(result, fh, indent=1)
    return result


def _read_eval_rows(metrics_path: str) -> list[dict]:
    rows = []
    with open(metrics_path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["eval_score_mean"]:
                rows.append(row)
    return rows


def write_aggregate(spec: ExperimentSpec, partial: bool) -> str:
    """Per-step mean/std of the greedy-eval score across seeds, one row
    per (mode, step).  Deterministic given the per-cell metrics."""
    path = os.path.join(spec.out_dir, "aggregate.csv")
    with open(path, "w", newline="") as fh:
        if partial:
            fh.write("# partial: one or more cells missing or failed\n")
        writer = csv.writer(fh)
        writer.writerow(["mode", "step", "score_mean", "score_std",
                         "actions_mean", "n_seeds"])
        for mode in spec.modes:
            per_step: dict[int, list[tuple[float, float]]] = {}
            for seed in spec.seeds:
                mp = os.path.join(_cell_dir(spec.out_dir, mode, seed),
                                  "metrics.csv")
                if not os.path.exists(mp):
                    continue
                for row in _read_eval_rows(mp):
                    per_step.setdefault(int(row["step"]), []).append(
                        (float(row["eval_score_mean"]),
                         float(row["eval_actions_mean"])))
            for step in sorted(per_step):
                vals = [v[0] for v in per_step[step]]
                acts = [v[1] for v in per_step[step]]
                std = statistics.pstdev(vals) if len(vals) > 1 else 0.0
                writer.writerow([mode, step, round(statistics.mean(vals), 6),
                                 round(std, 6), round(statistics.mean(acts), 6),
                                 len(vals)])
    return path


def cmd_train(args) -> int:
    spec = load_spec(args.config)
    if args.out:
        spec.out_dir = args.out
    if args.mode:
        spec.modes = args.mode
    if args.seed:
        spec.seeds = args.seed
    ExperimentSpec.__post_init__(spec)

    if os.path.isdir(spec.out_dir) and os.listdir(spec.out_dir) \
            and not (args.resume or args.force):
        return _fail(f"output dir {spec.out_dir!r} is not empty; "
                     "pass --resume to continue or --force to mix outputs")
    os.makedirs(spec.out_dir, exist_ok=True)

    expert = _load_expert_checked(spec)
    save_spec(spec, os.path.join(spec.out_dir, "spec.ini"))

    results = []
    for mode in spec.modes:
        for seed in spec.seeds:
            results.append(_run_cell(spec, expert, mode, seed, args.resume))
    failed = [r for r in results if r["status"] != "completed"]
    agg = write_aggregate(spec, partial=bool(failed))
    with open(os.path.join(spec.out_dir, "summary.json"), "w") as fh:
        json.dump({"cells": results, "failed": len(failed)}, fh, indent=1)
    print(f"aggregate written to {agg}")
    if failed:
        print(f"{len(failed)} cell(s) failed; results are partial",
              file=sys.stderr)
        return 1
    return 0


# -- record-scripted --------------------------------------------------------

def cmd_record_scripted(args) -> int:
    env_cfg = load_spec(args.config).env if args.config else EnvConfig()
    ds = record_scripted(args.episodes, seed=args.seed, env_cfg=env_cfg)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    try:
        save_demos(ds, args.out)
    except OSError as exc:
        return _fail(f"cannot write {args.out}: {exc}")
    # Stats come from re-reading the file, so the table also proves the
    # round trip.
    back = load_demos(args.out)
    scores = back.scores
    print(f"wrote {args.out}")
    print(f"  observations {back.frames.shape[0]}")
    print(f"  episodes     {len(scores)}")
    print(f"  score mean   {statistics.mean(scores):.3f}")
    print(f"  score std    "
          f"{statistics.pstdev(scores) if len(scores) > 1 else 0.0:.3f}")
    return 0


# -- eval -------------------------------------------------------------------

def cmd_eval(args) -> int:
    if not os.path.exists(args.checkpoint):
        return _fail(f"checkpoint not found: {args.checkpoint}")
    cfg_path = args.config
    if cfg_path is None:
        guess = os.path.join(os.path.dirname(args.checkpoint), "config.ini")
        if os.path.exists(guess):
            cfg_path = guess
        else:
            return _fail("no --config given and no config.ini found next "
                         "to the checkpoint")
    spec = load_spec(cfg_path)
    cfg = spec.cell_config(spec.modes[0], spec.seeds[0])
    trainer = MailTrainer(cfg, spec.env, expert=None, eval_only=True)
    try:
        trainer.load_checkpoint(args.checkpoint)
    except (KeyError, ValueError) as exc:
        return _fail(f"checkpoint does not match config {cfg_path}: {exc}")
    stats = trainer.evaluate(episodes=args.episodes, seed_base=args.seed)
    scores = stats["eval_scores"]
    print(f"checkpoint   {args.checkpoint}")
    print(f"mode         {cfg.mode}  (trained {trainer.env_steps} env steps)")
    print(f"episodes     {len(scores)}  (seeds {args.seed}.."
          f"{args.seed + len(scores) - 1})")
    print(f"score mean   {stats['eval_score_mean']:.3f}")
    print(f"score std    {stats['eval_score_std']:.3f}")
    print(f"score min    {min(scores):.3f}")
    print(f"score max    {max(scores):.3f}")
    print(f"actions/step {stats['eval_actions_mean']:.3f}")
    return 0


# -- export-curves ----------------------------------------------------------

def cmd_export_curves(args) -> int:
    spec_path = os.path.join(args.run_dir, "spec.ini")
    if not os.path.exists(spec_path):
        return _fail(f"{args.run_dir!r} has no spec.ini (not a run dir?)")
    spec = load_spec(spec_path)
    spec.out_dir = args.run_dir
    out_dir = args.out or os.path.join(args.run_dir, "curves")
    os.makedirs(out_dir, exist_ok=True)
    wrote = 0
    for mode in spec.modes:
        series: dict[int, list[float]] = {}
        for seed in spec.seeds:
            mp = os.path.join(_cell_dir(args.run_dir, mode, seed),
                              "metrics.csv")
            if not os.path.exists(mp):
                continue
            for row in _read_eval_rows(mp):
                series.setdefault(int(row["step"]), []).append(
                    float(row["eval_score_mean"]))
        if not series:
            continue
        path = os.path.join(out_dir, f"{mode}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "score_mean", "score_std", "n_seeds"])
            for step in sorted(series):
                vals = series[step]
                std = statistics.pstdev(vals) if len(vals) > 1 else 0.0
                writer.writerow([step, round(statistics.mean(vals), 6),
                                 round(std, 6), len(vals)])
        print(f"wrote {path}")
        wrote += 1
    if wrote == 0:
        return _fail(f"no completed cells with metrics under {args.run_dir}")
    return 0


# -- serve-demo -------------------------------------------------------------

def cmd_serve_demo(args) -> int:
    from .bridge import serve  # websocket server; import only when used
    env_cfg = load_spec(args.config).env if args.config else EnvConfig()
    print(f"serving arena on ws://127.0.0.1:{args.port} "
          f"(tick {args.tick_hz} Hz, seed {args.seed})")
    print(f"recording to {args.out}")
    serve(port=args.port, env_cfg=env_cfg, out_path=args.out,
          tick_hz=args.tick_hz, seed=args.seed,
          keep_partial=args.keep_partial)
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mailbench",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training grid")
    p.add_argument("--config", help="INI config file")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--mode", action="append", choices=cfgmod.MODES,
                   help="restrict to this mode (repeatable)")
    p.add_argument("--seed", action="append", type=int,
                   help="restrict to this seed (repeatable)")
    p.add_argument("--resume", action="store_true",
                   help="skip cells already completed in the output dir")
    p.add_argument("--force", action="store_true",
                   help="allow writing into a non-empty output dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("record-scripted",
                       help="record scripted-expert demonstrations")
    p.add_argument("--episodes", type=int, default=30)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True, help="output dataset path")
    p.add_argument("--config", help="INI file supplying the [env] section")
    p.set_defaults(func=cmd_record_scripted)

    p = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config",
                   help="cell config.ini (default: next to the checkpoint)")
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--seed", type=int, default=10_000,
                   help="first evaluation episode seed")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-curves",
                       help="write per-mode score curves from a run dir")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out", help="curve output dir (default RUN_DIR/curves)")
    p.set_defaults(func=cmd_export_curves)

    p = sub.add_parser("serve-demo",
                       help="serve the arena for human play + recording")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="demos/human.jsonl")
    p.add_argument("--tick-hz", type=float, default=15.0)
    p.add_argument("--config", help="INI file supplying the [env] section")
    p.add_argument("--keep-partial", action="store_true",
                   help="also save episodes cut short by a disconnect")
    p.set_defaults(func=cmd_serve_demo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
