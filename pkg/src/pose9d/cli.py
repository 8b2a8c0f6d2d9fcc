"""Command-line interface: dataset generation, training, sampling, scoring.

Exit codes: 0 success, 2 usage/config error, 3 data or checkpoint error.
Every run writes a resolved-config snapshot next to its primary output.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .data import gen_dataset, load_dataset, save_dataset
from .errors import InvalidConfigError, Pose9DError
from .geom import box_corners, pose_to_box
from .harness import ablation_table, bench_throughput, run_ablations
from .metrics import (MetricsReport, evaluate, load_predictions,
                      save_predictions)
from .pipeline import (PipelineConfig, TrainState, fit_standardizer,
                       regress_baselines, sample_poses, train_loop)
from .shapes import CATEGORIES

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3


def _load_config(args) -> PipelineConfig:
    overrides = {}
    if args.config is not None:
        overrides = json.loads(Path(args.config).read_text())
    cfg = PipelineConfig.from_dict({**PipelineConfig().to_dict(),
                                    **overrides})
    if args.seed is not None:
        cfg = PipelineConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    return cfg


def _write_snapshot(out_path, command: str, cfg: PipelineConfig | None,
                    extras: dict) -> None:
    snap = {"command": command, "config": None if cfg is None
            else cfg.to_dict(), **extras}
    Path(str(out_path) + ".resolved.json").write_text(
        json.dumps(snap, indent=1, sort_keys=True))


def _cmd_synth_gen(args) -> int:
    cats = args.categories or list(CATEGORIES)
    for c in cats:
        if c not in CATEGORIES:
            print(f"unknown category {c!r}", file=sys.stderr)
            return EXIT_USAGE
    samples = gen_dataset(cats, args.count, args.seed0,
                          difficulty=args.difficulty,
                          point_count=args.point_count,
                          image_size=args.image_size)
    save_dataset(args.out, samples, split=args.split,
                 metadata={"difficulty": args.difficulty, "seed0": args.seed0,
                           "categories": cats})
    _write_snapshot(Path(args.out) / "manifest.json", "synth-gen", None,
                    {"count": args.count, "seed0": args.seed0,
                     "difficulty": args.difficulty, "split": args.split,
                     "categories": cats})
    print(f"wrote {len(samples)} samples to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    samples, _ = load_dataset(args.data)
    if args.resume is not None:
        state = TrainState.load(args.resume)
    else:
        state = TrainState.init(cfg, fit_standardizer(samples),
                                mode=args.mode)
    train_loop(state, samples, args.steps, log_path=args.log)
    state.save(args.out)
    _write_snapshot(args.out, "train", state.cfg,
                    {"mode": state.mode, "steps": args.steps,
                     "data": str(args.data), "final_step": state.step})
    print(f"trained to step {state.step}; checkpoint at {args.out}")
    return EXIT_OK


def _cmd_sample(args) -> int:
    state = TrainState.load(args.ckpt)
    samples, _ = load_dataset(args.data)
    if state.mode == "baseline":
        preds = regress_baselines(state, samples)
    else:
        preds = sample_poses(state, samples, n_steps=args.steps,
                             seed=args.seed if args.seed is not None else 0)
    save_predictions(args.out, preds)
    _write_snapshot(args.out, "sample", state.cfg,
                    {"mode": state.mode, "ckpt": str(args.ckpt),
                     "n_steps": args.steps, "data": str(args.data)})
    print(f"wrote {len(preds)} predictions to {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    preds = load_predictions(args.preds)
    samples, _ = load_dataset(args.data)
    report = evaluate(preds, {s.sample_id: s for s in samples})
    report.save(args.out)
    _write_snapshot(args.out, "eval", None,
                    {"preds": str(args.preds), "data": str(args.data)})
    print(report.table())
    return EXIT_OK


def _cmd_ablate(args) -> int:
    cfg = _load_config(args)
    train_samples, _ = load_dataset(args.train_data)
    test_samples, _ = load_dataset(args.test_data)
    results = run_ablations(
        train_samples, test_samples, cfg, steps=args.steps,
        sample_steps=args.sample_steps,
        seed=args.seed if args.seed is not None else 0,
        progress=lambda name, _: print(f"variant {name} done",
                                       file=sys.stderr))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    merged = {name: res["report"].to_dict() for name, res in results.items()}
    (out / "ablations.json").write_text(json.dumps(merged, indent=1))
    table = ablation_table(results)
    (out / "ablations.txt").write_text(table + "\n")
    _write_snapshot(out / "ablations.json", "ablate", cfg,
                    {"steps": args.steps})
    print(table)
    return EXIT_OK


def _cmd_bench(args) -> int:
    state = TrainState.load(args.ckpt)
    samples, _ = load_dataset(args.data)
    report = bench_throughput(state, samples, n_steps=args.steps,
                              batch_size=args.batch)
    Path(args.out).write_text(json.dumps(report, indent=1))
    print(json.dumps(report, indent=1))
    return EXIT_OK


def _cmd_export_boxes(args) -> int:
    preds = load_predictions(args.preds)
    with Path(args.out).open("w") as fh:
        for sid in sorted(preds):
            corners = box_corners(pose_to_box(preds[sid]))
            fh.write(json.dumps({"id": sid,
                                 "corners": corners.tolist()}) + "\n")
    print(f"wrote {len(preds)} box records to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pose9d",
        description="diffusion-based category-level 9D pose estimation")
    ap.add_argument("--config", type=Path, default=None,
                    help="JSON file of PipelineConfig overrides")
    ap.add_argument("--seed", type=int, default=None,
                    help="override the config seed")
    ap.add_argument("--threads", type=int, default=None,
                    help="BLAS/OpenMP thread cap (set before numpy work)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="generate a synthetic dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--categories", nargs="*", default=None)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed0", type=int, default=0)
    p.add_argument("--difficulty", choices=("easy", "realistic"),
                   default="easy")
    p.add_argument("--split", default="train")
    p.add_argument("--point-count", type=int, default=1024)
    p.add_argument("--image-size", type=int, default=32)
    p.set_defaults(fn=_cmd_synth_gen)

    p = sub.add_parser("train", help="train the diffusion model or baseline")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--mode", choices=("diffusion", "baseline"),
                   default="diffusion")
    p.add_argument("--log", type=Path, default=None)
    p.add_argument("--resume", type=Path, default=None)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("sample", help="write pose predictions")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(fn=_cmd_sample)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--preds", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("ablate", help="train and score all variants")
    p.add_argument("--train-data", type=Path, required=True)
    p.add_argument("--test-data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--sample-steps", type=int, default=None)
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("bench", help="measure sampling throughput")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch", type=int, default=32)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("export-boxes", help="dump 8-corner boxes per pose")
    p.add_argument("--preds", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(fn=_cmd_export_boxes)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        return args.fn(args)
    except InvalidConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (Pose9DError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
