"""Ablation matrix and sampling-throughput measurement."""

from __future__ import annotations

import platform
import time
from dataclasses import replace

from .metrics import COLUMNS, MetricsReport, evaluate
from .pipeline import (PipelineConfig, TrainState, fit_standardizer,
                       regress_baselines, sample_poses, train_loop)

# the seven architecture variants exercised by the comparison harness
VARIANTS = (
    ("full", {}),
    ("no-fusion", {"use_fusion": False}),
    ("no-timestep", {"use_timestep": False}),
    ("mlp-noskip", {"block_kind": "mlp", "skip_mode": "none"}),
    ("mlp-skip", {"block_kind": "mlp", "skip_mode": "concat"}),
    ("transformer-noskip", {"block_kind": "transformer", "skip_mode": "none"}),
    ("transformer-residual", {"block_kind": "transformer",
                              "skip_mode": "residual"}),
)


def variant_config(base: PipelineConfig, overrides: dict) -> PipelineConfig:
    return replace(base, **overrides)


def run_ablations(train_samples, test_samples, base_cfg: PipelineConfig,
                  steps: int, sample_steps: int | None = None,
                  seed: int = 0, progress=None) -> dict:
    """Train every variant under one shared budget and score it.

    Returns {variant: {"report": MetricsReport, "final_loss": float}} in
    the fixed variant order; identical seeds give identical tables.
    """
    std = fit_standardizer(train_samples)
    results = {}
    for name, overrides in VARIANTS:
        cfg = variant_config(base_cfg, overrides)
        state = TrainState.init(cfg, std)
        losses = train_loop(state, train_samples, steps)
        preds = sample_poses(state, test_samples, n_steps=sample_steps,
                             seed=seed)
        report = evaluate(preds, {s.sample_id: s for s in test_samples},
                          config_fingerprint=cfg.config_hash())
        results[name] = {"report": report,
                         "final_loss": float(sum(losses[-50:]) /
                                             len(losses[-50:]))}
        if progress is not None:
            progress(name, results[name])
    return results


def run_benchmark(train_samples, test_samples, cfg: PipelineConfig,
                  steps: int, sample_steps: int | None = None,
                  seed: int = 0, progress=None) -> dict:
    """Train the diffusion model and the direct-regression baseline under
    the same step budget and score both on the same test split.

    Returns {"diffusion": {...}, "baseline": {...}} with the same entry
    shape as run_ablations, plus wall-clock training seconds per model.
    """
    std = fit_standardizer(train_samples)
    gts = {s.sample_id: s for s in test_samples}
    results = {}
    for mode in ("diffusion", "baseline"):
        state = TrainState.init(cfg, std, mode=mode)
        t0 = time.perf_counter()
        losses = train_loop(state, train_samples, steps)
        wall = time.perf_counter() - t0
        if mode == "diffusion":
            preds = sample_poses(state, test_samples, n_steps=sample_steps,
                                 seed=seed)
        else:
            preds = regress_baselines(state, test_samples)
        report = evaluate(preds, gts, config_fingerprint=cfg.config_hash())
        results[mode] = {"report": report,
                         "final_loss": float(sum(losses[-50:]) /
                                             len(losses[-50:])),
                         "train_steps": steps,
                         "train_seconds": wall,
                         "state": state}
        if progress is not None:
            progress(mode, results[mode])
    return results


def ablation_table(results: dict, label: str = "variant") -> str:
    """One mean-accuracy row per entry, fixed column order."""
    name_w = max(len(label), max(len(n) for n in results)) + 2
    head = label.ljust(name_w) + "loss".rjust(8) + "".join(
        c.rjust(11) for c in COLUMNS)
    lines = [head, "-" * len(head)]
    for name, res in results.items():
        mean = res["report"].mean
        lines.append(name.ljust(name_w) + f"{res['final_loss']:8.3f}" +
                     "".join(f"{mean[c]:11.1f}" for c in COLUMNS))
    return "\n".join(lines)


def bench_throughput(state: TrainState, samples, n_steps: int | None = None,
                     batch_size: int = 32, min_samples: int = 100) -> dict:
    """Wall-clock reverse-diffusion throughput, warm-started.

    The absolute number is hardware-specific; the report carries a
    platform descriptor, the step count, and the batch size so runs are
    comparable.
    """
    pool = list(samples)
    while len(pool) < min_samples:
        pool = pool + list(samples)
    pool = pool[:max(min_samples, len(samples))]
    n = n_steps if n_steps is not None else state.cfg.ddim_steps
    sample_poses(state, pool[:batch_size], n_steps=n,
                 batch_size=batch_size)  # warm-up
    t0 = time.perf_counter()
    sample_poses(state, pool, n_steps=n, batch_size=batch_size)
    dt = time.perf_counter() - t0
    return {
        "samples_per_sec": len(pool) / dt,
        "n_samples": len(pool),
        "n_steps": n,
        "batch_size": batch_size,
        "wall_time_sec": dt,
        "platform": f"{platform.system()} {platform.machine()}, "
                    f"python {platform.python_version()}",
    }
