#!/usr/bin/env python3
"""Directional adaptation ablation on the synthetic sim-to-real benchmark.

Trains four arms per seed (source-only baseline, reconstruction pretext
only, mixup only, both) and reports mean target-domain accuracy. With
--config pointing at a RunConfig JSON that carries a `grid`, the fixed
arms are replaced by one run per grid point (axes: lr, ssl_weight,
weight_decay).

Example:
    python3 scripts/adaptation_ablation.py --out /tmp/ablation \
        --seeds 0 1 2 --epochs 30 --dtype float32
"""

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

from pcda.config import expand_grid, load_run_config, RunConfig
from pcda.synthbench import BenchConfig, gen_benchmark
from pcda.training import TrainConfig, evaluate_classification, train

ARMS = {
    "baseline": dict(ssl_weight=0.0, use_mixup=False),
    "ssl_only": dict(ssl_weight=0.25, use_mixup=False),
    "mix_only": dict(ssl_weight=0.0, use_mixup=True),
    "both": dict(ssl_weight=0.25, use_mixup=True),
}


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True, help="directory for runs and results")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--dtype", default="float32", choices=("float32", "float64"))
    ap.add_argument("--config", help="RunConfig JSON (bench + train + optional grid)")
    return ap.parse_args()


def grid_label(base: TrainConfig, variant: TrainConfig) -> str:
    parts = []
    for axis in ("lr", "ssl_weight", "weight_decay"):
        if getattr(variant, axis) != getattr(base, axis):
            parts.append(f"{axis}={getattr(variant, axis):g}")
    return ",".join(parts) or "base"


def build_jobs(run_cfg: RunConfig, args):
    """Yield (label, train_config) pairs for one seed, seed not yet set."""
    base = dataclasses.replace(run_cfg.train, epochs=args.epochs, dtype=args.dtype)
    if run_cfg.grid:
        for variant in expand_grid(dataclasses.replace(run_cfg, train=base)):
            yield grid_label(base, variant), variant
    else:
        for name, kw in ARMS.items():
            yield name, dataclasses.replace(base, **kw)


def main():
    args = parse_args()
    run_cfg = load_run_config(args.config) if args.config else RunConfig()
    os.makedirs(args.out, exist_ok=True)

    t0 = time.monotonic()
    results: dict = {}
    for seed in args.seeds:
        bench_cfg = dataclasses.replace(run_cfg.bench, seed=seed)
        splits, _ = gen_benchmark(bench_cfg)
        for label, cfg in build_jobs(run_cfg, args):
            cfg = dataclasses.replace(cfg, seed=seed)
            run_dir = os.path.join(args.out, f"{label.replace('=', '').replace(',', '_')}_s{seed}")
            res = train(splits["source_train"], splits["target_train"], cfg, run_dir)
            tgt = evaluate_classification(res.best_params, splits["target_test"])
            src = evaluate_classification(res.best_params, splits["source_test"])
            results.setdefault(label, []).append(
                {
                    "seed": seed,
                    "target_accuracy": tgt["accuracy"],
                    "source_accuracy": src["accuracy"],
                    "best_epoch": res.best_epoch,
                }
            )
            print(
                f"seed {seed} {label:>24}: target {tgt['accuracy']:.3f} "
                f"source {src['accuracy']:.3f} (best epoch {res.best_epoch})",
                flush=True,
            )

    elapsed = time.monotonic() - t0
    summary = {
        label: {
            "target_accuracy_mean": float(np.mean([r["target_accuracy"] for r in runs])),
            "target_accuracy_std": float(np.std([r["target_accuracy"] for r in runs])),
            "runs": runs,
        }
        for label, runs in results.items()
    }
    with open(os.path.join(args.out, "results.json"), "w", encoding="utf-8") as fh:
        json.dump({"summary": summary, "elapsed_sec": elapsed}, fh, indent=2, sort_keys=True)

    print(f"\n=== mean target accuracy over seeds {args.seeds} ===")
    for label, agg in summary.items():
        print(f"{label:>24}: {agg['target_accuracy_mean']:.3f} "
              f"+/- {agg['target_accuracy_std']:.3f}")
    if not run_cfg.grid and {"baseline", "both"} <= set(summary):
        gain = summary["both"]["target_accuracy_mean"] - summary["baseline"]["target_accuracy_mean"]
        print(f"{'both - baseline':>24}: {gain:+.3f}")
    print(f"total {elapsed / 60:.1f} min; details in {args.out}/results.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
