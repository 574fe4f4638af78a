"""Command line interface.

Subcommands: gen-bench, deform, mixup, train, eval, perplexity, selftest.
Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .cloud import LabeledCloud
from .config import load_run_config
from .dataio import (
    atomic_write_text,
    load_archive,
    load_cloud,
    save_archive,
    save_cloud,
    save_tensors,
)
from .deform import KINDS, DeformSpec, apply_deformation
from .errors import DataFormatError, NumericalError, UsageError
from .evaluation import fit_class_gaussians, log_perplexity, project_features
from .mixup import mixup_classify
from .synthbench import BenchConfig, gen_benchmark
from .training import (
    TrainConfig,
    evaluate_classification,
    evaluate_segmentation,
    extract_global_features,
    load_params,
    train,
)

SPLITS = ("source_train", "source_test", "target_train", "target_test")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _load_bench(bench_dir: str, *needed: str) -> dict:
    if not os.path.isdir(bench_dir):
        raise DataFormatError(f"{bench_dir}: not a benchmark directory")
    out = {}
    for name in needed:
        path = os.path.join(bench_dir, name + ".dfrc")
        if not os.path.exists(path):
            raise DataFormatError(f"{bench_dir}: missing split {name!r} ({path})")
        out[name] = load_archive(path)
    meta_path = os.path.join(bench_dir, "meta.json")
    if os.path.exists(meta_path):
        with open(meta_path, "r", encoding="utf-8") as fh:
            out["meta"] = json.load(fh)
    return out


# -- subcommands -----------------------------------------------------------


def cmd_gen_bench(args) -> int:
    cfg = BenchConfig(
        n_points=args.n_points,
        num_classes=args.classes,
        source_train=args.source_train,
        source_test=args.source_test,
        target_train=args.target_train,
        target_test=args.target_test,
        occlusion_fraction=args.occlusion,
        corruption_scheme=args.scheme,
        density_bias=args.density_bias,
        keep_fraction=args.keep_fraction,
        target_jitter=args.target_jitter,
        seed=args.seed,
        segmentation=args.segmentation,
    )
    splits, meta = gen_benchmark(cfg)
    os.makedirs(args.out, exist_ok=True)
    for name, dataset in splits.items():
        save_archive(os.path.join(args.out, name + ".dfrc"), dataset)
    atomic_write_text(
        os.path.join(args.out, "meta.json"),
        json.dumps(meta, sort_keys=True, indent=2) + "\n",
    )
    _emit(
        {
            "out": args.out,
            "kind": meta["kind"],
            "classes": meta["classes"],
            "counts": {name: len(ds.samples) for name, ds in splits.items()},
        }
    )
    return 0


def _deform_spec_from_args(args) -> DeformSpec:
    return DeformSpec(
        kind=args.kind,
        k=args.voxel_k,
        radius=args.radius,
        layer=args.feature_layer,
        k_pts=args.k_pts,
        relocate_sigma=args.relocate_sigma,
        sample_cap_fraction=args.cap_fraction,
    )


def cmd_deform(args) -> int:
    points = load_cloud(args.input)
    pair = apply_deformation(points, _deform_spec_from_args(args), seed=args.seed)
    save_cloud(args.out, pair.deformed)
    if args.region_out:
        atomic_write_text(
            args.region_out, json.dumps([int(i) for i in pair.region]) + "\n"
        )
    _emit(
        {
            "kind": pair.kind,
            "n": len(points),
            "region_size": len(pair.region),
            "out": args.out,
        }
    )
    return 0


def cmd_mixup(args) -> int:
    a = LabeledCloud(points=load_cloud(args.in_a), label=args.label_a)
    b = LabeledCloud(points=load_cloud(args.in_b), label=args.label_b)
    mixed = mixup_classify(
        a,
        b,
        args.num_classes,
        alpha=args.alpha,
        beta=args.beta,
        seed=args.seed,
        gamma=args.gamma,
    )
    save_cloud(args.out, mixed.points)
    _emit(
        {
            "gamma": mixed.gamma,
            "soft_label": [float(v) for v in mixed.soft_label],
            "out": args.out,
        }
    )
    return 0


def _train_config_from_args(args, task: str) -> TrainConfig:
    if args.config:
        cfg = load_run_config(args.config).train
        if cfg.task != task:
            raise DataFormatError(
                f"config task {cfg.task!r} does not match benchmark task {task!r}"
            )
        return cfg
    return TrainConfig(
        task=task,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        weight_decay=args.weight_decay,
        ssl_weight=args.ssl_weight,
        use_mixup=not args.no_mixup,
        mixup_alpha=args.alpha,
        mixup_beta=args.beta,
        deform=_deform_spec_from_args(args),
        deform_domains=args.deform_domains,
        val_fraction=args.val_fraction,
        augment=not args.no_augment,
        jitter_sigma=args.jitter_sigma,
        jitter_clip=args.jitter_clip,
        seed=args.seed,
        dtype=args.dtype,
    )


def cmd_train(args) -> int:
    bench = _load_bench(args.bench, "source_train", "target_train")
    source = bench["source_train"]
    target = bench["target_train"]
    task = "segmentation" if source.segmented else "classification"
    cfg = _train_config_from_args(args, task)
    os.makedirs(args.out, exist_ok=True)
    lock_path = os.path.join(args.out, ".lock")
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise UsageError(
            f"{args.out} is locked by another run (remove {lock_path} if stale)"
        ) from None
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()) + "\n")
        result = train(source, target, cfg, args.out, resume=args.resume)
    finally:
        if os.path.exists(lock_path):
            os.unlink(lock_path)
    _emit(
        {
            "run_dir": result.run_dir,
            "epochs": cfg.epochs,
            "best_epoch": result.best_epoch,
            "best_val": result.best_val,
        }
    )
    return 0


def cmd_eval(args) -> int:
    params, meta = load_params(args.ckpt)
    bench = _load_bench(args.bench, args.split)
    dataset = bench[args.split]
    if meta.get("task") == "segmentation":
        if not dataset.segmented:
            raise DataFormatError("checkpoint is segmentation but split is not")
        metrics = evaluate_segmentation(params, dataset, args.batch_size)
    else:
        if dataset.segmented:
            raise DataFormatError("checkpoint is classification but split is segmented")
        metrics = evaluate_classification(params, dataset, args.batch_size)
    _emit({"split": args.split, **metrics})
    return 0


def cmd_perplexity(args) -> int:
    params, meta = load_params(args.ckpt)
    if meta.get("task") == "segmentation":
        raise DataFormatError("feature scoring needs a classification checkpoint")
    bench = _load_bench(args.bench, "source_train", args.split)
    source = bench["source_train"]
    scored = bench[args.split]
    if source.segmented or scored.segmented:
        raise DataFormatError("feature scoring needs class-labelled archives")
    src_feats = extract_global_features(params, source.points_array(), args.batch_size)
    model = fit_class_gaussians(src_feats, source.labels(), source.num_classes)
    feats = extract_global_features(params, scored.points_array(), args.batch_size)
    labels = scored.labels()
    payload = {
        "split": args.split,
        "log_perplexity": log_perplexity(model, feats, labels),
        "log_perplexity_balanced": log_perplexity(model, feats, labels, balanced=True),
        "count": len(labels),
    }
    if args.features_out:
        proj, _ = project_features(feats, 2)
        save_tensors(
            args.features_out,
            {"features": feats, "labels": labels, "projection": proj},
            {"split": args.split},
        )
        payload["features_out"] = args.features_out
    _emit(payload)
    return 0


def cmd_selftest(args) -> int:
    from .selfcheck import run_all

    results = run_all()
    failed = 0
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        line = f"{status} {r.name}"
        if r.detail:
            line += f": {r.detail}"
        print(line)
        failed += 0 if r.ok else 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 3


# -- parser ----------------------------------------------------------------


def _add_deform_flags(p) -> None:
    p.add_argument("--kind", default="voxel", choices=KINDS, help="deformation variant")
    p.add_argument("--voxel-k", type=int, default=3, help="voxel grid resolution")
    p.add_argument("--radius", type=float, default=0.2, help="sphere region radius")
    p.add_argument("--k-pts", type=int, default=200, help="feature-space region size")
    p.add_argument(
        "--feature-layer", type=int, default=3, help="encoder layer for feature proximity"
    )
    p.add_argument(
        "--relocate-sigma", type=float, default=0.05, help="relocation noise scale"
    )
    p.add_argument(
        "--cap-fraction", type=float, default=0.5, help="max region share for sampling schemes"
    )


def build_parser() -> _Parser:
    parser = _Parser(
        prog="pcda",
        description=(
            "Self-supervised domain adaptation toolkit for 3D point clouds: "
            "deform-and-reconstruct pretraining, point cloud mixup, synthetic "
            "benchmarks, training, and feature diagnostics."
        ),
    )
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    bench_defaults = BenchConfig()
    p = sub.add_parser("gen-bench", help="generate a synthetic two-domain benchmark")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-points", type=int, default=bench_defaults.n_points)
    p.add_argument("--classes", type=int, default=bench_defaults.num_classes)
    p.add_argument("--source-train", type=int, default=bench_defaults.source_train)
    p.add_argument("--source-test", type=int, default=bench_defaults.source_test)
    p.add_argument("--target-train", type=int, default=bench_defaults.target_train)
    p.add_argument("--target-test", type=int, default=bench_defaults.target_test)
    p.add_argument("--occlusion", type=float, default=bench_defaults.occlusion_fraction)
    p.add_argument(
        "--scheme",
        default=bench_defaults.corruption_scheme,
        choices=("split", "gradient", "lambertian"),
    )
    p.add_argument("--density-bias", type=float, default=bench_defaults.density_bias)
    p.add_argument("--keep-fraction", type=float, default=bench_defaults.keep_fraction)
    p.add_argument("--target-jitter", type=float, default=bench_defaults.target_jitter)
    p.add_argument("--segmentation", action="store_true", help="four-part object benchmark")
    p.set_defaults(func=cmd_gen_bench)

    p = sub.add_parser("deform", help="deform a region of one cloud")
    p.add_argument("--input", required=True, help="input .xyz or .ply")
    p.add_argument("--out", required=True, help="deformed cloud path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--region-out", help="write region indices as JSON")
    _add_deform_flags(p)
    p.set_defaults(func=cmd_deform)

    p = sub.add_parser("mixup", help="mix two clouds into one soft-labelled cloud")
    p.add_argument("--in-a", required=True)
    p.add_argument("--in-b", required=True)
    p.add_argument("--label-a", type=int, required=True)
    p.add_argument("--label-b", type=int, required=True)
    p.add_argument("--num-classes", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=None, help="force the mix coefficient")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_mixup)

    train_defaults = TrainConfig()
    p = sub.add_parser("train", help="train with alternating supervised/reconstruction steps")
    p.add_argument("--bench", required=True, help="benchmark directory")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--config", help="RunConfig JSON; overrides the flags below")
    p.add_argument("--epochs", type=int, default=train_defaults.epochs)
    p.add_argument("--batch-size", type=int, default=train_defaults.batch_size)
    p.add_argument("--lr", type=float, default=train_defaults.lr)
    p.add_argument("--weight-decay", type=float, default=train_defaults.weight_decay)
    p.add_argument("--ssl-weight", type=float, default=train_defaults.ssl_weight)
    p.add_argument("--no-mixup", action="store_true")
    p.add_argument(
        "--alpha", type=float, default=train_defaults.mixup_alpha, help="mixup Beta alpha"
    )
    p.add_argument(
        "--beta", type=float, default=train_defaults.mixup_beta, help="mixup Beta beta"
    )
    p.add_argument(
        "--deform-domains",
        default=train_defaults.deform_domains,
        choices=("target-only", "source-and-target"),
    )
    p.add_argument("--val-fraction", type=float, default=train_defaults.val_fraction)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--jitter-sigma", type=float, default=train_defaults.jitter_sigma)
    p.add_argument("--jitter-clip", type=float, default=train_defaults.jitter_clip)
    p.add_argument("--seed", type=int, default=train_defaults.seed)
    p.add_argument("--dtype", default=train_defaults.dtype, choices=("float32", "float64"))
    p.add_argument("--resume", action="store_true", help="continue from last.ckpt")
    _add_deform_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a benchmark split")
    p.add_argument("--bench", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="target_test", choices=SPLITS)
    p.add_argument("--batch-size", type=int, default=32)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser(
        "perplexity", help="score target features under source class Gaussians"
    )
    p.add_argument("--bench", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="target_test", choices=SPLITS)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--features-out", help="save features and 2-d projection")
    p.set_defaults(func=cmd_perplexity)

    p = sub.add_parser("selftest", help="run the built-in oracle checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_usage(sys.stderr)
            print("error: a subcommand is required", file=sys.stderr)
            return 1
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
