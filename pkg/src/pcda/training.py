"""Domain-adaptive training: supervised source half-steps alternate with
self-supervised reconstruction half-steps on the unlabelled target domain.

Every random draw is derived from a seed sequence keyed by (run seed,
stream, epoch, step, item), never from a shared mutable RNG, so a run is a
pure function of its config and inputs: repeating it reproduces metric logs
and checkpoints byte for byte, and resuming from a checkpoint continues the
exact same trajectory.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .cloud import LabeledCloud, SegLabeledCloud, as_rng, jitter, rotate_z
from .dataio import Dataset, load_tensors, save_tensors
from .deform import DeformSpec, apply_deformation, default_family_specs
from .errors import DataFormatError, NumericalError
from .evaluation import mean_iou
from .mixup import mixup_classify, mixup_segment
from .network import (
    classification_loss_and_grads,
    forward_pass,
    init_params,
    reconstruction_loss_and_grads,
    segmentation_loss_and_grads,
    softmax_cross_entropy,
    zeros_like_params,
)

# seed-stream tags: top level, then per-epoch sub-streams
STREAM_SPLIT = 0
STREAM_EPOCH = 1
STREAM_INIT = 2
_SRC_PERM, _TGT_PERM, _SUP_AUG, _MIX, _DROP, _TGT_AUG, _TGT_DEF, _SRC_DEF = range(8)

DTYPES = {"float32": np.float32, "float64": np.float64}


def _seed(*parts) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(p) for p in parts])


@dataclass
class TrainConfig:
    """All knobs of one training run."""

    task: str = "classification"  # or "segmentation"
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 5e-5
    ssl_weight: float = 0.25  # 0 disables the reconstruction half-step
    use_mixup: bool = True
    mixup_alpha: float = 0.4
    mixup_beta: float = 0.4
    deform: DeformSpec = field(default_factory=DeformSpec)
    deform_domains: str = "target-only"  # or "source-and-target"
    val_fraction: float = 0.2
    augment: bool = True
    jitter_sigma: float = 0.01
    jitter_clip: float = 0.02
    seed: int = 0
    dtype: str = "float64"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.task not in ("classification", "segmentation"):
            raise DataFormatError(f"unknown task {self.task!r}")
        if self.deform_domains not in ("target-only", "source-and-target"):
            raise DataFormatError(f"unknown deform_domains {self.deform_domains!r}")
        if self.dtype not in DTYPES:
            raise DataFormatError("dtype must be 'float32' or 'float64'")
        if self.epochs < 1 or self.batch_size < 1:
            raise DataFormatError("epochs and batch_size must be positive")
        if self.ssl_weight < 0:
            raise DataFormatError("ssl_weight must be non-negative")
        if not 0 <= self.val_fraction < 1:
            raise DataFormatError("val_fraction must be in [0, 1)")


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Half-cosine decay from base_lr at step 0 to 0 at total_steps."""
    if total_steps <= 0:
        return base_lr
    t = min(max(step, 0), total_steps)
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * t / total_steps))


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0


def init_adam(params: dict) -> AdamState:
    return AdamState(m=zeros_like_params(params), v=zeros_like_params(params))


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, cfg: TrainConfig):
    """One Adam update in place. Weight decay is classic L2, added to the
    gradient before the moment updates."""
    state.t += 1
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for k, p in params.items():
        g = grads[k]
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def stratified_split(labels, val_fraction: float, seed):
    """Per-class shuffled split into (train_idx, val_idx)."""
    y = np.asarray(labels, dtype=np.int64)
    rng = as_rng(seed)
    train_parts, val_parts = [], []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(len(idx))]
        n_val = int(round(val_fraction * len(idx)))
        if val_fraction > 0 and len(idx) >= 2:
            n_val = min(max(n_val, 1), len(idx) - 1)
        else:
            n_val = 0
        val_parts.append(idx[:n_val])
        train_parts.append(idx[n_val:])
    train = np.sort(np.concatenate(train_parts))
    val = np.sort(np.concatenate(val_parts)) if val_parts else np.empty(0, np.int64)
    return train, val


def uniform_split(n: int, val_fraction: float, seed):
    rng = as_rng(seed)
    perm = rng.permutation(n)
    n_val = int(round(val_fraction * n))
    if val_fraction > 0 and n >= 2:
        n_val = min(max(n_val, 1), n - 1)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


# -- batched inference -----------------------------------------------------


def _batch_slices(n: int, batch_size: int):
    for lo in range(0, n, batch_size):
        yield slice(lo, min(lo + batch_size, n))


def predict_logits(params: dict, points, batch_size: int = 32, head: str = "sup"):
    pts = np.asarray(points, dtype=np.float64)
    outs = []
    key = "logits" if head == "sup" else "seg_logits"
    for sl in _batch_slices(len(pts), batch_size):
        outputs, _ = forward_pass(params, pts[sl], mode="eval", heads=(head,))
        outs.append(np.atleast_2d(outputs[key]))
    return np.concatenate(outs)


def extract_global_features(params: dict, points, batch_size: int = 32) -> np.ndarray:
    """Eval-mode global feature for each cloud, as float64 (N, 1024)."""
    pts = np.asarray(points, dtype=np.float64)
    feats = []
    for sl in _batch_slices(len(pts), batch_size):
        outputs, _ = forward_pass(params, pts[sl], mode="eval", heads=())
        feats.append(np.asarray(outputs["global"], dtype=np.float64))
    return np.concatenate(feats)


def evaluate_classification(params: dict, dataset: Dataset, batch_size: int = 32) -> dict:
    """Accuracy and mean cross entropy on a labelled dataset."""
    pts = dataset.points_array()
    labels = dataset.labels()
    logits = predict_logits(params, pts, batch_size)
    onehot = np.eye(dataset.num_classes)[labels]
    ce, _ = softmax_cross_entropy(logits, onehot)
    pred = logits.argmax(axis=1)
    return {
        "accuracy": float((pred == labels).mean()),
        "cross_entropy": float(ce),
        "count": len(labels),
    }


def evaluate_segmentation(params: dict, dataset: Dataset, batch_size: int = 16) -> dict:
    """Mean per-cloud IoU, per-point accuracy, and cross entropy."""
    pts = dataset.points_array()
    labels = np.stack([s.labels for s in dataset.samples])
    logits = predict_logits(params, pts, batch_size, head="seg")
    logits = logits.reshape(labels.shape[0], labels.shape[1], -1)
    onehot = np.eye(dataset.num_classes)[labels]
    ce, _ = softmax_cross_entropy(logits, onehot)
    pred = logits.argmax(axis=2)
    ious = [
        mean_iou(pred[i], labels[i], dataset.num_classes) for i in range(len(labels))
    ]
    return {
        "mean_iou": float(np.mean(ious)),
        "point_accuracy": float((pred == labels).mean()),
        "cross_entropy": float(ce),
        "count": len(labels),
    }


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(path, params, best_params, adam: AdamState, meta: dict):
    tensors = {}
    for k, v in params.items():
        tensors[f"param/{k}"] = v
    for k, v in best_params.items():
        tensors[f"best/{k}"] = v
    for k, v in adam.m.items():
        tensors[f"adam_m/{k}"] = v
    for k, v in adam.v.items():
        tensors[f"adam_v/{k}"] = v
    save_tensors(path, tensors, {**meta, "adam_t": adam.t})


def load_checkpoint(path):
    tensors, meta = load_tensors(path)
    params, best, m, v = {}, {}, {}, {}
    groups = {"param": params, "best": best, "adam_m": m, "adam_v": v}
    for name, arr in tensors.items():
        group, _, key = name.partition("/")
        if group not in groups:
            raise DataFormatError(f"{path}: unexpected tensor group {group!r}")
        groups[group][key] = arr
    if not params or params.keys() != m.keys():
        raise DataFormatError(f"{path}: incomplete checkpoint")
    adam = AdamState(m=m, v=v, t=int(meta.get("adam_t", 0)))
    return params, best, adam, meta


def load_params(path) -> tuple:
    """Best-scoring parameters from a checkpoint, with its metadata."""
    params, best, _, meta = load_checkpoint(path)
    return (best or params), meta


# -- the training loop -----------------------------------------------------


@dataclass
class TrainResult:
    params: dict
    best_params: dict
    best_epoch: int
    best_val: float
    metrics: list
    run_dir: str


def _augment(points, cfg: TrainConfig, seed):
    if not cfg.augment:
        return points
    rng = as_rng(seed)
    out = rotate_z(points, rng.uniform(0.0, 2.0 * np.pi))
    return jitter(out, sigma=cfg.jitter_sigma, clip=cfg.jitter_clip, seed=rng)


def _feature_layer(spec: DeformSpec) -> int:
    if spec.kind == "feature":
        return spec.layer
    if spec.kind == "mixed":
        sub = spec.mixed_feature or default_family_specs()["feature"]
        return sub.layer
    return 0


def _per_point_features(params, clouds, layer: int):
    outputs, trace = forward_pass(params, clouds, mode="eval", heads=())
    del outputs
    B, n = trace["B"], trace["n"]
    return np.asarray(trace["acts"][layer - 1].reshape(B, n, -1), dtype=np.float64)


def _ssl_half_step(params, adam, clouds, cfg, epoch, step, tag, lr):
    """Deform every cloud in the batch, reconstruct, and take one Adam step
    on the weighted region Chamfer loss. Returns the unweighted loss."""
    B = len(clouds)
    layer = _feature_layer(cfg.deform)
    feats = _per_point_features(params, clouds, layer) if layer else None
    deformed = np.empty_like(clouds)
    regions = []
    for j in range(B):
        pair = apply_deformation(
            clouds[j],
            cfg.deform,
            seed=_seed(cfg.seed, STREAM_EPOCH, epoch, tag, step, j),
            features=None if feats is None else feats[j],
        )
        deformed[j] = pair.deformed
        regions.append(pair.region)
    loss, grads = reconstruction_loss_and_grads(
        params, deformed, clouds, regions, weight=cfg.ssl_weight
    )
    if not np.isfinite(loss):
        raise NumericalError("reconstruction loss diverged")
    adam_step(params, grads, adam, lr, cfg)
    return loss


def _sup_half_step(params, adam, samples, cfg, num_classes, epoch, step, lr):
    """One supervised half-step on a source batch, with optional mixup."""
    B = len(samples)
    clouds = np.stack([s.points for s in samples])
    segmented = cfg.task == "segmentation"
    dropout_seed = _seed(cfg.seed, STREAM_EPOCH, epoch, _DROP, step)
    if cfg.use_mixup and B >= 2:
        partner = np.roll(np.arange(B), -1)
        mixed_pts = np.empty_like(clouds)
        if segmented:
            point_labels = np.empty((B, clouds.shape[1]), dtype=np.int64)
        else:
            soft = np.empty((B, num_classes))
        for j in range(B):
            seed = _seed(cfg.seed, STREAM_EPOCH, epoch, _MIX, step, j)
            if segmented:
                ms = mixup_segment(
                    samples[j], samples[partner[j]],
                    alpha=cfg.mixup_alpha, beta=cfg.mixup_beta, seed=seed,
                )
                point_labels[j] = ms.point_labels
            else:
                ms = mixup_classify(
                    samples[j], samples[partner[j]], num_classes,
                    alpha=cfg.mixup_alpha, beta=cfg.mixup_beta, seed=seed,
                )
                soft[j] = ms.soft_label
            mixed_pts[j] = ms.points
    else:
        mixed_pts = clouds
        if segmented:
            point_labels = np.stack([s.labels for s in samples])
        else:
            soft = np.eye(num_classes)[[s.label for s in samples]]
    if segmented:
        loss, grads = segmentation_loss_and_grads(
            params, mixed_pts, point_labels, mode="train", dropout_seed=dropout_seed
        )
    else:
        loss, grads = classification_loss_and_grads(
            params, mixed_pts, soft, mode="train", dropout_seed=dropout_seed
        )
    if not np.isfinite(loss):
        raise NumericalError("supervised loss diverged")
    adam_step(params, grads, adam, lr, cfg)
    return loss


def _dump_diagnostic(run_dir, params, epoch, step, phase, error):
    path = os.path.join(run_dir, "diagnostic.tens")
    tensors = {f"param/{k}": v for k, v in params.items()}
    save_tensors(
        path,
        tensors,
        {"epoch": epoch, "step": step, "phase": phase, "error": str(error)},
    )
    return path


def train(
    source: Dataset,
    target: Dataset | None,
    cfg: TrainConfig,
    run_dir: str,
    resume: bool = False,
    stop_after: int | None = None,
) -> TrainResult:
    """Run (or resume) a full training job and leave its artifacts in
    run_dir: metrics.jsonl, last.ckpt, best.ckpt, config.json.

    Domains are balanced by under-sampling: each epoch runs
    floor(min(source_train, target) / batch_size) steps when the
    reconstruction task is active. Model selection is by source validation
    accuracy (classification) or mean IoU (segmentation); ties keep the
    earlier epoch. `stop_after` caps the epochs run by this call (the
    config's own epoch count still fixes the schedule), simulating an
    interrupted run that a later resume continues exactly.
    """
    if cfg.task == "segmentation" and not source.segmented:
        raise DataFormatError("segmentation training needs per-point labels")
    if cfg.task == "classification" and source.segmented:
        raise DataFormatError("classification training needs class labels")
    os.makedirs(run_dir, exist_ok=True)
    dtype = DTYPES[cfg.dtype]
    num_classes = source.num_classes
    use_ssl = cfg.ssl_weight > 0
    if use_ssl and (target is None or not target.samples):
        raise DataFormatError("reconstruction training needs target clouds")

    if cfg.task == "classification":
        tr_idx, val_idx = stratified_split(
            source.labels(), cfg.val_fraction, _seed(cfg.seed, STREAM_SPLIT)
        )
    else:
        tr_idx, val_idx = uniform_split(
            len(source.samples), cfg.val_fraction, _seed(cfg.seed, STREAM_SPLIT)
        )
    if len(val_idx) == 0:
        raise DataFormatError("validation split is empty; lower batch or add data")
    train_samples = [source.samples[i] for i in tr_idx]
    val_set = Dataset(
        samples=[source.samples[i] for i in val_idx], num_classes=num_classes
    )
    tgt_pts = target.points_array() if (target and target.samples) else None

    n_src = len(train_samples)
    if use_ssl:
        steps_per_epoch = min(n_src, len(tgt_pts)) // cfg.batch_size
    else:
        steps_per_epoch = n_src // cfg.batch_size
    if steps_per_epoch < 1:
        raise DataFormatError("not enough samples for a single batch")
    halves = 1 + (1 if use_ssl else 0) + (
        1 if use_ssl and cfg.deform_domains == "source-and-target" else 0
    )
    total_adam_steps = cfg.epochs * steps_per_epoch * halves

    config_blob = json.dumps(asdict(cfg), sort_keys=True, indent=2) + "\n"
    metrics_path = os.path.join(run_dir, "metrics.jsonl")
    last_path = os.path.join(run_dir, "last.ckpt")
    best_path = os.path.join(run_dir, "best.ckpt")

    start_epoch = 0
    metrics: list = []
    if resume and os.path.exists(last_path):
        params, best_params, adam, meta = load_checkpoint(last_path)
        if meta.get("config") != json.loads(config_blob):
            raise DataFormatError("resume config does not match checkpoint config")
        start_epoch = int(meta["epoch"]) + 1
        best_val = float(meta["best_val"])
        best_epoch = int(meta["best_epoch"])
        if os.path.exists(metrics_path):
            with open(metrics_path, "r", encoding="utf-8") as fh:
                metrics = [json.loads(line) for line in fh if line.strip()]
            metrics = [m for m in metrics if m["epoch"] < start_epoch]
        # rewrite so appended epochs line up with the checkpoint exactly
        with open(metrics_path, "w", encoding="utf-8") as fh:
            for m in metrics:
                fh.write(json.dumps(m, sort_keys=True) + "\n")
    else:
        params = init_params(
            num_classes, task=cfg.task, seed=_seed(cfg.seed, STREAM_INIT), dtype=dtype
        )
        adam = init_adam(params)
        best_params = {k: v.copy() for k, v in params.items()}
        best_val = -np.inf
        best_epoch = -1
        with open(metrics_path, "w", encoding="utf-8"):
            pass
    with open(os.path.join(run_dir, "config.json"), "w", encoding="utf-8") as fh:
        fh.write(config_blob)

    eval_fn = (
        evaluate_segmentation if cfg.task == "segmentation" else evaluate_classification
    )
    metric_key = "mean_iou" if cfg.task == "segmentation" else "accuracy"

    end_epoch = cfg.epochs
    if stop_after is not None:
        end_epoch = min(end_epoch, start_epoch + stop_after)
    for epoch in range(start_epoch, end_epoch):
        src_perm = as_rng(_seed(cfg.seed, STREAM_EPOCH, epoch, _SRC_PERM)).permutation(n_src)
        if use_ssl:
            tgt_perm = as_rng(_seed(cfg.seed, STREAM_EPOCH, epoch, _TGT_PERM)).permutation(
                len(tgt_pts)
            )
        sup_losses, ssl_losses = [], []
        lr_now = cfg.lr
        for step in range(steps_per_epoch):
            sl = slice(step * cfg.batch_size, (step + 1) * cfg.batch_size)
            batch_idx = src_perm[sl]
            batch = []
            for j, idx in enumerate(batch_idx):
                s = train_samples[idx]
                pts = _augment(
                    s.points, cfg, _seed(cfg.seed, STREAM_EPOCH, epoch, _SUP_AUG, step, j)
                )
                if cfg.task == "segmentation":
                    batch.append(SegLabeledCloud(points=pts, labels=s.labels))
                else:
                    batch.append(LabeledCloud(points=pts, label=s.label))
            try:
                lr_now = cosine_lr(cfg.lr, adam.t, total_adam_steps)
                sup_losses.append(
                    _sup_half_step(params, adam, batch, cfg, num_classes, epoch, step, lr_now)
                )
                if use_ssl:
                    tgt_batch = np.stack(
                        [
                            _augment(
                                tgt_pts[idx], cfg,
                                _seed(cfg.seed, STREAM_EPOCH, epoch, _TGT_AUG, step, j),
                            )
                            for j, idx in enumerate(tgt_perm[sl])
                        ]
                    )
                    lr_now = cosine_lr(cfg.lr, adam.t, total_adam_steps)
                    ssl_losses.append(
                        _ssl_half_step(
                            params, adam, tgt_batch, cfg, epoch, step, _TGT_DEF, lr_now
                        )
                    )
                    if cfg.deform_domains == "source-and-target":
                        src_batch = np.stack([b.points for b in batch])
                        lr_now = cosine_lr(cfg.lr, adam.t, total_adam_steps)
                        ssl_losses.append(
                            _ssl_half_step(
                                params, adam, src_batch, cfg, epoch, step, _SRC_DEF, lr_now
                            )
                        )
            except NumericalError as exc:
                path = _dump_diagnostic(run_dir, params, epoch, step, "train", exc)
                raise NumericalError(f"{exc} (state dumped to {path})") from exc

        val = eval_fn(params, val_set, cfg.batch_size)
        is_best = val[metric_key] > best_val
        if is_best:
            best_val = val[metric_key]
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in params.items()}
        record = {
            "epoch": epoch,
            "sup_loss": float(np.mean(sup_losses)),
            "ssl_loss": float(np.mean(ssl_losses)) if ssl_losses else None,
            "val_" + metric_key: val[metric_key],
            "val_cross_entropy": val["cross_entropy"],
            "lr": float(lr_now),
            "best": bool(is_best),
        }
        metrics.append(record)
        with open(metrics_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        meta = {
            "epoch": epoch,
            "best_val": float(best_val),
            "best_epoch": best_epoch,
            "task": cfg.task,
            "num_classes": num_classes,
            "dtype": cfg.dtype,
            "config": json.loads(config_blob),
        }
        save_checkpoint(last_path, params, best_params, adam, meta)
        if is_best:
            save_checkpoint(best_path, params, best_params, adam, meta)

    return TrainResult(
        params=params,
        best_params=best_params,
        best_epoch=best_epoch,
        best_val=float(best_val),
        metrics=metrics,
        run_dir=run_dir,
    )
