"""Point encoder with classification, segmentation, and reconstruction heads.

The encoder is a per-point MLP with shared weights (widths 64, 64, 128, 256,
then 1024) followed by a global max-pool, so the global feature is exactly
permutation invariant. Heads:

* sup: fully connected 512 -> 256 -> C on the global feature, dropout 0.5 on
  the two hidden layers in train mode,
* rec: per-point layers 256 -> 256 -> 128 -> 3 on the concatenation of the
  global feature and the last per-point encoder features,
* seg: same structure as rec with C outputs and train-mode dropout on the
  first two hidden layers.

Forward and backward passes are written out explicitly; gradients are pinned
against central finite differences in the test suite. All arrays follow the
parameter dtype (float64 by default, float32 supported for speed).
"""

from __future__ import annotations

import numpy as np

from .cloud import as_rng
from .chamfer import chamfer_loss_region
from .errors import DataFormatError, NumericalError

ENCODER_WIDTHS = (64, 64, 128, 256, 1024)
SUP_HIDDEN = (512, 256)
HEAD_HIDDEN = (256, 256, 128)
GLOBAL_DIM = ENCODER_WIDTHS[-1]
POINT_FEAT_DIM = ENCODER_WIDTHS[3]
HEAD_IN_DIM = GLOBAL_DIM + POINT_FEAT_DIM
DROPOUT_RATE = 0.5


def _glorot(rng, fan_in, fan_out, dtype):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


def init_params(
    num_classes: int,
    task: str = "classification",
    seed=None,
    dtype=np.float64,
) -> dict:
    """Initialize all weights (uniform Glorot) and biases (zero).

    Classification gets the `sup` head, segmentation the `seg` head; the
    reconstruction head is always present.
    """
    if task not in ("classification", "segmentation"):
        raise DataFormatError(f"unknown task {task!r}")
    rng = as_rng(seed)
    dtype = np.dtype(dtype)
    params: dict = {}

    d_in = 3
    for i, width in enumerate(ENCODER_WIDTHS, start=1):
        params[f"enc{i}_w"] = _glorot(rng, d_in, width, dtype)
        params[f"enc{i}_b"] = np.zeros(width, dtype=dtype)
        d_in = width

    if task == "classification":
        d_in = GLOBAL_DIM
        for i, width in enumerate((*SUP_HIDDEN, num_classes), start=1):
            params[f"sup{i}_w"] = _glorot(rng, d_in, width, dtype)
            params[f"sup{i}_b"] = np.zeros(width, dtype=dtype)
            d_in = width
    else:
        d_in = HEAD_IN_DIM
        for i, width in enumerate((*HEAD_HIDDEN, num_classes), start=1):
            params[f"seg{i}_w"] = _glorot(rng, d_in, width, dtype)
            params[f"seg{i}_b"] = np.zeros(width, dtype=dtype)
            d_in = width

    d_in = HEAD_IN_DIM
    for i, width in enumerate((*HEAD_HIDDEN, 3), start=1):
        params[f"rec{i}_w"] = _glorot(rng, d_in, width, dtype)
        params[f"rec{i}_b"] = np.zeros(width, dtype=dtype)
        d_in = width
    return params


def zeros_like_params(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


def param_dtype(params: dict):
    return params["enc1_w"].dtype


def _as_batch(clouds, dtype):
    arr = np.ascontiguousarray(np.asarray(clouds), dtype=dtype)
    if arr.ndim == 2 and arr.shape[1] == 3:
        return arr[None], True
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DataFormatError(f"expected (n, 3) or (B, n, 3) clouds, got {arr.shape}")
    return arr, False


def _dropout_mask(rng, shape, dtype):
    keep = 1.0 - DROPOUT_RATE
    return (rng.uniform(size=shape) < keep).astype(dtype) / dtype.type(keep)


def forward_pass(
    params: dict,
    clouds,
    mode: str = "eval",
    heads=("sup",),
    dropout_seed=None,
):
    """Run the encoder and the requested heads.

    `clouds` is (n, 3) or (B, n, 3). Returns (outputs, trace): outputs maps
    "global" plus one key per requested head ("logits", "recon",
    "seg_logits"); trace carries every cached activation needed by
    backward(). Raises NumericalError if activations go non-finite.
    """
    if mode not in ("train", "eval"):
        raise DataFormatError(f"mode must be 'train' or 'eval', got {mode!r}")
    dtype = param_dtype(params)
    batch, single = _as_batch(clouds, dtype)
    B, n, _ = batch.shape
    if n < 1:
        raise DataFormatError("clouds must contain at least one point")
    drop_rng = as_rng(dropout_seed) if mode == "train" else None

    x = batch.reshape(B * n, 3)
    acts = []
    h = x
    for i in range(1, len(ENCODER_WIDTHS) + 1):
        h = h @ params[f"enc{i}_w"] + params[f"enc{i}_b"]
        np.maximum(h, 0.0, out=h)
        acts.append(h)
    a5 = acts[-1].reshape(B, n, GLOBAL_DIM)
    argmax = a5.argmax(axis=1)  # first (lowest) row index on ties
    g = np.take_along_axis(a5, argmax[:, None, :], axis=1)[:, 0, :]
    if not np.isfinite(g).all():
        raise NumericalError("numerical overflow in encoder activations")

    outputs = {"global": g[0] if single else g}
    trace = {
        "params_ref": params,
        "B": B,
        "n": n,
        "single": single,
        "mode": mode,
        "x": x,
        "acts": acts,
        "global": g,
        "argmax": argmax,
        "heads": tuple(heads),
    }

    for head in heads:
        if head == "sup":
            logits, cache = _sup_forward(params, g, mode, drop_rng)
            outputs["logits"] = logits[0] if single else logits
            trace["sup"] = cache
        elif head == "rec":
            recon, cache = _pp_head_forward(
                params, "rec", g, acts[3], B, n, drop_rng=None
            )
            out = recon.reshape(B, n, 3)
            outputs["recon"] = out[0] if single else out
            trace["rec"] = cache
        elif head == "seg":
            seg, cache = _pp_head_forward(
                params, "seg", g, acts[3], B, n, drop_rng=drop_rng
            )
            width = params["seg4_w"].shape[1]
            out = seg.reshape(B, n, width)
            outputs["seg_logits"] = out[0] if single else out
            trace["seg"] = cache
        else:
            raise DataFormatError(f"unknown head {head!r}")
    return outputs, trace


def _sup_forward(params, g, mode, drop_rng):
    dtype = g.dtype
    m1 = m2 = None
    u1 = g @ params["sup1_w"] + params["sup1_b"]
    np.maximum(u1, 0.0, out=u1)
    d1 = u1
    if drop_rng is not None:
        m1 = _dropout_mask(drop_rng, u1.shape, np.dtype(dtype))
        d1 = u1 * m1
    u2 = d1 @ params["sup2_w"] + params["sup2_b"]
    np.maximum(u2, 0.0, out=u2)
    d2 = u2
    if drop_rng is not None:
        m2 = _dropout_mask(drop_rng, u2.shape, np.dtype(dtype))
        d2 = u2 * m2
    logits = d2 @ params["sup3_w"] + params["sup3_b"]
    if not np.isfinite(logits).all():
        raise NumericalError("numerical overflow in classification head")
    cache = {"in": g, "a1": u1, "d1": d1, "m1": m1, "a2": u2, "d2": d2, "m2": m2}
    return logits, cache


def _sup_backward(params, cache, dlogits, grads):
    grads["sup3_w"] += cache["d2"].T @ dlogits
    grads["sup3_b"] += dlogits.sum(axis=0)
    dd2 = dlogits @ params["sup3_w"].T
    if cache["m2"] is not None:
        dd2 = dd2 * cache["m2"]
    dd2 *= cache["a2"] > 0
    grads["sup2_w"] += cache["d1"].T @ dd2
    grads["sup2_b"] += dd2.sum(axis=0)
    dd1 = dd2 @ params["sup2_w"].T
    if cache["m1"] is not None:
        dd1 = dd1 * cache["m1"]
    dd1 *= cache["a1"] > 0
    grads["sup1_w"] += cache["in"].T @ dd1
    grads["sup1_b"] += dd1.sum(axis=0)
    return dd1 @ params["sup1_w"].T


def _pp_head_forward(params, prefix, g, a4, B, n, drop_rng):
    """Per-point head over concat(global, per-point features).

    The first layer's weight is stored as one (1280, d) matrix; the global
    slice is applied once per sample and broadcast over points instead of
    materializing the concatenation.
    """
    w1 = params[f"{prefix}1_w"]
    zg = g @ w1[:GLOBAL_DIM]  # (B, d1)
    z = a4 @ w1[GLOBAL_DIM:]
    z += params[f"{prefix}1_b"]
    z3 = z.reshape(B, n, -1)
    z3 += zg[:, None, :]
    np.maximum(z, 0.0, out=z)
    s1, m1 = z, None
    if drop_rng is not None:
        m1 = _dropout_mask(drop_rng, s1.shape, s1.dtype)
        s1 = s1 * m1
    h2 = s1 @ params[f"{prefix}2_w"] + params[f"{prefix}2_b"]
    np.maximum(h2, 0.0, out=h2)
    s2, m2 = h2, None
    if drop_rng is not None:
        m2 = _dropout_mask(drop_rng, s2.shape, s2.dtype)
        s2 = s2 * m2
    s3 = s2 @ params[f"{prefix}3_w"] + params[f"{prefix}3_b"]
    np.maximum(s3, 0.0, out=s3)
    out = s3 @ params[f"{prefix}4_w"] + params[f"{prefix}4_b"]
    if not np.isfinite(out).all():
        raise NumericalError(f"numerical overflow in {prefix} head")
    cache = {"a1": z, "s1": s1, "m1": m1, "a2": h2, "s2": s2, "m2": m2, "s3": s3}
    return out, cache


def _pp_head_backward(params, prefix, cache, dout, g, a4, B, n, grads):
    grads[f"{prefix}4_w"] += cache["s3"].T @ dout
    grads[f"{prefix}4_b"] += dout.sum(axis=0)
    ds3 = dout @ params[f"{prefix}4_w"].T
    ds3 *= cache["s3"] > 0
    grads[f"{prefix}3_w"] += cache["s2"].T @ ds3
    grads[f"{prefix}3_b"] += ds3.sum(axis=0)
    ds2 = ds3 @ params[f"{prefix}3_w"].T
    if cache["m2"] is not None:
        ds2 = ds2 * cache["m2"]
    ds2 *= cache["a2"] > 0
    grads[f"{prefix}2_w"] += cache["s1"].T @ ds2
    grads[f"{prefix}2_b"] += ds2.sum(axis=0)
    ds1 = ds2 @ params[f"{prefix}2_w"].T
    if cache["m1"] is not None:
        ds1 = ds1 * cache["m1"]
    ds1 *= cache["a1"] > 0
    # first layer: split gradient between the global and per-point slices
    w1 = params[f"{prefix}1_w"]
    per_sample = ds1.reshape(B, n, -1).sum(axis=1)  # (B, d1)
    grads[f"{prefix}1_w"][:GLOBAL_DIM] += g.T @ per_sample
    grads[f"{prefix}1_w"][GLOBAL_DIM:] += a4.T @ ds1
    grads[f"{prefix}1_b"] += ds1.sum(axis=0)
    dg = per_sample @ w1[:GLOBAL_DIM].T
    da4 = ds1 @ w1[GLOBAL_DIM:].T
    return dg, da4


def backward(params: dict, trace: dict, dlogits=None, drecon=None, dseg_logits=None) -> dict:
    """Exact gradients of a scalar loss given its gradients at head outputs.

    Upstream gradients match the shapes returned by forward_pass (batched or
    single). Heads without an upstream gradient contribute zero; encoder
    gradients route through max-pool argmax, dropout masks, and ReLU gates.
    """
    if trace.get("params_ref") is not params:
        raise DataFormatError("trace does not belong to these params")
    dtype = param_dtype(params)
    B, n, single = trace["B"], trace["n"], trace["single"]
    grads = zeros_like_params(params)
    dg = np.zeros((B, GLOBAL_DIM), dtype=dtype)
    da4_extra = None

    def batched(arr, width):
        a = np.asarray(arr, dtype=dtype)
        if single:
            a = a[None]
        return a.reshape(-1, width) if width else a

    if dlogits is not None:
        if "sup" not in trace:
            raise DataFormatError("no sup head in trace")
        d = np.asarray(dlogits, dtype=dtype)
        if single:
            d = d[None]
        dg += _sup_backward(params, trace["sup"], d, grads)
    if drecon is not None:
        if "rec" not in trace:
            raise DataFormatError("no rec head in trace")
        d = batched(drecon, 3)
        dgh, da4 = _pp_head_backward(
            params, "rec", trace["rec"], d, trace["global"], trace["acts"][3], B, n, grads
        )
        dg += dgh
        da4_extra = da4 if da4_extra is None else da4_extra + da4
    if dseg_logits is not None:
        if "seg" not in trace:
            raise DataFormatError("no seg head in trace")
        d = batched(dseg_logits, params["seg4_w"].shape[1])
        dgh, da4 = _pp_head_backward(
            params, "seg", trace["seg"], d, trace["global"], trace["acts"][3], B, n, grads
        )
        dg += dgh
        da4_extra = da4 if da4_extra is None else da4_extra + da4

    # max-pool: route the global-feature gradient to the argmax rows
    da5 = np.zeros((B, n, GLOBAL_DIM), dtype=dtype)
    np.put_along_axis(da5, trace["argmax"][:, None, :], dg[:, None, :], axis=1)
    dh = da5.reshape(B * n, GLOBAL_DIM)

    acts = trace["acts"]
    inputs = [trace["x"]] + acts[:-1]
    for i in range(len(ENCODER_WIDTHS), 0, -1):
        dh = dh * (acts[i - 1] > 0)
        grads[f"enc{i}_w"] += inputs[i - 1].T @ dh
        grads[f"enc{i}_b"] += dh.sum(axis=0)
        if i > 1:
            dh = dh @ params[f"enc{i}_w"].T
            if i - 1 == 4 and da4_extra is not None:
                dh += da4_extra
    return grads


# -- convenience single-output surfaces ------------------------------------


def encode(params: dict, clouds, mode: str = "eval"):
    """Global feature, per-point features per encoder layer, and the trace."""
    outputs, trace = forward_pass(params, clouds, mode=mode, heads=())
    B, n, single = trace["B"], trace["n"], trace["single"]
    per_layer = [a.reshape(B, n, -1) for a in trace["acts"]]
    if single:
        per_layer = [a[0] for a in per_layer]
    return outputs["global"], per_layer, trace


def head_sup(params: dict, global_feat, mode: str = "eval", dropout_seed=None):
    """Class logits from a global feature; dropout active in train mode."""
    g = np.asarray(global_feat, dtype=param_dtype(params))
    single = g.ndim == 1
    if single:
        g = g[None]
    drop_rng = as_rng(dropout_seed) if mode == "train" else None
    logits, _ = _sup_forward(params, g, mode, drop_rng)
    return logits[0] if single else logits


def head_ssl(params: dict, global_feat, point_feats):
    """Reconstructed cloud from a global feature plus per-point features."""
    dtype = param_dtype(params)
    g = np.asarray(global_feat, dtype=dtype)
    pf = np.asarray(point_feats, dtype=dtype)
    single = g.ndim == 1
    if single:
        g, pf = g[None], pf[None]
    if pf.shape[-1] != POINT_FEAT_DIM:
        raise DataFormatError(
            f"per-point features must be {POINT_FEAT_DIM}-dimensional, got {pf.shape[-1]}"
        )
    B, n, _ = pf.shape
    out, _ = _pp_head_forward(params, "rec", g, pf.reshape(B * n, -1), B, n, None)
    recon = out.reshape(B, n, 3)
    return recon[0] if single else recon


# -- losses ----------------------------------------------------------------


def softmax_cross_entropy(logits, soft_label):
    """Cross entropy against a soft label, with the gradient w.r.t. logits.

    Stabilized by max subtraction; gradient is softmax(logits) - soft_label.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(soft_label, dtype=np.float64)
    if z.shape != y.shape:
        raise DataFormatError("logits and soft label shapes differ")
    z = z - z.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    loss = float(-(y * logp).sum(axis=-1).mean())
    grad = (np.exp(logp) - y) / np.prod(z.shape[:-1], dtype=np.float64)
    return loss, grad


def classification_loss_and_grads(
    params, clouds, soft_labels, mode: str = "train", dropout_seed=None
):
    """Mean cross entropy of a batch through encoder + sup head, with
    gradients for every parameter."""
    outputs, trace = forward_pass(
        params, clouds, mode=mode, heads=("sup",), dropout_seed=dropout_seed
    )
    loss, dlogits = softmax_cross_entropy(outputs["logits"], soft_labels)
    grads = backward(params, trace, dlogits=dlogits)
    return loss, grads


def segmentation_loss_and_grads(
    params, clouds, point_labels, mode: str = "train", dropout_seed=None
):
    """Mean per-point cross entropy through encoder + seg head."""
    outputs, trace = forward_pass(
        params, clouds, mode=mode, heads=("seg",), dropout_seed=dropout_seed
    )
    logits = outputs["seg_logits"]
    labels = np.asarray(point_labels, dtype=np.int64)
    if logits.shape[:-1] != labels.shape:
        raise DataFormatError("per-point labels do not match logits shape")
    num_classes = logits.shape[-1]
    onehot = np.eye(num_classes, dtype=np.float64)[labels]
    loss, dlogits = softmax_cross_entropy(logits, onehot)
    grads = backward(params, trace, dseg_logits=dlogits)
    return loss, grads


def reconstruction_loss_and_grads(
    params, deformed, originals, regions, weight: float = 1.0
):
    """Mean region-restricted Chamfer loss of reconstructions of deformed
    clouds against their originals, with weight-scaled parameter gradients.

    `regions` is one index array per sample. The returned loss is the
    unweighted batch mean; gradients carry the weight.
    """
    outputs, trace = forward_pass(params, deformed, heads=("rec",))
    recon = outputs["recon"]
    single = trace["single"]
    if single:
        recon = recon[None]
        originals = np.asarray(originals)[None]
        regions = [regions] if isinstance(regions, np.ndarray) else regions
    B = len(recon)
    if len(originals) != B or len(regions) != B:
        raise DataFormatError("originals/regions batch size mismatch")
    drecon = np.zeros_like(recon, dtype=np.float64)
    total = 0.0
    for b in range(B):
        res = chamfer_loss_region(recon[b], originals[b], regions[b])
        total += res.value
        drecon[b] = res.grad_pred
    loss = total / B
    drecon *= weight / B
    grads = backward(params, trace, drecon=drecon[0] if single else drecon)
    return loss, grads
