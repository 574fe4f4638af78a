"""Point cloud mixup: blend two clouds by sampling points from each.

A mix coefficient is drawn from Beta(alpha, beta); round(coeff * n) points
are sampled without replacement from the first cloud and the rest from the
second. For classification the label is the matching convex combination of
one-hot vectors; for segmentation every sampled point keeps its own label.
The label coefficient uses the realized point fraction so geometry and label
always agree exactly after rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import LabeledCloud, SegLabeledCloud, as_rng, check_cloud
from .errors import DataFormatError


@dataclass
class MixedSample:
    """Mixup output: blended cloud plus either a soft class label
    (classification) or per-point labels (segmentation)."""

    points: np.ndarray
    gamma: float
    soft_label: np.ndarray | None = None
    point_labels: np.ndarray | None = None


def _draw_counts(n: int, alpha: float, beta: float, rng, gamma=None):
    g = rng.beta(alpha, beta) if gamma is None else float(gamma)
    if not 0.0 <= g <= 1.0:
        raise DataFormatError("mix coefficient must lie in [0, 1]")
    m = int(round(g * n))
    return m, m / n


def mixup_classify(
    a: LabeledCloud,
    b: LabeledCloud,
    num_classes: int,
    alpha: float = 1.0,
    beta: float = 1.0,
    seed=None,
    gamma: float | None = None,
) -> MixedSample:
    """Mix two labeled clouds of equal size into one with a soft label.

    `gamma` forces the mix coefficient instead of drawing it (used by tests
    and the degenerate all-a / all-b cases).
    """
    pa = check_cloud(a.points)
    pb = check_cloud(b.points)
    n = len(pa)
    if len(pb) != n:
        raise DataFormatError(f"cloud sizes differ ({n} vs {len(pb)})")
    if not (0 <= a.label < num_classes and 0 <= b.label < num_classes):
        raise DataFormatError("labels out of range for num_classes")
    rng = as_rng(seed)
    m, realized = _draw_counts(n, alpha, beta, rng, gamma)
    idx_a = rng.choice(n, size=m, replace=False)
    idx_b = rng.choice(n, size=n - m, replace=False)
    points = np.concatenate([pa[idx_a], pb[idx_b]], axis=0)
    label = np.zeros(num_classes)
    label[a.label] += realized
    label[b.label] += 1.0 - realized
    return MixedSample(points=points, gamma=realized, soft_label=label)


def mixup_segment(
    a: SegLabeledCloud,
    b: SegLabeledCloud,
    alpha: float = 1.0,
    beta: float = 1.0,
    seed=None,
    gamma: float | None = None,
) -> MixedSample:
    """Mix two per-point-labeled clouds; each sampled point migrates with
    its own label."""
    pa = check_cloud(a.points)
    pb = check_cloud(b.points)
    n = len(pa)
    if len(pb) != n:
        raise DataFormatError(f"cloud sizes differ ({n} vs {len(pb)})")
    rng = as_rng(seed)
    m, realized = _draw_counts(n, alpha, beta, rng, gamma)
    idx_a = rng.choice(n, size=m, replace=False)
    idx_b = rng.choice(n, size=n - m, replace=False)
    points = np.concatenate([pa[idx_a], pb[idx_b]], axis=0)
    labels = np.concatenate([a.labels[idx_a], b.labels[idx_b]])
    return MixedSample(points=points, gamma=realized, point_labels=labels)
