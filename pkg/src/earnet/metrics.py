"""Confusion-matrix metrics and cross-fold aggregation.

Per-class precision, recall, specificity, and F1 come from a one-vs-rest
reduction of the confusion matrix. A degenerate denominator (e.g. a class
never predicted) defines the metric as 0 and records a flag instead of
inventing a vacuous 1.0, so downstream aggregation stays total.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import DataError

__all__ = [
    "confusion",
    "MetricSet",
    "metrics_from_confusion",
    "FoldAggregate",
    "aggregate_folds",
]


def confusion(preds, targets, num_classes: int) -> np.ndarray:
    """Counts matrix, rows = true class, cols = predicted class."""
    p = np.asarray(preds, dtype=np.int64)
    t = np.asarray(targets, dtype=np.int64)
    if p.shape != t.shape or p.ndim != 1:
        raise DataError(f"preds {p.shape} and targets {t.shape} must be equal-length 1-d")
    for name, v in (("preds", p), ("targets", t)):
        if v.size and (v.min() < 0 or v.max() >= num_classes):
            raise DataError(
                f"{name} contain classes outside [0, {num_classes}): "
                f"range [{v.min()}, {v.max()}]"
            )
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


@dataclass
class MetricSet:
    """Overall accuracy plus per-class arrays; values lie in [0, 1].

    ``degenerate`` lists (metric, class_index) pairs whose denominator was
    zero and whose value was therefore defined as 0.
    """

    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    specificity: np.ndarray
    f1: np.ndarray
    degenerate: list[tuple[str, int]] = field(default_factory=list)


def _safe_div(num: np.ndarray, den: np.ndarray, metric: str, flags: list) -> np.ndarray:
    out = np.zeros_like(num, dtype=np.float64)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    for idx in np.flatnonzero(~ok):
        flags.append((metric, int(idx)))
    return out


def metrics_from_confusion(cm: np.ndarray) -> MetricSet:
    """One-vs-rest metrics of a K x K confusion matrix."""
    cm = np.asarray(cm, dtype=np.int64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.shape[0] < 2:
        raise DataError(f"confusion matrix must be K x K with K >= 2, got {cm.shape}")
    if (cm < 0).any():
        raise DataError("confusion matrix has negative counts")
    total = cm.sum()
    if total == 0:
        raise DataError("confusion matrix is empty")

    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp   # predicted as c but not c
    fn = cm.sum(axis=1) - tp   # truly c but predicted otherwise
    tn = total - tp - fp - fn

    flags: list[tuple[str, int]] = []
    precision = _safe_div(tp, tp + fp, "precision", flags)
    recall = _safe_div(tp, tp + fn, "recall", flags)
    specificity = _safe_div(tn, tn + fp, "specificity", flags)
    f1 = _safe_div(2 * precision * recall, precision + recall, "f1", flags)
    return MetricSet(
        accuracy=float(tp.sum() / total),
        precision=precision,
        recall=recall,
        specificity=specificity,
        f1=f1,
        degenerate=flags,
    )


@dataclass(frozen=True)
class FoldAggregate:
    mean: float
    std: float
    ci_low: float
    ci_high: float
    ci_length: float


def aggregate_folds(values) -> FoldAggregate:
    """Mean, sample std, and two-sided 95% Student-t CI of fold values."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 2:
        raise DataError(f"fold aggregation needs >= 2 values, got shape {v.shape}")
    n = v.size
    mean = float(v.mean())
    std = float(v.std(ddof=1))
    half = float(stats.t.ppf(0.975, n - 1)) * std / float(np.sqrt(n))
    return FoldAggregate(
        mean=mean,
        std=std,
        ci_low=mean - half,
        ci_high=mean + half,
        ci_length=2 * half,
    )
