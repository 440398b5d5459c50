"""Instance-averaged multi-label metrics and per-class tallies.

For each instance with true set ``y`` and predicted set ``p``:

    accuracy  = |y & p| / |y | p|
    precision = |y & p| / |p|
    recall    = |y & p| / |y|
    f1        = 2 |y & p| / (|y| + |p|)

and each metric is the mean over instances. Empty-set conventions: when both
sets are empty every term is 1.0; when only the denominator set is empty the
term is 0.0. Any instance hitting either rule counts toward
``degenerate_instances``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from mlvc.vit import CLASS_NAMES


def binarize(scores, threshold: float = 0.5) -> np.ndarray:
    """Strict ``score > threshold`` per class."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    return np.asarray(scores) > threshold


def _as_label_matrix(sets, name: str) -> np.ndarray:
    arr = np.asarray(sets)
    if arr.ndim == 1:
        arr = arr[None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a list of label vectors, got shape {arr.shape}")
    return arr.astype(bool)


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class: dict = field(default_factory=dict)
    degenerate_instances: int = 0
    n: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _check(truths, preds):
    y = _as_label_matrix(truths, "truths")
    p = _as_label_matrix(preds, "preds")
    if y.shape != p.shape:
        raise ValueError(f"truths {y.shape} and preds {p.shape} differ in shape")
    if y.shape[0] == 0:
        raise ValueError("cannot evaluate zero instances")
    return y, p


def evaluate(truths, preds, class_names=CLASS_NAMES) -> MetricsReport:
    y, p = _check(truths, preds)
    inter = (y & p).sum(axis=1).astype(float)
    union = (y | p).sum(axis=1).astype(float)
    ny = y.sum(axis=1).astype(float)
    npred = p.sum(axis=1).astype(float)
    both_empty = (ny == 0) & (npred == 0)

    def _ratio(num, den):
        out = np.zeros_like(num)
        np.divide(num, den, out=out, where=den > 0)
        return np.where(both_empty, 1.0, out)

    acc = _ratio(inter, union)
    prec = _ratio(inter, npred)
    rec = _ratio(inter, ny)
    f1 = _ratio(2 * inter, ny + npred)
    degenerate = int(((npred == 0) | (ny == 0)).sum())

    names = list(class_names) if len(class_names) == y.shape[1] else [str(i) for i in range(y.shape[1])]
    per_class = {}
    for j, name in enumerate(names):
        per_class[name] = {
            "tp": int((y[:, j] & p[:, j]).sum()),
            "fp": int((~y[:, j] & p[:, j]).sum()),
            "fn": int((y[:, j] & ~p[:, j]).sum()),
            "tn": int((~y[:, j] & ~p[:, j]).sum()),
        }
    return MetricsReport(float(acc.mean()), float(prec.mean()), float(rec.mean()), float(f1.mean()),
                         per_class, degenerate, int(y.shape[0]))


def classwise(truths, preds, class_names=CLASS_NAMES) -> dict:
    """Per-class binary precision/recall/f1; 0/0 gives 0 and sets ``degenerate``."""
    y, p = _check(truths, preds)
    names = list(class_names) if len(class_names) == y.shape[1] else [str(i) for i in range(y.shape[1])]
    out = {}
    for j, name in enumerate(names):
        tp = int((y[:, j] & p[:, j]).sum())
        fp = int((~y[:, j] & p[:, j]).sum())
        fn = int((y[:, j] & ~p[:, j]).sum())
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0
        out[name] = {"tp": tp, "fp": fp, "fn": fn, "tn": int(y.shape[0]) - tp - fp - fn,
                     "precision": precision, "recall": recall, "f1": f1,
                     "degenerate": tp + fp == 0 or tp + fn == 0}
    return out
