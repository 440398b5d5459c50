"""Per-frame confidence traces and their temporal-stability statistics.

The stability statistics (total variation, jump count, largest jump) are this
package's own quantitative measure; the underlying observation is only that
confidences on near-identical consecutive frames can swing widely.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from mlvc import tensor as T
from mlvc.data.transforms import LIACI_MEAN, LIACI_STD, preprocess_array
from mlvc.nn import Module
from mlvc.quality import QualityScores, trace_quality
from mlvc.video import SNIPPET_LEN, FactorizedClassifier, TubeletClassifier, UniformSamplingClassifier
from mlvc.vit import CLASS_NAMES, ConfigError, VisionTransformer

JUMP_THRESHOLD = 0.3
HALF = SNIPPET_LEN // 2


@dataclass
class ConfidenceTrace:
    scores: np.ndarray  # T x 9
    quality: list = field(default_factory=list)
    clamped: np.ndarray | None = None
    source: str = ""

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2:
            raise ValueError(f"scores must be T x classes, got {self.scores.shape}")
        if np.any(self.scores < 0) or np.any(self.scores > 1):
            raise ValueError("scores must lie in [0, 1]")
        if self.quality and len(self.quality) != len(self.scores):
            raise ValueError(f"{len(self.scores)} score rows but {len(self.quality)} quality rows")
        if self.clamped is None:
            self.clamped = np.zeros(len(self.scores), dtype=bool)

    @property
    def frames(self) -> int:
        return len(self.scores)


def window_starts(n_frames: int) -> tuple[np.ndarray, np.ndarray]:
    """Start index of the 7-frame window centered on each frame, clamped to the clip, and a clamp flag."""
    ideal = np.arange(n_frames) - HALF
    starts = np.clip(ideal, 0, n_frames - SNIPPET_LEN)
    return starts, starts != ideal


def _is_video_model(model: Module) -> bool:
    return isinstance(model, (FactorizedClassifier, TubeletClassifier, UniformSamplingClassifier))


def run_trace(frames: Sequence[np.ndarray], model: Module, mode: str, *, mean=LIACI_MEAN, std=LIACI_STD,
              batch_size: int = 16, source: str = "", with_quality: bool = True) -> ConfidenceTrace:
    """Score every frame of a clip.

    ``frames`` are ``H x W x 3`` 8-bit images. Image mode scores frame ``t``
    alone; video mode scores it from the 7-frame window centered on it, with
    windows clamped at the clip edges (flagged in ``clamped``).
    """
    if mode not in ("image", "video"):
        raise ConfigError(f"mode must be 'image' or 'video', got {mode!r}")
    frames = list(frames)
    n = len(frames)
    if n == 0:
        raise ValueError("empty frame sequence")
    if mode == "video" and not _is_video_model(model):
        raise ConfigError("video mode needs a video model")
    if mode == "image" and not isinstance(model, VisionTransformer):
        raise ConfigError("image mode needs an image model")
    if mode == "video" and n < SNIPPET_LEN:
        raise ValueError(f"video mode needs at least {SNIPPET_LEN} frames, got {n}")
    size = model.cfg.image_size if mode == "image" else model.spec.spatial.image_size
    inputs = np.stack([preprocess_array(f, size, mean, std) for f in frames])

    was_training = model.training
    model.eval()
    rows = []
    with T.no_grad():
        if mode == "image":
            clamped = np.zeros(n, dtype=bool)
            for s in range(0, n, batch_size):
                rows.append(T.sigmoid(model(inputs[s:s + batch_size])).data)
        else:
            starts, clamped = window_starts(n)
            for s in range(0, n, batch_size):
                batch = np.stack([inputs[st:st + SNIPPET_LEN] for st in starts[s:s + batch_size]])
                rows.append(T.sigmoid(model(batch)).data)
    model.train(was_training)
    quality = trace_quality(frames) if with_quality else []
    return ConfidenceTrace(np.concatenate(rows), quality, clamped, source)


def stability_stats(trace, jump_threshold: float = JUMP_THRESHOLD, class_names=CLASS_NAMES) -> dict:
    """Per class: mean absolute frame-to-frame change, number of jumps above threshold, largest jump."""
    scores = trace.scores if isinstance(trace, ConfidenceTrace) else np.asarray(trace, dtype=np.float64)
    if scores.ndim == 1:
        scores = scores[:, None]
    if len(scores) < 2:
        raise ValueError("stability statistics need at least 2 frames")
    deltas = np.abs(np.diff(scores, axis=0))
    names = list(class_names) if len(class_names) == scores.shape[1] else [str(i) for i in range(scores.shape[1])]
    return {name: {"total_variation": float(deltas[:, j].mean()),
                   "jump_count": int((deltas[:, j] > jump_threshold).sum()),
                   "max_jump": float(deltas[:, j].max())}
            for j, name in enumerate(names)}


def mean_total_variation(stats: dict, classes: Sequence[str] | None = None) -> float:
    keys = list(stats) if classes is None else list(classes)
    return float(np.mean([stats[k]["total_variation"] for k in keys]))


def pearson(x, y) -> float | None:
    """Pearson correlation; ``None`` when either series has zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"series must be equal-length 1-D, got {x.shape} and {y.shape}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return None
    return float(dx @ dy) / math.sqrt(sxx * syy)


def correlate_quality(trace: ConfidenceTrace, class_index: int, which: str = "uiqm") -> float | None:
    """Correlation of one class's confidence with the per-frame UIQM or UCIQE series."""
    if which not in ("uiqm", "uciqe"):
        raise ValueError(f"which must be 'uiqm' or 'uciqe', got {which!r}")
    if trace.frames < 3:
        raise ValueError("correlation needs at least 3 frames")
    if len(trace.quality) != trace.frames:
        raise ValueError("trace has no per-frame quality values")
    q = [getattr(s, which) for s in trace.quality]
    return pearson(trace.scores[:, class_index], q)


def write_trace_csv(path, trace: ConfidenceTrace, class_names=CLASS_NAMES) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", *class_names, "uciqe", "uiqm", "clamped"])
        for t in range(trace.frames):
            q: QualityScores | None = trace.quality[t] if trace.quality else None
            writer.writerow([t, *[f"{v:.6f}" for v in trace.scores[t]],
                             f"{q.uciqe:.6f}" if q else "", f"{q.uiqm:.6f}" if q else "",
                             int(bool(trace.clamped[t]))])
