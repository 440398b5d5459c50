"""Greedy near-duplicate removal by cosine similarity of image embeddings."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mlvc import tensor as T
from mlvc.data.transforms import resize_bilinear

DEFAULT_THRESHOLD = 0.90


@dataclass
class DedupReport:
    kept: list = field(default_factory=list)
    removed: list = field(default_factory=list)  # (index, kept index it matched, similarity)
    zero_norm: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"kept": self.kept,
                "removed": [{"index": i, "duplicate_of": j, "similarity": s} for i, j, s in self.removed],
                "zero_norm": self.zero_norm}


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def dedup_cosine(embeddings, threshold: float = DEFAULT_THRESHOLD) -> DedupReport:
    """Scan in order; drop an item whose similarity to any kept item exceeds ``threshold``.

    Zero-norm embeddings have similarity 0 to everything and are flagged.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    norms = np.linalg.norm(emb, axis=1)
    unit = np.zeros_like(emb)
    nz = norms > 0
    unit[nz] = emb[nz] / norms[nz, None]
    report = DedupReport(zero_norm=[int(i) for i in np.flatnonzero(~nz)])
    for i in range(len(emb)):
        if report.kept:
            sims = unit[report.kept] @ unit[i]
            j = int(np.argmax(sims))
            if sims[j] > threshold:
                report.removed.append((i, report.kept[j], float(sims[j])))
                continue
        report.kept.append(i)
    return report


def grayscale_embedding(image_u8: np.ndarray, size: int = 16) -> np.ndarray:
    """Fallback embedder: ``size x size`` downsampled grayscale, flattened."""
    img = np.asarray(image_u8, dtype=np.float64)
    gray = img @ np.array([0.299, 0.587, 0.114])
    return resize_bilinear(gray[..., None], size, size).reshape(-1)


def model_embedding(model, images_chw: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Class-token output of an image model for preprocessed ``B x 3 x H x W`` inputs."""

    was_training = model.training
    model.eval()
    out = []
    with T.no_grad():
        for start in range(0, len(images_chw), batch_size):
            out.append(model.features(images_chw[start:start + batch_size]).data[:, 0])
    model.train(was_training)
    return np.concatenate(out, axis=0)


def dedup_entries(entries, embedder, threshold: float = DEFAULT_THRESHOLD):
    """Apply :func:`dedup_cosine` to arbitrary entries via ``embedder(entry) -> vector``."""
    report = dedup_cosine(np.stack([np.asarray(embedder(e), dtype=np.float64).reshape(-1) for e in entries]),
                          threshold)
    return [entries[i] for i in report.kept], report
