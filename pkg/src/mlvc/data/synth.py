"""Procedural stand-in for underwater hull-inspection footage.

Each class owns a cell of a 3x3 grid and a fixed colored, striped motif. A
frame shows the motifs of its active labels over a blue-green water
background. Videos move the whole scene by a slow drift plus per-frame
jitter (ROV motion) and add pixel noise.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from mlvc.data.dataset import write_annotations, write_manifest, write_splits
from mlvc.data.imageio import write_image
from mlvc.data.snippets import SNIPPET_LEN, AnnotatedCenter, extract_snippets, split_entries
from mlvc.vit import CLASS_NAMES, NUM_CLASSES

logger = logging.getLogger(__name__)

MOTIF_COLORS = np.array([
    [230, 200, 40],   # anode
    [200, 80, 200],   # bilge_keel
    [170, 70, 20],    # corrosion
    [240, 40, 40],    # defect
    [40, 200, 60],    # marine_growth
    [250, 250, 250],  # over_board_valve
    [250, 150, 40],   # paint_peel
    [120, 120, 120],  # propeller
    [20, 20, 20],     # sea_chest_grating
], dtype=np.float64)
# stripe (period in px, orientation: 0 horizontal, 1 vertical, 2 diagonal)
MOTIF_TEXTURE = [(4, 0), (6, 1), (3, 2), (5, 0), (4, 2), (8, 1), (3, 0), (6, 2), (2, 1)]


@dataclass
class SynthConfig:
    image_size: int = 64
    videos: int = 4
    segments_per_video: int = 12
    segment_len: int = 9
    class_rate: float = 0.3
    class_rates: list | None = None
    jitter_px: float = 2.0
    drift_px: float = 0.5
    noise_std: float = 6.0
    edge_centers: bool = True
    train_fraction: float = 0.7
    val_fraction: float = 0.15
    clip_len: int = 40
    seed: int = 0

    def rates(self) -> np.ndarray:
        rates = self.class_rates if self.class_rates is not None else [self.class_rate] * NUM_CLASSES
        if len(rates) != NUM_CLASSES:
            raise ValueError(f"class_rates needs {NUM_CLASSES} values")
        return np.asarray(rates, dtype=np.float64)

    def to_dict(self) -> dict:
        return asdict(self)


def background(size: int, shift=(0.0, 0.0)) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    yy = yy + shift[0]
    xx = xx + shift[1]
    depth = yy / size
    ripple = 6.0 * np.sin(xx / 5.0 + yy / 9.0)
    r = 20 + 10 * depth + ripple * 0.3
    g = 90 - 30 * depth + ripple
    b = 120 - 20 * depth + ripple
    return np.stack([r, g, b], axis=-1)


def render_frame(labels, size: int = 64, offset=(0.0, 0.0), rng: np.random.Generator | None = None,
                 noise_std: float = 0.0) -> np.ndarray:
    """One ``size x size x 3`` uint8 frame showing the motifs of ``labels``."""
    labels = np.asarray(labels).astype(bool)
    img = background(size, offset)
    cell = size / 3.0
    box = int(round(cell * 0.7))
    yy, xx = np.mgrid[0:box, 0:box]
    for c in np.flatnonzero(labels):
        row, col = divmod(int(c), 3)
        top = int(round(row * cell + (cell - box) / 2 + offset[0]))
        left = int(round(col * cell + (cell - box) / 2 + offset[1]))
        period, orient = MOTIF_TEXTURE[c]
        coord = yy if orient == 0 else xx if orient == 1 else (yy + xx)
        stripes = ((coord // max(period // 2, 1)) % 2).astype(np.float64)
        patch = MOTIF_COLORS[c] * (0.65 + 0.35 * stripes[..., None])
        y0, x0 = max(top, 0), max(left, 0)
        y1, x1 = min(top + box, size), min(left + box, size)
        if y1 > y0 and x1 > x0:
            img[y0:y1, x0:x1] = patch[y0 - top:y1 - top, x0 - left:x1 - left]
    if noise_std and rng is not None:
        img = img + rng.normal(0.0, noise_std, img.shape)
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def sample_labels(rng: np.random.Generator, rates, n: int) -> np.ndarray:
    return (rng.random((n, len(rates))) < np.asarray(rates)).astype(np.uint8)


def motion_path(rng: np.random.Generator, length: int, jitter_px: float, drift_px: float) -> np.ndarray:
    """Per-frame (dy, dx) offsets: a random-walk drift plus independent jitter."""
    drift = np.cumsum(rng.normal(0.0, drift_px, (length, 2)), axis=0)
    return drift + rng.uniform(-jitter_px, jitter_px, (length, 2))


def render_video(labels_per_frame, size: int, rng: np.random.Generator, jitter_px: float = 2.0,
                 drift_px: float = 0.5, noise_std: float = 6.0) -> np.ndarray:
    labels_per_frame = np.asarray(labels_per_frame)
    offsets = motion_path(rng, len(labels_per_frame), jitter_px, drift_px)
    offsets = np.clip(offsets, -size / 12, size / 12)
    return np.stack([render_frame(lab, size, off, rng, noise_std)
                     for lab, off in zip(labels_per_frame, offsets)])


def synth_images(n: int, size: int = 64, rates=None, seed: int = 0, jitter_px: float = 2.0,
                 noise_std: float = 6.0):
    """``n`` independent annotated images: ``(uint8 n x H x W x 3, labels n x 9)``."""
    rng = np.random.default_rng([seed, 11])
    rates = np.full(NUM_CLASSES, 0.3) if rates is None else np.asarray(rates)
    labels = sample_labels(rng, rates, n)
    offsets = rng.uniform(-jitter_px, jitter_px, (n, 2))
    images = np.stack([render_frame(lab, size, off, rng, noise_std) for lab, off in zip(labels, offsets)])
    return images, labels


def synth_snippets(n: int, size: int = 64, rates=None, seed: int = 0, jitter_px: float = 2.0,
                   drift_px: float = 0.5, noise_std: float = 6.0):
    """``n`` 7-frame snippets with one label vector each: ``(uint8 n x 7 x H x W x 3, labels n x 9)``."""
    rng = np.random.default_rng([seed, 12])
    rates = np.full(NUM_CLASSES, 0.3) if rates is None else np.asarray(rates)
    labels = sample_labels(rng, rates, n)
    clips = np.stack([render_video(np.repeat(lab[None], SNIPPET_LEN, 0), size, rng, jitter_px, drift_px, noise_std)
                      for lab in labels])
    return clips, labels


def jitter_clip(labels, length: int = 40, size: int = 64, seed: int = 0, jitter_px: float = 3.0,
                drift_px: float = 0.3, noise_std: float = 10.0) -> np.ndarray:
    """A clip with constant labels and strong frame-to-frame jitter, for stability checks."""
    rng = np.random.default_rng([seed, 13])
    return render_video(np.repeat(np.asarray(labels)[None], length, 0), size, rng, jitter_px, drift_px, noise_std)


def generate(out_dir, cfg: SynthConfig) -> dict:
    """Write frames, annotations.csv, snippets.jsonl, splits.json and a jitter clip under ``out_dir``."""

    out = Path(out_dir)
    rng = np.random.default_rng([cfg.seed, 10])
    rates = cfg.rates()
    videos: dict[str, list[str]] = {}
    centers: list[AnnotatedCenter] = []
    annotations: list[tuple[str, list[int]]] = []
    for v in range(cfg.videos):
        name = f"video{v:02d}"
        seg_labels = sample_labels(rng, rates, cfg.segments_per_video)
        per_frame = np.repeat(seg_labels, cfg.segment_len, axis=0)
        frames = render_video(per_frame, cfg.image_size, rng, cfg.jitter_px, cfg.drift_px, cfg.noise_std)
        paths = []
        for t, frame in enumerate(frames):
            p = out / "frames" / name / f"{t:05d}.ppm"
            write_image(p, frame)
            paths.append(str(p.relative_to(out)))
        videos[name] = paths
        idx = [s * cfg.segment_len + cfg.segment_len // 2 for s in range(cfg.segments_per_video)]
        if cfg.edge_centers:
            idx.append(1)
        for t in idx:
            lab = [int(x) for x in per_frame[t]]
            centers.append(AnnotatedCenter(name, t, lab))
            annotations.append((paths[t], lab))

    entries, skipped = extract_snippets(videos, centers)
    n = len(entries)
    n_train = int(round(cfg.train_fraction * n))
    n_val = int(round(cfg.val_fraction * n))
    train, val, unused = split_entries([e.center_path for e in entries], n_train, n_val, cfg.seed)

    write_annotations(out / "annotations.csv", annotations)
    write_manifest(out / "snippets.jsonl", entries)
    write_splits(out / "splits.json", {"train": train, "val": val, "unused": unused})

    clip_labels = sample_labels(rng, np.full(NUM_CLASSES, 0.5), 1)[0]
    clip = jitter_clip(clip_labels, cfg.clip_len, cfg.image_size, cfg.seed)
    for t, frame in enumerate(clip):
        write_image(out / "clips" / "jitter" / f"{t:05d}.ppm", frame)
    (out / "clips" / "jitter_labels.json").write_text(
        json.dumps(dict(zip(CLASS_NAMES, [int(x) for x in clip_labels])), indent=2))

    summary = {"images": len(annotations), "snippets": n, "skipped": [asdict(s) for s in skipped],
               "train": len(train), "val": len(val), "unused": len(unused), "config": cfg.to_dict()}
    (out / "synth.json").write_text(json.dumps(summary, indent=2))
    logger.info("synthetic set: %d images, %d snippets (%d skipped)", len(annotations), n, len(skipped))
    return summary
