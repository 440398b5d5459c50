"""Annotation, manifest and split files, plus the in-memory datasets the trainer consumes."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from mlvc.data.imageio import read_image
from mlvc.data.snippets import SnippetManifestEntry
from mlvc.data.transforms import AugmentConfig, apply_augment, normalize, sample_augment_params, to_unit_chw
from mlvc.vit import CLASS_NAMES, NUM_CLASSES

ANNOTATION_HEADER = ["path", *CLASS_NAMES]


def write_annotations(path, rows: Sequence[tuple[str, Sequence[int]]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ANNOTATION_HEADER)
        for p, labels in rows:
            writer.writerow([p, *[int(v) for v in labels]])


def read_annotations(path) -> list[tuple[str, list[int]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ANNOTATION_HEADER:
            raise ValueError(f"{path}: header must be {','.join(ANNOTATION_HEADER)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(ANNOTATION_HEADER):
                raise ValueError(f"{path}:{lineno}: expected {len(ANNOTATION_HEADER)} cells, got {len(row)}")
            if any(v not in ("0", "1") for v in row[1:]):
                raise ValueError(f"{path}:{lineno}: label cells must be 0 or 1")
            rows.append((row[0], [int(v) for v in row[1:]]))
    return rows


def write_manifest(path, entries: Sequence[SnippetManifestEntry]) -> None:
    with open(path, "w") as fh:
        for e in entries:
            fh.write(json.dumps(e.to_json()) + "\n")


def read_manifest(path) -> list[SnippetManifestEntry]:
    entries = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                entries.append(SnippetManifestEntry.from_json(json.loads(line)))
    return entries


def write_splits(path, splits: dict) -> None:
    check_splits(splits)
    Path(path).write_text(json.dumps({k: list(splits[k]) for k in ("train", "val", "unused")}, indent=2))


def read_splits(path) -> dict:
    splits = json.loads(Path(path).read_text())
    check_splits(splits)
    return splits


def check_splits(splits: dict) -> None:
    if set(splits) != {"train", "val", "unused"}:
        raise ValueError(f"split file needs exactly train/val/unused keys, got {sorted(splits)}")
    seen = set()
    for key in ("train", "val", "unused"):
        overlap = seen.intersection(splits[key])
        if overlap:
            raise ValueError(f"split {key!r} overlaps an earlier split at {sorted(overlap)[0]}")
        seen.update(splits[key])


class ArrayDataset:
    """In-memory samples in [0, 1] with per-channel normalization applied on fetch.

    ``inputs`` is ``n x 3 x H x W`` (images) or ``n x 7 x 3 x H x W`` (snippets).
    When ``augment`` is set, ``get_batch(idx, seed=...)`` augments each sample
    from its own generator seeded with ``(*seed, sample_index)``; a snippet
    shares one draw across its frames.
    """

    def __init__(self, inputs: np.ndarray, labels: np.ndarray, mean, std,
                 augment: AugmentConfig | None = None, ids: Sequence[str] | None = None):
        inputs = np.asarray(inputs, dtype=np.float32)
        labels = np.asarray(labels, dtype=np.uint8)
        if len(inputs) != len(labels):
            raise ValueError(f"{len(inputs)} inputs but {len(labels)} label rows")
        if labels.ndim != 2 or labels.shape[1] != NUM_CLASSES:
            raise ValueError(f"labels must be n x {NUM_CLASSES}, got {labels.shape}")
        self.inputs = inputs
        self.labels = labels
        self.mean = tuple(mean)
        self.std = tuple(std)
        self.augment = augment
        self.ids = list(ids) if ids is not None else [str(i) for i in range(len(inputs))]

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def is_video(self) -> bool:
        return self.inputs.ndim == 5

    def get_batch(self, indices, seed=None) -> np.ndarray:
        out = []
        for i in np.asarray(indices):
            x = self.inputs[i]
            if seed is not None and self.augment is not None:
                rng = np.random.default_rng([*np.atleast_1d(seed), int(i)])
                params = sample_augment_params(rng, self.augment)
                if self.is_video:
                    x = np.stack([apply_augment(f, params, self.augment) for f in x])
                else:
                    x = apply_augment(x, params, self.augment)
            if self.is_video:
                x = np.stack([normalize(f, self.mean, self.std) for f in x])
            else:
                x = normalize(x, self.mean, self.std)
            out.append(x)
        return np.stack(out).astype(np.float32) if out else np.zeros((0,) + self.inputs.shape[1:], np.float32)

    def subset(self, indices) -> "ArrayDataset":
        idx = np.asarray(indices, dtype=int)
        return ArrayDataset(self.inputs[idx], self.labels[idx], self.mean, self.std, self.augment,
                            [self.ids[i] for i in idx])


def images_to_unit(images_u8, size: int) -> np.ndarray:
    """Stack of ``H x W x 3`` uint8 frames to ``n x 3 x size x size`` floats in [0, 1]."""
    return np.stack([to_unit_chw(im, size) for im in images_u8]).astype(np.float32)


def load_image_dataset(root, annotations, paths: Sequence[str], size: int, mean, std,
                       augment: AugmentConfig | None = None) -> ArrayDataset:
    """Dataset of the annotated images whose path is in ``paths`` (order follows ``paths``)."""
    root = Path(root)
    table = dict(annotations)
    missing = [p for p in paths if p not in table]
    if missing:
        raise KeyError(f"no annotation for {missing[0]}")
    inputs = np.stack([to_unit_chw(read_image(root / p), size) for p in paths]) if paths else \
        np.zeros((0, 3, size, size), np.float32)
    labels = np.asarray([table[p] for p in paths], dtype=np.uint8).reshape(-1, NUM_CLASSES)
    return ArrayDataset(inputs, labels, mean, std, augment, paths)


def load_snippet_dataset(root, entries: Sequence[SnippetManifestEntry], size: int, mean, std,
                         augment: AugmentConfig | None = None) -> ArrayDataset:
    root = Path(root)
    inputs = np.stack([np.stack([to_unit_chw(read_image(root / p), size) for p in e.frame_paths])
                       for e in entries]) if entries else np.zeros((0, 7, 3, size, size), np.float32)
    labels = np.asarray([e.labels for e in entries], dtype=np.uint8).reshape(-1, NUM_CLASSES)
    return ArrayDataset(inputs, labels, mean, std, augment, [e.center_path for e in entries])


def list_frames(directory) -> list[Path]:
    """Frame files of one video directory in lexicographic order."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"frame directory not found: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in (".ppm", ".png"))
