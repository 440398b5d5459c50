"""Weakly supervised snippet extraction around annotated frames."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

SNIPPET_LEN = 7
HALF = SNIPPET_LEN // 2

logger = logging.getLogger(__name__)


@dataclass
class SnippetManifestEntry:
    frame_paths: list
    labels: list
    center_path: str

    def __post_init__(self):
        if len(self.frame_paths) != SNIPPET_LEN:
            raise ValueError(f"snippet needs {SNIPPET_LEN} frames, got {len(self.frame_paths)}")
        if self.center_path != self.frame_paths[HALF]:
            raise ValueError("center frame must sit at index 3 of the snippet")

    def to_json(self) -> dict:
        return {"frames": [str(p) for p in self.frame_paths],
                "labels": [int(v) for v in self.labels],
                "center": str(self.center_path)}

    @classmethod
    def from_json(cls, d: dict) -> "SnippetManifestEntry":
        return cls(list(d["frames"]), [int(v) for v in d["labels"]], d["center"])


@dataclass
class AnnotatedCenter:
    video: str
    index: int
    labels: Sequence[int]


@dataclass
class SkippedCenter:
    video: str
    index: int
    reason: str


def extract_snippets(videos: Mapping[str, Sequence], centers: Sequence[AnnotatedCenter],
                     check_files: bool = False):
    """Seven consecutive frames around every annotated center that has 3 frames each side.

    ``videos`` maps a video id to its ordered frame paths. Returns
    ``(entries, skipped)``; every skipped center is logged with its reason.
    Labels are copied from the center annotation to the whole snippet.
    """
    entries, skipped = [], []
    for c in centers:
        frames = videos.get(c.video)
        reason = None
        if frames is None:
            reason = "unknown video"
        elif c.index - HALF < 0:
            reason = "insufficient left context"
        elif c.index + HALF >= len(frames):
            reason = "insufficient right context"
        else:
            window = [str(p) for p in frames[c.index - HALF:c.index + HALF + 1]]
            if check_files:
                missing = [p for p in window if not Path(p).is_file()]
                if missing:
                    reason = f"missing frame {missing[0]}"
        if reason is not None:
            logger.warning("skipping center %s[%d]: %s", c.video, c.index, reason)
            skipped.append(SkippedCenter(c.video, c.index, reason))
            continue
        entries.append(SnippetManifestEntry(window, [int(v) for v in c.labels], window[HALF]))
    return entries, skipped


def split_entries(items: Sequence, train: int, val: int, seed: int = 0):
    """Seeded disjoint split into train/val/unused lists, input order kept inside each part."""
    if train + val > len(items):
        raise ValueError(f"cannot take {train}+{val} items from {len(items)}")
    order = np.random.default_rng(seed).permutation(len(items))
    train_idx = sorted(order[:train])
    val_idx = sorted(order[train:train + val])
    unused_idx = sorted(order[train + val:])
    return ([items[i] for i in train_idx], [items[i] for i in val_idx], [items[i] for i in unused_idx])
