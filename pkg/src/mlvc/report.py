"""Run reports: metrics.json with per-split rows, provenance, and an environment stamp."""
from __future__ import annotations

import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from mlvc.metrics import MetricsReport
from mlvc.nn import Module, count_parameters
from mlvc.video import TUBELET_NOTE, UNIFORM_NOTE, VideoModelSpec
from mlvc.vit import VisionTransformer

# Only these keys may differ between two identical seeded runs.
WALL_CLOCK_KEYS = ("environment",)

STABILITY_NOTE = ("total variation / jump statistics are this package's own quantitative "
                  "temporal-stability measure")


def split_row(loss: float, report: MetricsReport) -> dict:
    return {"loss": float(loss), "accuracy": report.accuracy, "precision": report.precision,
            "recall": report.recall, "f1": report.f1}


def deviation_notes(model: Module) -> list[str]:
    if isinstance(model, VisionTransformer):
        return []
    spec: VideoModelSpec = model.spec
    if spec.variant == "tubelet":
        return [TUBELET_NOTE]
    if spec.variant == "uniform_sampling":
        return [UNIFORM_NOTE]
    return []


def environment_stamp(started: float | None = None) -> dict:
    now = time.time()
    stamp = {"python": sys.version.split()[0], "numpy": np.__version__, "platform": platform.platform(),
             "finished_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(now))}
    if started is not None:
        stamp["wall_seconds"] = round(now - started, 3)
    return stamp


def emit_report(out_dir, model: Module, rows: dict, *, seed: int, config_hash: str, finetune: str,
                best_epoch: int | None = None, per_class: dict | None = None, started: float | None = None,
                extra_notes=()) -> dict:
    """Write ``metrics.json`` under ``out_dir`` and return its content.

    ``rows`` maps split name to ``split_row(...)`` dicts.
    """
    report = {
        "kind": "image" if isinstance(model, VisionTransformer) else "video",
        "seed": seed,
        "config_hash": config_hash,
        "finetune": finetune,
        "best_epoch": best_epoch,
        "splits": rows,
        "parameters": {"total": count_parameters(model, trainable_only=False),
                       "trainable": count_parameters(model)},
        "notes": deviation_notes(model) + list(extra_notes),
    }
    if report["kind"] == "video":
        report["variant"] = model.spec.variant
        report["pool_st"] = model.spec.pool_st
        report["pool_tt"] = model.spec.pool_tt
        report["known_non_converging"] = model.spec.variant == "uniform_sampling"
    if per_class is not None:
        report["per_class"] = per_class
    report["environment"] = environment_stamp(started)
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    (Path(out_dir) / "metrics.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return report


def strip_wall_clock(report: dict) -> dict:
    return {k: v for k, v in report.items() if k not in WALL_CLOCK_KEYS}
