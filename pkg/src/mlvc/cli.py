"""Command-line entry point: ``mlvc <command> ...``.

Exit codes: 0 success, 1 unexpected error, 2 bad configuration or undecodable input,
3 missing file, 4 corrupt or incompatible checkpoint, 5 training diverged.
Failures print one JSON object ``{"error", "message", "exit_code"}`` on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from mlvc import config as run_config
from mlvc.checkpoint import CheckpointError, SpecMismatchError, load_checkpoint, save_checkpoint
from mlvc.data.dataset import (list_frames, load_image_dataset, load_snippet_dataset, read_annotations,
                               read_manifest, read_splits, write_annotations, write_manifest, write_splits)
from mlvc.data.dedup import DEFAULT_THRESHOLD, dedup_cosine, grayscale_embedding, model_embedding
from mlvc.data.imageio import ImageDecodeError, read_image
from mlvc.data.snippets import AnnotatedCenter, extract_snippets, split_entries
from mlvc.data.synth import SynthConfig, generate
from mlvc.data.transforms import NORM_PRESETS, preprocess_array
from mlvc import tensor as T
from mlvc.metrics import binarize, classwise
from mlvc.models import build_model, normalize_spec, spec_of
from mlvc.nn import count_parameters
from mlvc.quality import trace_quality
from mlvc.report import STABILITY_NOTE, emit_report, split_row
from mlvc.temporal import JUMP_THRESHOLD, run_trace, stability_stats, write_trace_csv
from mlvc.trainer import DivergenceError, evaluate_split, predict_logits, train_model
from mlvc.video import FactorizedClassifier
from mlvc.vit import PRESETS, ConfigError, VisionTransformer, expected_parameter_count

log = logging.getLogger("mlvc")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_MISSING, EXIT_CHECKPOINT, EXIT_DIVERGED = 0, 1, 2, 3, 4, 5


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _seed(args, default: int = 0) -> int:
    if args.seed is not None:
        return args.seed
    env = run_config.env_seed()
    return env if env is not None else default


def _seed_override(args) -> int | None:
    return args.seed if args.seed is not None else run_config.env_seed()


def _read_json_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc


# dataset -------------------------------------------------------------------

def cmd_dataset_synth(args) -> dict:
    raw = _read_json_config(args.config)
    unknown = set(raw) - set(SynthConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown synth keys: {sorted(unknown)}")
    for key in ("image_size", "videos"):
        if getattr(args, key) is not None:
            raw[key] = getattr(args, key)
    raw["seed"] = _seed(args, raw.get("seed", 0))
    try:
        cfg = SynthConfig(**raw)
        cfg.rates()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid synth config: {exc}") from exc
    return generate(args.out, cfg)


def _centers_from_annotations(root: Path, rows):
    """Map annotated frame paths to (video directory, frame index) centers."""
    videos: dict[str, list[str]] = {}
    centers = []
    for path, labels in rows:
        video = str(Path(path).parent)
        if video not in videos:
            videos[video] = [str(p.relative_to(root)) for p in list_frames(root / video)]
        try:
            index = videos[video].index(str(Path(path)))
        except ValueError:
            raise FileNotFoundError(f"annotated frame {path} not found under {root / video}") from None
        centers.append(AnnotatedCenter(video, index, labels))
    return videos, centers


def cmd_dataset_snippets(args) -> dict:
    root = Path(args.root)
    rows = read_annotations(args.annotations)
    videos, centers = _centers_from_annotations(root, rows)
    entries, skipped = extract_snippets({k: [str(root / p) for p in v] for k, v in videos.items()},
                                        centers, check_files=True)
    for e in entries:
        e.frame_paths = [str(Path(p).relative_to(root)) for p in e.frame_paths]
        e.center_path = e.frame_paths[3]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "snippets.jsonl", entries)
    n = len(entries)
    n_train = int(round(args.train_fraction * n))
    n_val = int(round(args.val_fraction * n))
    train, val, unused = split_entries([e.center_path for e in entries], n_train, n_val, _seed(args))
    write_splits(out / "splits.json", {"train": train, "val": val, "unused": unused})
    summary = {"snippets": n, "skipped": [asdict(s) for s in skipped],
               "train": len(train), "val": len(val), "unused": len(unused)}
    _write_json(out / "snippets-summary.json", summary)
    return summary


def cmd_dataset_dedup(args) -> dict:
    root = Path(args.root)
    rows = read_annotations(args.annotations)
    images = [read_image(root / p) for p, _ in rows]
    if args.model:
        model = load_checkpoint(args.model)
        if not isinstance(model, VisionTransformer):
            raise ConfigError("dedup --model must be an image model checkpoint")
        mean, std = NORM_PRESETS[args.normalization]
        inputs = np.stack([preprocess_array(im, model.cfg.image_size, mean, std) for im in images])
        embeddings = model_embedding(model, inputs)
        embedder = "model class token"
    else:
        embeddings = np.stack([grayscale_embedding(im) for im in images])
        embedder = "16x16 grayscale"
    report = dedup_cosine(embeddings, args.threshold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_annotations(out / "annotations.csv", [rows[i] for i in report.kept])
    result = {"embedder": embedder, "threshold": args.threshold, "kept": len(report.kept),
              "removed": [{"path": rows[i][0], "duplicate_of": rows[j][0], "similarity": s}
                          for i, j, s in report.removed],
              "zero_norm": [rows[i][0] for i in report.zero_norm]}
    _write_json(out / "dedup.json", result)
    return {k: result[k] for k in ("embedder", "kept")} | {"removed": len(report.removed)}


# train / eval ---------------------------------------------------------------

def _datasets(cfg: run_config.RunConfig, kind: str, size: int, splits=("train", "val"), augment_train=True):
    data = cfg.data
    mean, std = cfg.mean_std
    split_lists = read_splits(data["splits"])
    out = {}
    if kind == "image":
        table = read_annotations(data["annotations"])
        for name in splits:
            aug = cfg.augment_config if (name == "train" and augment_train) else None
            out[name] = load_image_dataset(data["root"], table, split_lists[name], size, mean, std, aug)
    else:
        entries = {e.center_path: e for e in read_manifest(data["snippets"])}
        for name in splits:
            missing = [p for p in split_lists[name] if p not in entries]
            if missing:
                raise ConfigError(f"split {name!r} names {missing[0]}, which is not in the snippet manifest")
            aug = cfg.augment_config if (name == "train" and augment_train) else None
            out[name] = load_snippet_dataset(data["root"], [entries[p] for p in split_lists[name]],
                                             size, mean, std, aug)
    return out


def _input_size(model) -> int:
    return model.cfg.image_size if isinstance(model, VisionTransformer) else model.spec.spatial.image_size


def _build_for_run(cfg: run_config.RunConfig):
    spec = cfg.model
    spatial = None
    if cfg.init.get("spatial_checkpoint"):
        if spec["kind"] != "video" or spec["video"]["variant"] != "factorized":
            raise ConfigError("init.spatial_checkpoint only applies to factorized video models")
        spatial = load_checkpoint(cfg.init["spatial_checkpoint"],
                                  {"kind": "image", "vit": spec["video"]["spatial"]})
    model = build_model(spec, seed=cfg.seed, spatial=spatial)
    if cfg.init.get("checkpoint"):
        model.load_state_dict(load_checkpoint(cfg.init["checkpoint"], spec).state_dict())
    return model


def cmd_train(args) -> dict:
    started = time.time()
    if args.config is None:
        raise ConfigError("train needs --config")
    cfg = run_config.load(args.config, _seed_override(args))
    if cfg.model["kind"] != args.kind:
        raise ConfigError(f"'train {args.kind}' got a model of kind {cfg.model['kind']!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config-resolved.json", cfg.to_dict())

    model = _build_for_run(cfg)
    sets = _datasets(cfg, args.kind, _input_size(model))
    log_path = out / "epochs.jsonl"
    log_path.write_text("")

    def on_epoch(record):
        with open(log_path, "a") as fh:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")

    try:
        result = train_model(model, sets["train"], cfg.train, sets["val"], on_epoch=on_epoch)
    except DivergenceError as exc:
        save_checkpoint(out / "last-good.ckpt", model, exc.last_good_state)
        raise
    model.load_state_dict(result.best_state)
    save_checkpoint(out / "best.ckpt", model)

    rows, per_class = {}, None
    for name, ds in sets.items():
        if len(ds):
            loss, report = evaluate_split(model, ds, threshold=cfg.train.threshold)
            rows[name] = split_row(loss, report)
            if name == "val":
                per_class = _per_class(model, ds, cfg.train.threshold)
    emit_report(out, model, rows, seed=cfg.seed, config_hash=cfg.hash(), finetune=cfg.train.finetune,
                best_epoch=result.best_epoch, per_class=per_class, started=started)
    return {"out": str(out), "best_epoch": result.best_epoch, "splits": rows}


def _per_class(model, ds, threshold: float) -> dict:
    logits = predict_logits(model, ds.get_batch(np.arange(len(ds))))
    preds = binarize(T.sigmoid(T.Tensor(logits)).data, threshold)
    return classwise(ds.labels, preds)


def cmd_eval(args) -> dict:
    model = load_checkpoint(args.model)
    kind = "image" if isinstance(model, VisionTransformer) else "video"
    if args.config:
        cfg = run_config.load(args.config, _seed_override(args))
    else:
        cfg = run_config.resolve({"data": {"root": args.data, "normalization": args.normalization}},
                                 seed_override=_seed(args))
    ds = _datasets(cfg, kind, _input_size(model), splits=(args.split,), augment_train=False)[args.split]
    if len(ds) == 0:
        raise ConfigError(f"split {args.split!r} is empty")
    loss, report = evaluate_split(model, ds, threshold=args.threshold)
    result = {"split": args.split, "model": str(args.model), "n": report.n, "threshold": args.threshold,
              **split_row(loss, report), "degenerate_instances": report.degenerate_instances,
              "per_class": _per_class(model, ds, args.threshold)}
    _write_json(Path(args.out) / "metrics.json", result)
    return {k: result[k] for k in ("split", "n", "loss", "accuracy", "precision", "recall", "f1")}


# analysis -------------------------------------------------------------------

def _load_frames(directory):
    paths = list_frames(directory)
    if not paths:
        raise FileNotFoundError(f"no .ppm/.png frames in {directory}")
    return paths, [read_image(p) for p in paths]


def cmd_trace(args) -> dict:
    model = load_checkpoint(args.model)
    _, frames = _load_frames(args.frames)
    mean, std = NORM_PRESETS[args.normalization]
    trace = run_trace(frames, model, args.mode, mean=mean, std=std, source=str(args.frames))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(out / "trace.csv", trace)
    stats = stability_stats(trace, args.jump_threshold)
    _write_json(out / "stability.json", stats)
    mean_tv = float(np.mean([s["total_variation"] for s in stats.values()]))
    return {"frames": trace.frames, "mode": args.mode, "mean_total_variation": mean_tv,
            "clamped": int(trace.clamped.sum()), "note": STABILITY_NOTE}


def cmd_quality(args) -> dict:
    paths, frames = _load_frames(args.frames)
    scores = trace_quality(frames)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "quality.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "path", "uciqe", "uiqm", "uicm", "uism", "uiconm"])
        for t, (p, s) in enumerate(zip(paths, scores)):
            writer.writerow([t, p.name, *[f"{v:.6f}" for v in (s.uciqe, s.uiqm, s.uicm, s.uism, s.uiconm)]])
    return {"frames": len(frames), "mean_uciqe": float(np.mean([s.uciqe for s in scores])),
            "mean_uiqm": float(np.mean([s.uiqm for s in scores]))}


def cmd_info(args) -> dict:
    info: dict = {"presets": {name: {**fn().to_dict(), "parameters": expected_parameter_count(fn())}
                              for name, fn in PRESETS.items()}}
    if args.model:
        model = load_checkpoint(args.model)
        info["model"] = {"spec": spec_of(model),
                         "parameters": count_parameters(model, trainable_only=False),
                         "trainable": count_parameters(model)}
        if isinstance(model, FactorizedClassifier):
            info["model"]["spatial_parameters"] = count_parameters(model.spatial, trainable_only=False)
    elif args.config:
        raw = _read_json_config(args.config)
        spec = normalize_spec(raw) if "kind" in raw else run_config.resolve(raw).model
        model = build_model(spec)
        info["model"] = {"spec": spec, "parameters": count_parameters(model, trainable_only=False),
                         "trainable": count_parameters(model)}
    if args.out:
        _write_json(Path(args.out) / "info.json", info)
    return info


# parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="random seed (overrides MLVC_SEED and the config)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--config", default=None, help="JSON config file")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mlvc", description="Multi-label underwater inspection toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    ds = sub.add_parser("dataset", help="dataset preparation").add_subparsers(dest="action", required=True)
    p = ds.add_parser("synth", parents=[common], help="generate the synthetic dataset")
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--videos", type=int)
    p.set_defaults(func=cmd_dataset_synth)
    p = ds.add_parser("snippets", parents=[common], help="build 7-frame snippets around annotated frames")
    p.add_argument("--root", required=True, help="data root holding one frame directory per video")
    p.add_argument("--annotations", required=True)
    p.add_argument("--train-fraction", type=float, default=0.7)
    p.add_argument("--val-fraction", type=float, default=0.15)
    p.set_defaults(func=cmd_dataset_snippets)
    p = ds.add_parser("dedup", parents=[common], help="drop near-duplicate annotated images")
    p.add_argument("--root", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--model", help="image checkpoint whose class token is the embedding")
    p.add_argument("--normalization", choices=sorted(NORM_PRESETS), default="liaci")
    p.set_defaults(func=cmd_dataset_dedup)

    tr = sub.add_parser("train", help="train a model").add_subparsers(dest="kind", required=True)
    for kind in ("image", "video"):
        p = tr.add_parser(kind, parents=[common], help=f"train an {kind} model" if kind == "image"
                          else "train a video model")
        p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on one split")
    p.add_argument("--model", required=True)
    p.add_argument("--split", default="val", choices=("train", "val", "unused"))
    p.add_argument("--data", default=".", help="data root (ignored when --config is given)")
    p.add_argument("--normalization", choices=sorted(NORM_PRESETS), default="liaci")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("trace", parents=[common], help="per-frame confidence trace of a video")
    p.add_argument("--model", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--mode", choices=("image", "video"), required=True)
    p.add_argument("--normalization", choices=sorted(NORM_PRESETS), default="liaci")
    p.add_argument("--jump-threshold", type=float, default=JUMP_THRESHOLD)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("quality", parents=[common], help="UCIQE/UIQM per frame")
    p.add_argument("--frames", required=True)
    p.set_defaults(func=cmd_quality)

    p = sub.add_parser("info", parents=[common], help="parameter counts of presets or a checkpoint")
    p.add_argument("--model")
    p.set_defaults(func=cmd_info, out=None)
    return parser


def _fail(exc: BaseException, code: int) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc).strip("'\""), "exit_code": code}),
          file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except (CheckpointError, SpecMismatchError) as exc:
        return _fail(exc, EXIT_CHECKPOINT)
    except DivergenceError as exc:
        return _fail(exc, EXIT_DIVERGED)
    except FileNotFoundError as exc:
        return _fail(exc, EXIT_MISSING)
    except (ConfigError, ImageDecodeError, ValueError, KeyError) as exc:
        return _fail(exc, EXIT_CONFIG)
    except Exception as exc:  # noqa: BLE001 - last-resort machine-readable error
        log.info("unexpected error", exc_info=True)
        return _fail(exc, EXIT_ERROR)
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
