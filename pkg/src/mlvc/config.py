"""Run configuration: one JSON document covering model, training, data and seed."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from mlvc.data.transforms import NORM_PRESETS, AugmentConfig
from mlvc.models import normalize_spec
from mlvc.trainer import TrainConfig
from mlvc.vit import ConfigError

SEED_ENV = "MLVC_SEED"

DATA_KEYS = {"root", "annotations", "snippets", "splits", "normalization", "augment"}
INIT_KEYS = {"checkpoint", "spatial_checkpoint"}
TOP_KEYS = {"seed", "model", "train", "data", "init"}


@dataclass
class RunConfig:
    seed: int = 0
    model: dict = field(default_factory=lambda: {"kind": "image", "vit": "vit-micro"})
    train: TrainConfig = field(default_factory=TrainConfig)
    data: dict = field(default_factory=dict)
    init: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "model": self.model, "train": self.train.to_dict(),
                "data": self.data, "init": self.init}

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    @property
    def mean_std(self):
        norm = self.data["normalization"]
        if isinstance(norm, str):
            return NORM_PRESETS[norm]
        return tuple(norm["mean"]), tuple(norm["std"])

    @property
    def augment_config(self) -> AugmentConfig | None:
        aug = self.data["augment"]
        if aug is False:
            return None
        if aug is True:
            return AugmentConfig()
        return AugmentConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in aug.items()})


def _resolve_path(value, base: Path | None):
    if value is None:
        return None
    p = Path(value)
    if not p.is_absolute() and base is not None:
        p = base / p
    return str(p)


def resolve(raw: dict, base_dir=None, seed_override: int | None = None) -> RunConfig:
    """Validate a raw config dict and materialize every default.

    Unknown keys anywhere raise :class:`ConfigError`. Relative paths are taken
    relative to ``base_dir`` (normally the config file's directory).
    """
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    base = Path(base_dir) if base_dir is not None else None
    seed = int(raw.get("seed", 0)) if seed_override is None else int(seed_override)

    model = normalize_spec(raw.get("model", {"kind": "image", "vit": "vit-micro"}))

    train_raw = dict(raw.get("train", {}))
    train_raw.setdefault("seed", seed)
    if seed_override is not None:
        train_raw["seed"] = seed
    train = TrainConfig.from_dict(train_raw)

    data_raw = dict(raw.get("data", {}))
    unknown = set(data_raw) - DATA_KEYS
    if unknown:
        raise ConfigError(f"unknown data keys: {sorted(unknown)}")
    root = _resolve_path(data_raw.get("root", "."), base)
    data = {
        "root": root,
        "annotations": _resolve_path(data_raw.get("annotations", "annotations.csv"), Path(root)),
        "snippets": _resolve_path(data_raw.get("snippets", "snippets.jsonl"), Path(root)),
        "splits": _resolve_path(data_raw.get("splits", "splits.json"), Path(root)),
        "normalization": data_raw.get("normalization", "liaci"),
        "augment": data_raw.get("augment", False),
    }
    norm = data["normalization"]
    if isinstance(norm, str):
        if norm not in NORM_PRESETS:
            raise ConfigError(f"unknown normalization preset {norm!r}; choose from {sorted(NORM_PRESETS)}")
    elif not (isinstance(norm, dict) and set(norm) == {"mean", "std"}
              and len(norm["mean"]) == 3 and len(norm["std"]) == 3):
        raise ConfigError("normalization must be a preset name or {mean: [3], std: [3]}")
    aug = data["augment"]
    if isinstance(aug, dict):
        unknown = set(aug) - set(AugmentConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown augment keys: {sorted(unknown)}")
        aug = {**asdict(AugmentConfig()), **aug}
        data["augment"] = {k: list(v) if isinstance(v, tuple) else v for k, v in aug.items()}
    elif not isinstance(aug, bool):
        raise ConfigError("augment must be true, false or an object of augmentation settings")

    init_raw = dict(raw.get("init", {}))
    unknown = set(init_raw) - INIT_KEYS
    if unknown:
        raise ConfigError(f"unknown init keys: {sorted(unknown)}")
    init = {k: _resolve_path(init_raw.get(k), base) for k in sorted(INIT_KEYS)}
    return RunConfig(seed, model, train, data, init)


def load(path, seed_override: int | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    return resolve(raw, path.parent, seed_override)


def env_seed() -> int | None:
    value = os.environ.get(SEED_ENV)
    if value is None or value == "":
        return None
    try:
        return int(value)
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {value!r}") from exc
