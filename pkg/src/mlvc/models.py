"""Model specs as plain dicts, and building models from them.

``{"kind": "image", "vit": {...}}`` or ``{"kind": "video", "video": {...}}``.
"""
from __future__ import annotations

from mlvc.nn import Module
from mlvc.video import VideoModelSpec, build_video_model
from mlvc.vit import PRESETS, ConfigError, VisionTransformer, VitConfig


def resolve_vit(d) -> VitConfig:
    if isinstance(d, VitConfig):
        return d
    if isinstance(d, str):
        if d not in PRESETS:
            raise ConfigError(f"unknown ViT preset {d!r}; choose from {sorted(PRESETS)}")
        return PRESETS[d]()
    d = dict(d)
    preset = d.pop("preset", None)
    base = resolve_vit(preset).to_dict() if preset else {}
    return VitConfig.from_dict({**base, **d})


def normalize_spec(spec: dict) -> dict:
    """Validate and fill every default so the result round-trips through JSON unchanged."""
    kind = spec.get("kind")
    if kind == "image":
        unknown = set(spec) - {"kind", "vit"}
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        return {"kind": "image", "vit": resolve_vit(spec.get("vit", "vit-micro")).to_dict()}
    if kind == "video":
        unknown = set(spec) - {"kind", "video"}
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        video = dict(spec.get("video", {}))
        video["spatial"] = resolve_vit(video.get("spatial", "vit-micro"))
        return {"kind": "video", "video": VideoModelSpec.from_dict(video).to_dict()}
    raise ConfigError(f"model kind must be 'image' or 'video', got {kind!r}")


def video_spec(spec: dict) -> VideoModelSpec:
    return VideoModelSpec.from_dict(normalize_spec(spec)["video"])


def build_model(spec: dict, seed: int = 0, spatial: VisionTransformer | None = None) -> Module:
    spec = normalize_spec(spec)
    if spec["kind"] == "image":
        return VisionTransformer(VitConfig.from_dict(spec["vit"]), seed=seed)
    return build_video_model(VideoModelSpec.from_dict(spec["video"]), seed=seed, spatial=spatial)


def spec_of(model: Module) -> dict:
    if isinstance(model, VisionTransformer):
        return {"kind": "image", "vit": model.cfg.to_dict()}
    return {"kind": "video", "video": model.spec.to_dict()}
