"""Vision Transformer image classifier with a multi-label head."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from mlvc import tensor as T
from mlvc.nn import Encoder, Linear, Module, Parameter, trunc_normal
from mlvc.tensor import ShapeError, Tensor

CLASS_NAMES = (
    "anode",
    "bilge_keel",
    "corrosion",
    "defect",
    "marine_growth",
    "over_board_valve",
    "paint_peel",
    "propeller",
    "sea_chest_grating",
)
NUM_CLASSES = len(CLASS_NAMES)


class ConfigError(ValueError):
    """Raised for inconsistent model or run configuration."""


@dataclass(frozen=True)
class VitConfig:
    image_size: int = 64
    patch_h: int = 16
    patch_w: int = 16
    dim: int = 64
    depth: int = 2
    heads: int = 4
    mlp_ratio: float = 4.0
    num_classes: int = NUM_CLASSES
    dropout_p: float = 0.0
    channels: int = 3

    def __post_init__(self):
        if self.image_size % self.patch_h or self.image_size % self.patch_w:
            raise ShapeError(
                f"image size {self.image_size} not divisible by patch {self.patch_h}x{self.patch_w}")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @property
    def grid(self) -> tuple[int, int]:
        return self.image_size // self.patch_h, self.image_size // self.patch_w

    @property
    def num_patches(self) -> int:
        rows, cols = self.grid
        return rows * cols

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch_h * self.patch_w

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "VitConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown VitConfig keys: {sorted(unknown)}")
        return cls(**d)


def vit_b16(num_classes: int = NUM_CLASSES) -> VitConfig:
    return VitConfig(image_size=224, patch_h=16, patch_w=16, dim=768, depth=12, heads=12,
                     mlp_ratio=4.0, num_classes=num_classes)


def vit_micro(num_classes: int = NUM_CLASSES) -> VitConfig:
    return VitConfig(image_size=64, patch_h=16, patch_w=16, dim=64, depth=2, heads=4,
                     mlp_ratio=4.0, num_classes=num_classes)


PRESETS = {"vit-b16": vit_b16, "vit-micro": vit_micro}


def patchify_array(images: np.ndarray, patch_h: int, patch_w: int) -> np.ndarray:
    """Split ``(..., C, H, W)`` into ``(..., N, C*ph*pw)`` patches in row-major patch order."""
    *lead, c, h, w = images.shape
    if h % patch_h or w % patch_w:
        raise ShapeError(f"image {h}x{w} not divisible into {patch_h}x{patch_w} patches")
    rows, cols = h // patch_h, w // patch_w
    x = images.reshape(*lead, c, rows, patch_h, cols, patch_w)
    k = len(lead)
    x = np.moveaxis(x, [k + 1, k + 3], [k, k + 1])  # ..., rows, cols, C, ph, pw
    return np.ascontiguousarray(x).reshape(*lead, rows * cols, c * patch_h * patch_w)


def patchify(image, cfg: VitConfig) -> Tensor:
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    if data.shape[-3:] != (cfg.channels, cfg.image_size, cfg.image_size):
        raise ShapeError(
            f"expected image {cfg.channels}x{cfg.image_size}x{cfg.image_size}, got {data.shape}")
    return Tensor(patchify_array(data, cfg.patch_h, cfg.patch_w))


class VisionTransformer(Module):
    """Class token + learned 1-D positions + pre-norm encoder + linear multi-label head.

    ``num_tokens`` overrides the patch count for video tokenizers that feed
    this backbone directly; ``token_dim=None`` skips the linear patch
    embedding when tokens already arrive at width ``dim``.
    """

    def __init__(self, cfg: VitConfig, seed: int = 0, num_tokens: int | None = None,
                 token_dim: int | None = -1):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.num_tokens = cfg.num_patches if num_tokens is None else num_tokens
        if token_dim == -1:
            token_dim = cfg.patch_dim
        self.patch_embed = Linear(token_dim, cfg.dim, rng) if token_dim is not None else None
        self.cls_token = Parameter(np.zeros((1, 1, cfg.dim)))
        self.pos_embed = Parameter(trunc_normal(rng, (1, 1 + self.num_tokens, cfg.dim)))
        self.encoder = Encoder(cfg.dim, cfg.depth, cfg.heads, cfg.mlp_ratio, rng, cfg.dropout_p)
        self.head = Linear(cfg.dim, cfg.num_classes, rng)

    def head_parameter_names(self, prefix: str = "") -> list[str]:
        return [f"{prefix}head.weight", f"{prefix}head.bias"]

    def embed(self, tokens: Tensor) -> Tensor:
        """``(B, N, token_dim)`` raw tokens to ``(B, 1+N, dim)`` with class token and positions."""
        b, n = tokens.shape[0], tokens.shape[1]
        if n != self.num_tokens:
            raise ShapeError(f"expected {self.num_tokens} tokens, got {n}")
        x = self.patch_embed(tokens) if self.patch_embed is not None else tokens
        cls = self.cls_token + T.Tensor(np.zeros((b, 1, self.cfg.dim), dtype=np.float32))
        x = T.concat([cls, x], axis=1)
        return x + self.pos_embed

    def encode_tokens(self, tokens: Tensor) -> Tensor:
        return self.encoder(self.embed(tokens))

    def features(self, images) -> Tensor:
        """Encoded token sequence ``(B, 1+N, dim)`` for a batch of images."""
        data = images.data if isinstance(images, Tensor) else np.asarray(images, dtype=np.float32)
        if data.ndim == 3:
            data = data[None]
        if data.shape[1] != self.cfg.channels:
            raise ShapeError(f"expected {self.cfg.channels} channels, got shape {data.shape}")
        if data.shape[2:] != (self.cfg.image_size, self.cfg.image_size):
            raise ShapeError(f"expected {self.cfg.image_size}x{self.cfg.image_size} images, got {data.shape}")
        return self.encode_tokens(Tensor(patchify_array(data, self.cfg.patch_h, self.cfg.patch_w)))

    def forward(self, images) -> Tensor:
        return self.head(self.features(images)[:, 0])


def encode(tokens: Tensor, encoder: Encoder) -> Tensor:
    """Run an already-embedded token sequence through an encoder stack."""
    squeeze = tokens.ndim == 2
    x = tokens.reshape(1, *tokens.shape) if squeeze else tokens
    out = encoder(x)
    return out.reshape(out.shape[1:]) if squeeze else out


def classify_image(image, model: VisionTransformer) -> Tensor:
    """Logits of length ``num_classes`` for a single ``3 x H x W`` image."""
    data = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float32)
    if data.ndim != 3:
        raise ShapeError(f"expected a single 3-D image, got shape {data.shape}")
    logits = model(data[None])
    return logits.reshape(logits.shape[1:])


def expected_parameter_count(cfg: VitConfig) -> int:
    """Closed-form trainable parameter count of :class:`VisionTransformer`."""
    d = cfg.dim
    hidden = int(d * cfg.mlp_ratio)
    block = 2 * (2 * d) + (d * 3 * d + 3 * d) + (d * d + d) + (d * hidden + hidden) + (hidden * d + d)
    return (cfg.patch_dim * d + d) + d + (1 + cfg.num_patches) * d + cfg.depth * block + 2 * d \
        + d * cfg.num_classes + cfg.num_classes
