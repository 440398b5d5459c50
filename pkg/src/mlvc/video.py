"""Snippet classifiers: uniform frame sampling, tubelet embedding, factorized space-time.

Snippets are ``(7, 3, H, W)`` arrays (batched: ``(B, 7, 3, H, W)``). All three
families emit logits in the same fixed class order as the image classifier.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from mlvc import tensor as T
from mlvc.nn import Encoder, Linear, Module, Parameter, trunc_normal
from mlvc.tensor import ShapeError, Tensor
from mlvc.vit import ConfigError, VisionTransformer, VitConfig, patchify_array

SNIPPET_LEN = 7
VARIANTS = ("uniform_sampling", "tubelet", "factorized")
POOLS = ("cls", "avg")

TUBELET_NOTE = ("tubelet tokens come from a single learnable 3-D convolution, "
                "not a pretrained 3D ResNet18 feature extractor")
UNIFORM_NOTE = ("uniform frame sampling into a base ViT is the known non-converging variant "
                "(\"did not result in convergence\", loss plateau near 0.44); this run records it, "
                "it does not fix it")


@dataclass(frozen=True)
class VideoModelSpec:
    variant: str = "factorized"
    spatial: VitConfig = field(default_factory=VitConfig)
    temporal_depth: int = 4
    temporal_heads: int | None = None
    temporal_dim: int | None = None
    pool_st: str = "cls"
    pool_tt: str = "cls"
    freeze_spatial: bool = True
    frames: int = SNIPPET_LEN

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown video variant {self.variant!r}; expected one of {VARIANTS}")
        if self.pool_st not in POOLS or self.pool_tt not in POOLS:
            raise ConfigError(f"pooling must be one of {POOLS}, got {self.pool_st!r}/{self.pool_tt!r}")
        if self.frames != SNIPPET_LEN:
            raise ConfigError(f"snippets have exactly {SNIPPET_LEN} frames, got {self.frames}")
        if self.variant == "factorized" and self.temporal_dim is not None and self.temporal_dim != self.spatial.dim:
            raise ConfigError(
                f"factorized model needs temporal_dim == spatial dim ({self.temporal_dim} != {self.spatial.dim})")
        if self.temporal_depth < 0:
            raise ConfigError("temporal_depth must be >= 0")
        heads = self.heads_tt
        if self.spatial.dim % heads:
            raise ConfigError(f"temporal width {self.spatial.dim} not divisible by {heads} heads")

    @property
    def heads_tt(self) -> int:
        return self.temporal_heads or self.spatial.heads

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spatial"] = self.spatial.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VideoModelSpec":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown VideoModelSpec keys: {sorted(unknown)}")
        if isinstance(d.get("spatial"), dict):
            d["spatial"] = VitConfig.from_dict(d["spatial"])
        return cls(**d)


def _as_batch(snippets, frames: int = SNIPPET_LEN) -> np.ndarray:
    data = snippets.data if isinstance(snippets, Tensor) else np.asarray(snippets, dtype=np.float32)
    if data.ndim == 4:
        data = data[None]
    if data.ndim != 5 or data.shape[1] != frames:
        raise ShapeError(f"expected snippets shaped (B, {frames}, C, H, W), got {data.shape}")
    return data


def tokenize_uniform(snippet, patch_h: int = 32, patch_w: int = 56) -> np.ndarray:
    """Per-frame 2-D patches, frame-major then patch-row-major.

    A ``7 x 3 x 224 x 224`` snippet with 32x56 patches gives 7 x 28 = 196 tokens.
    Batched input returns ``(B, tokens, 3*ph*pw)``.
    """
    data = _as_batch(snippet)
    b, f = data.shape[:2]
    patches = patchify_array(data, patch_h, patch_w)  # B, F, N, P
    out = patches.reshape(b, f * patches.shape[2], patches.shape[3])
    return out[0] if np.ndim(snippet) == 4 else out


def tokenize_tubelet(snippet, kernels: Tensor, bias: Tensor | None = None) -> Tensor:
    """3-D patches spanning every frame, one token per spatial cell.

    ``kernels`` is ``dim x 3 x 7 x ph x pw``; the stride equals the kernel so
    tubelets tile the snippet. Returns ``(N, dim)`` or ``(B, N, dim)``.
    """
    single = np.ndim(snippet.data if isinstance(snippet, Tensor) else snippet) == 4
    data = _as_batch(snippet)
    k, c, kt, kh, kw = kernels.shape
    if kt != data.shape[1]:
        raise ShapeError(f"tubelet temporal extent {kt} must equal snippet length {data.shape[1]}")
    if data.shape[3] % kh or data.shape[4] % kw:
        raise ShapeError(f"frame {data.shape[3]}x{data.shape[4]} not tiled by {kh}x{kw} tubelets")
    x = Tensor(np.ascontiguousarray(data.transpose(0, 2, 1, 3, 4)))  # B, C, T, H, W
    out = T.conv3d(x, kernels, stride=(kt, kh, kw), bias=bias)  # B, dim, 1, H', W'
    b = out.shape[0]
    tokens = out.reshape(b, k, out.shape[3] * out.shape[4]).transpose(0, 2, 1)
    return tokens.reshape(tokens.shape[1:]) if single else tokens


class UniformSamplingClassifier(Module):
    """Uniform frame sampling tokens fed straight into a base ViT."""

    def __init__(self, spec: VideoModelSpec, seed: int = 0):
        super().__init__()
        self.spec = spec
        cfg = spec.spatial
        self.vit = VisionTransformer(cfg, seed=seed, num_tokens=spec.frames * cfg.num_patches)

    def forward(self, snippets) -> Tensor:
        cfg = self.spec.spatial
        tokens = tokenize_uniform(_as_batch(snippets), cfg.patch_h, cfg.patch_w)
        feats = self.vit.encode_tokens(Tensor(tokens))
        return self.vit.head(feats[:, 0])


class TubeletClassifier(Module):
    """Learnable 3-D convolution tubelets fed into a base ViT."""

    def __init__(self, spec: VideoModelSpec, seed: int = 0):
        super().__init__()
        self.spec = spec
        cfg = spec.spatial
        rng = np.random.default_rng([seed, 1])
        self.tubelet_weight = Parameter(trunc_normal(rng, (cfg.dim, cfg.channels, spec.frames, cfg.patch_h, cfg.patch_w)))
        self.tubelet_bias = Parameter(np.zeros(cfg.dim))
        self.vit = VisionTransformer(cfg, seed=seed, num_tokens=cfg.num_patches, token_dim=None)

    def forward(self, snippets) -> Tensor:
        tokens = tokenize_tubelet(_as_batch(snippets), self.tubelet_weight, self.tubelet_bias)
        feats = self.vit.encode_tokens(tokens)
        return self.vit.head(feats[:, 0])


class FactorizedClassifier(Module):
    """Per-frame spatial ViT, then a temporal transformer over frame vectors, then an MLP head."""

    def __init__(self, spec: VideoModelSpec, seed: int = 0, spatial: VisionTransformer | None = None):
        super().__init__()
        self.spec = spec
        cfg = spec.spatial
        if spatial is not None and spatial.cfg != cfg:
            raise ConfigError("supplied spatial model does not match spec.spatial")
        self.spatial = spatial if spatial is not None else VisionTransformer(cfg, seed=seed)
        rng = np.random.default_rng([seed, 2])
        dim = cfg.dim
        self.temporal_cls = Parameter(np.zeros((1, 1, dim))) if spec.pool_tt == "cls" else None
        n_pos = spec.frames + (1 if spec.pool_tt == "cls" else 0)
        self.temporal_pos = Parameter(trunc_normal(rng, (1, n_pos, dim)))
        self.temporal = Encoder(dim, spec.temporal_depth, spec.heads_tt, cfg.mlp_ratio, rng, cfg.dropout_p)
        self.head_hidden = Linear(dim, dim, rng)
        self.head_out = Linear(dim, cfg.num_classes, rng)
        if spec.freeze_spatial:
            self.spatial.requires_grad_(False)

    def frame_features(self, snippets) -> Tensor:
        """``(B, 7, dim)`` per-frame vectors pooled per ``pool_st``."""
        data = _as_batch(snippets)
        b, f = data.shape[:2]
        feats = self.spatial.features(data.reshape(b * f, *data.shape[2:]))
        if self.spec.pool_st == "cls":
            pooled = feats[:, 0]
        else:
            pooled = feats[:, 1:].mean(axis=1)
        return pooled.reshape(b, f, -1)

    def temporal_forward(self, frame_tokens: Tensor) -> Tensor:
        b = frame_tokens.shape[0]
        x = frame_tokens
        if self.temporal_cls is not None:
            cls = self.temporal_cls + Tensor(np.zeros((b, 1, x.shape[-1]), dtype=np.float32))
            x = T.concat([cls, x], axis=1)
        x = self.temporal(x + self.temporal_pos)
        return x[:, 0] if self.spec.pool_tt == "cls" else x.mean(axis=1)

    def head(self, pooled: Tensor) -> Tensor:
        return self.head_out(T.gelu(self.head_hidden(pooled)))

    def forward(self, snippets) -> Tensor:
        return self.head(self.temporal_forward(self.frame_features(snippets)))


def build_video_model(spec: VideoModelSpec, seed: int = 0, spatial: VisionTransformer | None = None) -> Module:
    if spec.variant == "uniform_sampling":
        return UniformSamplingClassifier(spec, seed)
    if spec.variant == "tubelet":
        return TubeletClassifier(spec, seed)
    return FactorizedClassifier(spec, seed, spatial=spatial)


def encode_factorized(snippet, model: FactorizedClassifier) -> Tensor:
    if not isinstance(model, FactorizedClassifier):
        raise ConfigError("encode_factorized needs a factorized model")
    logits = model(snippet)
    return logits.reshape(logits.shape[1:]) if np.ndim(snippet) == 4 else logits


def classify_snippet(snippet, spec: VideoModelSpec, model: Module) -> np.ndarray:
    """Sigmoid class scores for one snippet (or a batch)."""
    expected = {"uniform_sampling": UniformSamplingClassifier, "tubelet": TubeletClassifier,
                "factorized": FactorizedClassifier}[spec.variant]
    if not isinstance(model, expected) or model.spec != spec:
        raise ConfigError(f"model {type(model).__name__} does not match variant {spec.variant!r}")
    with T.no_grad():
        logits = model(snippet)
    scores = T.sigmoid(logits).data
    return scores[0] if np.ndim(snippet) == 4 else scores


def head_parameter_names(model: Module) -> list[str]:
    """Names of the classification-head parameters (trainable under partial finetuning)."""
    if isinstance(model, VisionTransformer):
        return model.head_parameter_names()
    if isinstance(model, (UniformSamplingClassifier, TubeletClassifier)):
        return model.vit.head_parameter_names("vit.")
    if isinstance(model, FactorizedClassifier):
        return ["head_hidden.weight", "head_hidden.bias", "head_out.weight", "head_out.bias"]
    raise ConfigError(f"no head defined for {type(model).__name__}")
