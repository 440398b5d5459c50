"""Resize, normalization and the seeded training augmentations.

Images here are float ``C x H x W`` arrays in [0, 1] unless noted. Every random
choice is drawn once into an :class:`AugmentParams` so the same draw can be
replayed on all seven frames of a snippet.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from mlvc.data.imageio import read_image

LIACI_MEAN = (0.348, 0.369, 0.352)
LIACI_STD = (0.249, 0.244, 0.206)
COCO_MEAN = (0.485, 0.456, 0.406)
COCO_STD = (0.229, 0.224, 0.225)
NORM_PRESETS = {"liaci": (LIACI_MEAN, LIACI_STD), "coco": (COCO_MEAN, COCO_STD)}


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of an ``H x W x C`` array with half-pixel centers (align_corners=False)."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()

    def _coords(n_in, n_out):
        x = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        x = np.clip(x, 0, n_in - 1)
        lo = np.floor(x).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, x - lo

    y0, y1, fy = _coords(h, out_h)
    x0, x1, fx = _coords(w, out_w)
    fx = fx[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    fy = fy[:, None, None]
    return top * (1 - fy) + bottom * fy


def to_unit_chw(image_u8: np.ndarray, size: int) -> np.ndarray:
    """``H x W x 3`` 8-bit image to ``3 x size x size`` float32 in [0, 1]."""
    resized = resize_bilinear(np.asarray(image_u8, dtype=np.float64), size, size) / 255.0
    return np.ascontiguousarray(resized.transpose(2, 0, 1)).astype(np.float32)


def normalize(chw: np.ndarray, mean, std) -> np.ndarray:
    mean = np.asarray(mean, dtype=np.float32).reshape(-1, 1, 1)
    std = np.asarray(std, dtype=np.float32).reshape(-1, 1, 1)
    return ((chw - mean) / std).astype(np.float32)


def preprocess_array(image_u8: np.ndarray, size: int = 224, mean=LIACI_MEAN, std=LIACI_STD) -> np.ndarray:
    return normalize(to_unit_chw(image_u8, size), mean, std)


def load_and_preprocess(path, mean=LIACI_MEAN, std=LIACI_STD, size: int = 224) -> np.ndarray:
    """Decode, resize to ``size`` square, scale to [0, 1], normalize per channel."""
    return preprocess_array(read_image(Path(path)), size, mean, std)


# -- augmentation -----------------------------------------------------------------
@dataclass(frozen=True)
class AugmentConfig:
    flip_p: float = 0.5
    blur_p: float = 0.5
    blur_kernel: tuple = (5, 9)  # (width, height), as torchvision's kernel_size
    blur_sigma: tuple = (0.1, 5.0)
    augmix_p: float = 0.5
    augmix_width: int = 3
    augmix_depth: tuple = (1, 3)
    augmix_severity: int = 3

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(flip_p=0.0, blur_p=0.0, augmix_p=0.0)


AUGMIX_OPS = ("brightness", "contrast", "posterize", "solarize", "translate_x", "translate_y")


@dataclass
class AugmentParams:
    flip: bool = False
    blur_sigma: float | None = None
    augmix: dict | None = field(default=None)


def sample_augment_params(rng: np.random.Generator, cfg: AugmentConfig) -> AugmentParams:
    params = AugmentParams()
    params.flip = bool(rng.random() < cfg.flip_p)
    if rng.random() < cfg.blur_p:
        params.blur_sigma = float(rng.uniform(*cfg.blur_sigma))
    if rng.random() < cfg.augmix_p:
        chains = []
        for _ in range(cfg.augmix_width):
            depth = int(rng.integers(cfg.augmix_depth[0], cfg.augmix_depth[1] + 1))
            chain = []
            for _ in range(depth):
                op = AUGMIX_OPS[int(rng.integers(len(AUGMIX_OPS)))]
                chain.append((op, float(rng.uniform(0.1, 1.0)) * cfg.augmix_severity / 3.0, bool(rng.random() < 0.5)))
            chains.append(chain)
        params.augmix = {"weights": rng.dirichlet([1.0] * cfg.augmix_width).tolist(),
                         "mix": float(rng.beta(1.0, 1.0)), "chains": chains}
    return params


def hflip(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(image[..., ::-1])


def gaussian_kernel1d(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) * 0.5
    x = np.linspace(-half, half, size)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(image: np.ndarray, kernel_wh=(5, 9), sigma: float = 1.0) -> np.ndarray:
    """Separable Gaussian blur with reflect padding; ``kernel_wh`` is (width, height)."""
    kw, kh = kernel_wh
    out = ndimage.correlate1d(image, gaussian_kernel1d(kw, sigma), axis=-1, mode="mirror")
    return ndimage.correlate1d(out, gaussian_kernel1d(kh, sigma), axis=-2, mode="mirror")


def _apply_op(img: np.ndarray, op: str, level: float, sign: bool) -> np.ndarray:
    if op == "brightness":
        return np.clip(img * (1.0 + (0.9 * level if sign else -0.9 * level)), 0.0, 1.0)
    if op == "contrast":
        factor = 1.0 + (0.9 * level if sign else -0.9 * level)
        m = img.mean()
        return np.clip((img - m) * factor + m, 0.0, 1.0)
    if op == "posterize":
        bits = max(1, 8 - int(round(4 * level)))
        q = 2 ** (8 - bits)
        return np.floor(img * 255.0 / q) * q / 255.0
    if op == "solarize":
        thresh = 1.0 - level
        return np.where(img >= thresh, 1.0 - img, img)
    if op in ("translate_x", "translate_y"):
        shift = int(round(level * img.shape[-1] / 3.0)) * (1 if sign else -1)
        axis = -1 if op == "translate_x" else -2
        out = np.roll(img, shift, axis=axis)
        index = [slice(None)] * img.ndim
        index[axis] = slice(0, shift) if shift > 0 else slice(img.shape[axis] + shift, None)
        if shift:
            out[tuple(index)] = 0.0
        return out
    raise ValueError(f"unknown augmix op {op!r}")


def augmix(image: np.ndarray, spec: dict) -> np.ndarray:
    mixed = np.zeros_like(image)
    for weight, chain in zip(spec["weights"], spec["chains"]):
        aug = image
        for op, level, sign in chain:
            aug = _apply_op(aug, op, level, sign)
        mixed += weight * aug
    return (spec["mix"] * image + (1.0 - spec["mix"]) * mixed).astype(image.dtype)


def apply_augment(image: np.ndarray, params: AugmentParams, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Flip, then blur, then AugMix, on a ``C x H x W`` image in [0, 1]."""
    out = image
    if params.flip:
        out = hflip(out)
    if params.blur_sigma is not None:
        out = gaussian_blur(out, cfg.blur_kernel, params.blur_sigma).astype(image.dtype)
    if params.augmix is not None:
        out = augmix(out, params.augmix)
    return out


def augment(image: np.ndarray, seed, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Seeded augmentation of one image; ``seed`` may be an int or a tuple of ints."""
    rng = np.random.default_rng(seed)
    return apply_augment(image, sample_augment_params(rng, cfg), cfg)


def augment_snippet(frames: np.ndarray, seed, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Same augmentation draw applied to every frame of a ``7 x C x H x W`` snippet."""
    params = sample_augment_params(np.random.default_rng(seed), cfg)
    return np.stack([apply_augment(f, params, cfg) for f in frames])
