"""No-reference underwater image quality: UCIQE and UIQM.

Inputs are ``H x W x 3`` RGB arrays with 8-bit range (uint8 or float in
[0, 255]). Weighting constants come from the original metric definitions
(Yang & Sowmya for UCIQE; Panetta, Gao & Agaian for UIQM).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

# UCIQE weights: chroma std, luminance contrast, mean saturation.
UCIQE_C1, UCIQE_C2, UCIQE_C3 = 0.4680, 0.2745, 0.2576
# UIQM weights: colorfulness, sharpness, contrast.
UIQM_C1, UIQM_C2, UIQM_C3 = 0.0282, 0.2953, 3.5753
UICM_MEAN_W, UICM_VAR_W = -0.0268, 0.1586
TRIM_ALPHA = 0.1
BLOCK = 8
LUMA = (0.299, 0.587, 0.114)
CHROMA_SCALE = 100.0

# sRGB (D65) to XYZ
_RGB2XYZ = np.array([[0.4124564, 0.3575761, 0.1804375],
                     [0.2126729, 0.7151522, 0.0721750],
                     [0.0193339, 0.1191920, 0.9503041]])
_WHITE_D65 = np.array([0.95047, 1.0, 1.08883])


@dataclass
class QualityScores:
    uciqe: float
    uiqm: float
    uicm: float
    uism: float
    uiconm: float

    def to_dict(self) -> dict:
        return asdict(self)


def _rgb(image) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 RGB image, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("empty image")
    return arr


def rgb_to_lab(image) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """CIE L*a*b* planes of an sRGB image under D65."""
    c = _rgb(image) / 255.0
    linear = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _RGB2XYZ.T / _WHITE_D65
    eps = 216 / 24389
    kappa = 24389 / 27
    f = np.where(xyz > eps, np.cbrt(xyz), (kappa * xyz + 16) / 116)
    L = 116 * f[..., 1] - 16
    # achromatic pixels have a* = b* = 0 exactly; drop matrix round-off
    gray = (c[..., 0] == c[..., 1]) & (c[..., 1] == c[..., 2])
    a = np.where(gray, 0.0, 500 * (f[..., 0] - f[..., 1]))
    b = np.where(gray, 0.0, 200 * (f[..., 1] - f[..., 2]))
    return L, a, b


def rgb_to_hsv(image) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """HSV planes; hue in degrees [0, 360), saturation and value in [0, 1]."""
    c = _rgb(image) / 255.0
    r, g, b = c[..., 0], c[..., 1], c[..., 2]
    v = c.max(axis=-1)
    mn = c.min(axis=-1)
    delta = v - mn
    s = np.where(v > 0, delta / np.where(v > 0, v, 1), 0.0)
    safe = np.where(delta > 0, delta, 1)
    h = np.where(v == r, (g - b) / safe % 6,
                 np.where(v == g, (b - r) / safe + 2, (r - g) / safe + 4)) * 60.0
    h = np.where(delta > 0, h, 0.0) % 360.0
    return h, s, v


def uciqe_components(image) -> tuple[float, float, float]:
    """(chroma std, luminance contrast, mean saturation), each before weighting."""
    L, a, b = rgb_to_lab(image)
    chroma = np.sqrt(a * a + b * b) / CHROMA_SCALE
    sigma_c = float(chroma.std())
    lo, hi = np.percentile(L, [1, 99])
    con_l = float(hi - lo) / 100.0
    _, s, _ = rgb_to_hsv(image)
    return sigma_c, con_l, float(s.mean())


def uciqe(image) -> float:
    sigma_c, con_l, mu_s = uciqe_components(image)
    return UCIQE_C1 * sigma_c + UCIQE_C2 * con_l + UCIQE_C3 * mu_s


def trimmed_stats(values: np.ndarray, alpha: float = TRIM_ALPHA) -> tuple[float, float]:
    """Mean and variance after dropping ``floor(alpha*K)`` samples from each tail."""
    v = np.sort(values, axis=None)
    k = v.size
    lo = int(math.floor(alpha * k))
    hi = int(math.floor(alpha * k))
    kept = v[lo:k - hi]
    mu = kept.sum() / (k - lo - hi)
    var = ((kept - mu) ** 2).sum() / (k - lo - hi)
    return float(mu), float(var)


def uicm(image) -> float:
    c = _rgb(image)
    rg = c[..., 0] - c[..., 1]
    yb = (c[..., 0] + c[..., 1]) / 2 - c[..., 2]
    mu_rg, var_rg = trimmed_stats(rg)
    mu_yb, var_yb = trimmed_stats(yb)
    return UICM_MEAN_W * math.sqrt(mu_rg ** 2 + mu_yb ** 2) + UICM_VAR_W * math.sqrt(var_rg + var_yb)


def _blocks(plane: np.ndarray, size: int = BLOCK) -> np.ndarray:
    """``(K, size*size)`` full blocks; trailing partial blocks are dropped."""
    rows, cols = plane.shape[0] // size, plane.shape[1] // size
    if rows == 0 or cols == 0:
        raise ValueError(f"image {plane.shape} smaller than one {size}x{size} block")
    cropped = plane[:rows * size, :cols * size]
    return cropped.reshape(rows, size, cols, size).transpose(0, 2, 1, 3).reshape(rows * cols, size * size)


def eme(plane: np.ndarray, size: int = BLOCK) -> float:
    """(2/K) * sum ln(max/min) over blocks. A zero max or min is read as 1, so flat blocks add 0."""
    blocks = _blocks(plane, size)
    mx = blocks.max(axis=1)
    mn = blocks.min(axis=1)
    mx = np.where(mx == 0, 1.0, mx)
    mn = np.where(mn == 0, 1.0, mn)
    return float(2.0 / len(blocks) * np.log(mx / mn).sum())


def sobel_magnitude(plane: np.ndarray) -> np.ndarray:
    gx = ndimage.sobel(plane, axis=1, mode="reflect")
    gy = ndimage.sobel(plane, axis=0, mode="reflect")
    return np.hypot(gx, gy)


def uism(image) -> float:
    c = _rgb(image)
    return float(sum(w * eme(sobel_magnitude(c[..., i])) for i, w in enumerate(LUMA)))


def logamee(plane: np.ndarray, size: int = BLOCK) -> float:
    """(1/K) * sum m ln m with Michelson ratio m = (max-min)/(max+min); flat or 0/0 blocks add 0."""
    blocks = _blocks(plane, size)
    mx = blocks.max(axis=1)
    mn = blocks.min(axis=1)
    den = mx + mn
    m = np.zeros_like(mx)
    np.divide(mx - mn, den, out=m, where=den > 0)
    terms = np.zeros_like(m)
    np.multiply(m, np.log(m, out=np.ones_like(m), where=m > 0), out=terms, where=m > 0)
    return float(terms.sum() / len(blocks))


def intensity(image) -> np.ndarray:
    c = _rgb(image)
    return c[..., 0] * LUMA[0] + c[..., 1] * LUMA[1] + c[..., 2] * LUMA[2]


def uiconm(image) -> float:
    return logamee(intensity(image))


def uiqm(image) -> QualityScores:
    c = _rgb(image)
    if c.shape[0] < BLOCK or c.shape[1] < BLOCK:
        raise ValueError(f"image {c.shape[:2]} smaller than one {BLOCK}x{BLOCK} block")
    cm, sm, conm = uicm(c), uism(c), uiconm(c)
    return QualityScores(uciqe=uciqe(c), uiqm=UIQM_C1 * cm + UIQM_C2 * sm + UIQM_C3 * conm,
                         uicm=cm, uism=sm, uiconm=conm)


def quality(image) -> QualityScores:
    return uiqm(image)


def trace_quality(frames) -> list[QualityScores]:
    return [uiqm(f) for f in frames]
