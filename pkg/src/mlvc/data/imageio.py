"""Image file I/O. Binary PPM (P6) is always available; PNG goes through Pillow when installed."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np


class ImageDecodeError(IOError):
    pass


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    return buf[start:pos], pos


def decode_ppm(buf: bytes, name: str = "<bytes>") -> np.ndarray:
    try:
        magic, pos = _read_token(buf, 0)
        if magic != b"P6":
            raise ImageDecodeError(f"{name}: not a binary PPM (magic {magic!r})")
        width, pos = _read_token(buf, pos)
        height, pos = _read_token(buf, pos)
        maxval, pos = _read_token(buf, pos)
        w, h, mv = int(width), int(height), int(maxval)
    except ValueError as exc:
        raise ImageDecodeError(f"{name}: malformed PPM header") from exc
    if not 0 < mv < 65536 or w <= 0 or h <= 0:
        raise ImageDecodeError(f"{name}: invalid PPM header values {w}x{h} max {mv}")
    pos += 1  # single whitespace byte after maxval
    dtype = np.dtype(">u2") if mv > 255 else np.dtype(np.uint8)
    count = w * h * 3
    if len(buf) - pos < count * dtype.itemsize:
        raise ImageDecodeError(f"{name}: truncated PPM payload")
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
    img = data.reshape(h, w, 3)
    if mv != 255:
        img = np.round(img.astype(np.float64) * 255.0 / mv).astype(np.uint8)
    return img.copy()


def encode_ppm(image: np.ndarray) -> bytes:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got {img.shape}")
    img = np.clip(np.round(img), 0, 255).astype(np.uint8) if img.dtype != np.uint8 else img
    h, w = img.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def read_image(path) -> np.ndarray:
    """Decode an RGB image file into an ``H x W x 3`` uint8 array."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except FileNotFoundError:
        raise FileNotFoundError(f"image not found: {path}") from None
    except OSError as exc:
        raise ImageDecodeError(f"{path}: {exc.strerror or exc}") from exc
    if buf[:2] == b"P6":
        return decode_ppm(buf, str(path))
    if buf[:8] == b"\x89PNG\r\n\x1a\n":
        try:
            from PIL import Image
        except ImportError as exc:
            raise ImageDecodeError(f"{path}: PNG support needs Pillow") from exc
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    raise ImageDecodeError(f"{path}: unrecognized image format")


def write_image(path, image: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_ppm(image))
    os.replace(tmp, path)
