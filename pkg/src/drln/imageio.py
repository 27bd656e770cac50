"""8-bit PNG I/O and conversions between HxWxC float images and NCHW tensors.

Working images are float64 arrays of shape (H, W, C) with values in [0, 1].
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image as PILImage


class ImageFormatError(ValueError):
    pass


def from_uint8(a: np.ndarray) -> np.ndarray:
    return a.astype(np.float64) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Round to the nearest 8-bit level; values outside [0, 1] are clipped."""
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def quantize(img: np.ndarray) -> np.ndarray:
    return from_uint8(to_uint8(img))


def read_png(path) -> np.ndarray:
    path = Path(path)
    with PILImage.open(path) as im:
        if im.format != "PNG":
            raise ImageFormatError(f"{path}: not a PNG file ({im.format})")
        if im.mode in ("I", "I;16", "I;16B", "I;16L", "F"):
            raise ImageFormatError(f"{path}: 16-bit/float PNGs are not supported (mode {im.mode})")
        if im.mode == "L":
            a = np.asarray(im, dtype=np.uint8)[:, :, None]
        else:
            a = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return from_uint8(a)


def write_png(path, img: np.ndarray) -> None:
    a = to_uint8(img)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    mode = "L" if a.ndim == 2 else "RGB"
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(a, mode=mode).save(path, format="PNG", optimize=False, compress_level=6)


def to_nchw(img: np.ndarray, dtype=np.float32) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(img).transpose(2, 0, 1)[None]).astype(dtype)


def from_nchw(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a)[0].transpose(1, 2, 0)).astype(np.float64)


def modcrop(img: np.ndarray, scale: int) -> np.ndarray:
    h, w = img.shape[:2]
    return img[: h - h % scale, : w - w % scale]
