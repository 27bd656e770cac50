"""LR image synthesis: bicubic (BI), blur-downscale (BD) and noisy-downscale (ND).

The resize follows the convention of the standard SR benchmark scripts: a
cubic kernel with a = -0.5, widened by 1/scale when shrinking (antialiasing),
weights renormalised per output sample. Borders replicate the edge pixel.
"""

from __future__ import annotations

import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .imageio import ImageFormatError, modcrop, quantize, read_png, write_png

log = logging.getLogger(__name__)

BD_VARIANCE = 1.6
PAPER_NOISE_LEVELS = (10, 15, 20, 25)
KINDS = ("BI", "BD", "ND")


@dataclass(frozen=True)
class DegradationSpec:
    kind: str = "BI"
    scale: int = 4
    sigma_noise: float = 0.0
    blur_variance: float = BD_VARIANCE
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", self.kind.upper())
        if self.kind not in KINDS:
            raise ValueError(f"unknown degradation kind {self.kind!r}")
        if self.scale not in (2, 3, 4, 8):
            raise ValueError(f"scale must be one of 2, 3, 4, 8 (got {self.scale})")
        if not 0 <= self.sigma_noise <= 255:
            raise ValueError("sigma_noise must lie in [0, 255]")

    def protocol_warnings(self) -> list[str]:
        msgs = []
        if self.kind == "BD" and self.scale != 3:
            msgs.append(f"BD protocol is defined for x3 only; running x{self.scale} anyway")
        if self.kind == "ND" and self.sigma_noise not in PAPER_NOISE_LEVELS:
            msgs.append(f"ND sigma {self.sigma_noise:g} is not one of the benchmark levels {PAPER_NOISE_LEVELS}")
        return msgs


# ---------------------------------------------------------------------------
# bicubic resampling


def cubic(x):
    """Keys cubic convolution kernel with a = -0.5."""
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    return ((1.5 * ax3 - 2.5 * ax2 + 1) * (ax <= 1)
            + (-0.5 * ax3 + 2.5 * ax2 - 4 * ax + 2) * ((ax > 1) & (ax <= 2)))


def resize_weights(in_len: int, out_len: int, scale: float, antialias: bool = True):
    """Per-output (indices, weights) for one axis; indices are 0-based and edge-clamped."""
    kernel_width = 4.0
    if scale < 1 and antialias:
        def kernel(v):
            return scale * cubic(scale * v)
        kernel_width = kernel_width / scale
    else:
        kernel = cubic
    x = np.arange(1, out_len + 1, dtype=np.float64)
    u = x / scale + 0.5 * (1 - 1 / scale)
    left = np.floor(u - kernel_width / 2)
    taps = int(math.ceil(kernel_width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    wts = kernel(u[:, None] - idx)
    wts = wts / wts.sum(axis=1, keepdims=True)
    keep = np.any(wts != 0, axis=0)
    idx, wts = idx[:, keep], wts[:, keep]
    idx = np.clip(idx, 1, in_len).astype(np.int64) - 1
    return idx, wts


def _resize_axis(img: np.ndarray, axis: int, out_len: int, scale: float) -> np.ndarray:
    idx, wts = resize_weights(img.shape[axis], out_len, scale)
    moved = np.moveaxis(img, axis, 0)
    out = np.zeros((out_len,) + moved.shape[1:], dtype=np.float64)
    for k in range(idx.shape[1]):
        out += wts[:, k].reshape((-1,) + (1,) * (moved.ndim - 1)) * moved[idx[:, k]]
    return np.moveaxis(out, 0, axis)


def bicubic_resize(img: np.ndarray, factor: Union[int, float, Fraction] = 2, direction: str = "down",
                   output_shape: Optional[tuple[int, int]] = None) -> np.ndarray:
    """Resize an (H, W[, C]) float image by ``factor`` up or down.

    Output extents are ceil(H * scale) where scale = factor (up) or 1/factor (down),
    unless ``output_shape`` is given.
    """
    factor = Fraction(factor).limit_denominator(10_000)
    if factor <= 0:
        raise ValueError("resize factor must be positive")
    if direction not in ("up", "down"):
        raise ValueError("direction must be 'up' or 'down'")
    scale = factor if direction == "up" else 1 / factor
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if output_shape is None:
        output_shape = (math.ceil(h * scale), math.ceil(w * scale))
    oh, ow = output_shape
    if oh < 1 or ow < 1:
        raise ValueError(f"degenerate resize output {output_shape} for input {(h, w)}")
    if factor == 1 and (oh, ow) == (h, w):
        return img.copy()
    out = _resize_axis(img, 0, oh, float(scale))
    return _resize_axis(out, 1, ow, float(scale))


# ---------------------------------------------------------------------------
# blur / noise


def gaussian_kernel(variance: float = BD_VARIANCE) -> np.ndarray:
    """Normalised 2-D Gaussian with radius ceil(3 sigma)."""
    sigma = math.sqrt(variance)
    radius = int(math.ceil(3 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(t[:, None] ** 2 + t[None, :] ** 2) / (2 * variance))
    return g / g.sum()


def gaussian_blur(img: np.ndarray, variance: float = BD_VARIANCE) -> np.ndarray:
    k = gaussian_kernel(variance)
    r = k.shape[0] // 2
    pad = [(r, r), (r, r)] + [(0, 0)] * (img.ndim - 2)
    padded = np.pad(np.asarray(img, dtype=np.float64), pad, mode="edge")
    h, w = img.shape[:2]
    out = np.zeros(img.shape, dtype=np.float64)
    for i in range(k.shape[0]):
        for j in range(k.shape[1]):
            out += k[i, j] * padded[i : i + h, j : j + w]
    return out


def blur_downsample(img: np.ndarray, scale: int = 3, variance: float = BD_VARIANCE) -> np.ndarray:
    return bicubic_resize(gaussian_blur(img, variance), scale, "down")


def gaussian_noise(shape, sigma: float, seed: int) -> np.ndarray:
    """i.i.d. N(0, (sigma/255)^2) samples in [0, 1] image units."""
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.normal(0.0, sigma / 255.0, size=shape)


def noisy_downsample(img: np.ndarray, scale: int, sigma: float, seed: int) -> np.ndarray:
    """Bicubic downscale, then additive Gaussian noise on the LR image, clamped to [0, 1]."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    lr = bicubic_resize(img, scale, "down")
    if sigma == 0:
        return lr
    return np.clip(lr + gaussian_noise(lr.shape, sigma, seed), 0.0, 1.0)


def degrade(img: np.ndarray, spec: DegradationSpec, seed: Optional[int] = None) -> np.ndarray:
    if spec.kind == "BI":
        return bicubic_resize(img, spec.scale, "down")
    if spec.kind == "BD":
        return blur_downsample(img, spec.scale, spec.blur_variance)
    return noisy_downsample(img, spec.scale, spec.sigma_noise, spec.rng_seed if seed is None else seed)


# ---------------------------------------------------------------------------
# dataset ingestion


@dataclass(frozen=True)
class PairRow:
    hr_path: Path
    lr_path: Path
    kind: str
    scale: int
    sigma: float
    seed: int

    @property
    def name(self) -> str:
        return self.hr_path.name


def image_seed(seed: int, index: int) -> int:
    """Per-image noise seed so every file gets an independent stream."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def write_manifest(path, rows: list[PairRow], skipped: list[tuple[str, str]] = ()) -> None:
    base = Path(path).parent
    lines = []
    for r in rows:
        lines.append("\t".join([os.path.relpath(r.hr_path, base), os.path.relpath(r.lr_path, base),
                                r.kind, str(r.scale), f"{r.sigma:g}", str(r.seed)]))
    for name, reason in skipped:
        lines.append(f"# skipped\t{name}\t{reason}")
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_manifest(path) -> list[PairRow]:
    base = Path(path).parent
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 6:
            raise ValueError(f"{path}:{lineno}: expected 6 tab-separated fields, got {len(parts)}")
        hr, lr, kind, scale, sigma, seed = parts
        rows.append(PairRow(base / hr, base / lr, kind, int(scale), float(sigma), int(seed)))
    return rows


def make_pairs(hr_dir, spec: DegradationSpec, out_dir, workers: int = 1) -> Path:
    """Modulo-crop every PNG in ``hr_dir``, degrade it, and write ``out_dir/manifest.tsv``.

    Cropped HR copies go to ``out_dir/hr`` and LR images to ``out_dir/lr``, both
    keeping the source file name. Unreadable files are skipped and recorded.
    """
    for msg in spec.protocol_warnings():
        warnings.warn(msg, stacklevel=2)
    hr_dir, out_dir = Path(hr_dir), Path(out_dir)
    files = sorted(p for p in hr_dir.iterdir() if p.is_file() and p.suffix.lower() == ".png")
    out_dir.mkdir(parents=True, exist_ok=True)

    def job(item):
        index, path = item
        try:
            hr = modcrop(read_png(path), spec.scale)
        except (OSError, ImageFormatError) as exc:
            return path.name, None, str(exc)
        if hr.shape[0] < spec.scale or hr.shape[1] < spec.scale:
            return path.name, None, "image smaller than the scale factor"
        seed = image_seed(spec.rng_seed, index) if spec.kind == "ND" else spec.rng_seed
        lr = quantize(degrade(hr, spec, seed))
        hr_out, lr_out = out_dir / "hr" / path.name, out_dir / "lr" / path.name
        write_png(hr_out, hr)
        write_png(lr_out, lr)
        return path.name, PairRow(hr_out, lr_out, spec.kind, spec.scale, spec.sigma_noise, spec.rng_seed), None

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(job, enumerate(files)))
    rows, skipped = [], []
    for name, row, err in results:
        if row is None:
            log.warning("skipping %s: %s", name, err)
            skipped.append((name, err))
        else:
            rows.append(row)
    manifest = out_dir / "manifest.tsv"
    write_manifest(manifest, rows, skipped)
    return manifest
