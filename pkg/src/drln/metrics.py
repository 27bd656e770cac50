"""Y-channel PSNR / SSIM evaluation and report emission."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.signal import convolve2d

from .degradation import PairRow, read_manifest
from .imageio import ImageFormatError, modcrop, quantize, read_png

SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_WINDOW, SSIM_SIGMA = 11, 1.5


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """ITU-R BT.601 luma of an RGB image in [0, 1], studio range [16/255, 235/255]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"rgb_to_y needs an (H, W, 3) image, got {img.shape}")
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    return ((65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0)[..., None]


def _shave(a: np.ndarray, shave: int) -> np.ndarray:
    return a[shave : a.shape[0] - shave, shave : a.shape[1] - shave] if shave else a


def psnr(a: np.ndarray, b: np.ndarray, shave: int = 0) -> float:
    """PSNR in dB for [0, 1] data; identical crops give ``inf``."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    if 2 * shave >= min(a.shape[:2]):
        raise ValueError(f"psnr: shave {shave} leaves nothing of a {a.shape[:2]} image")
    mse = np.mean((_shave(a, shave) - _shave(b, shave)) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    t = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(t ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over all fully-contained 11x11 Gaussian windows, dynamic range 1."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.ndim == 3:
        if a.shape[2] != 1:
            raise ValueError("ssim expects single-channel images")
        a = a[..., 0]
    if b.ndim == 3:
        b = b[..., 0]
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"ssim: image {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    win = gaussian_window()
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2

    def filt(x):
        return convolve2d(x, win, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    smap = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return float(smap.mean())


# ---------------------------------------------------------------------------
# evaluation protocol


@dataclass
class EvalRow:
    name: str
    psnr_db: float
    ssim: float
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class EvalReport:
    rows: list[EvalRow]
    scale: int
    shave: int
    channel_mode: str = "Y (BT.601, from 8-bit RGB)"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: r.name)

    @property
    def good_rows(self) -> list[EvalRow]:
        return [r for r in self.rows if r.ok]

    @property
    def failed_rows(self) -> list[EvalRow]:
        return [r for r in self.rows if not r.ok]

    @property
    def mean_psnr(self) -> float:
        good = self.good_rows
        return float(np.mean([r.psnr_db for r in good])) if good else math.nan

    @property
    def mean_ssim(self) -> float:
        good = self.good_rows
        return float(np.mean([r.ssim for r in good])) if good else math.nan

    def to_text(self) -> str:
        width = max([len(r.name) for r in self.rows] + [7])
        lines = [f"# scale x{self.scale}, shave {self.shave}px, channel {self.channel_mode}"]
        lines.append(f"{'name':<{width}}  {'PSNR(dB)':>9}  {'SSIM':>7}")
        for r in self.rows:
            if r.ok:
                lines.append(f"{r.name:<{width}}  {_fmt_psnr(r.psnr_db):>9}  {r.ssim:>7.4f}")
            else:
                lines.append(f"{r.name:<{width}}  {'FAILED':>9}  {'':>7}  {r.error}")
        lines.append(f"{'mean':<{width}}  {_fmt_psnr(self.mean_psnr):>9}  {self.mean_ssim:>7.4f}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "psnr_db", "ssim"])
        for r in self.good_rows:
            w.writerow([r.name, _fmt_psnr(r.psnr_db, 6), f"{r.ssim:.6f}"])
        return buf.getvalue()


def _fmt_psnr(v: float, digits: int = 2) -> str:
    if math.isinf(v):
        return "inf"
    if math.isnan(v):
        return "nan"
    return f"{v:.{digits}f}"


def evaluate_pair(hr: np.ndarray, sr: np.ndarray, shave: int) -> tuple[float, float]:
    """PSNR/SSIM on the luminance of 8-bit-quantized images after shaving ``shave`` pixels."""
    hr, sr = quantize(hr), quantize(sr)
    if hr.shape != sr.shape:
        raise ValueError(f"HR {hr.shape} and SR {sr.shape} differ in shape")
    if hr.shape[2] == 3:
        hr, sr = rgb_to_y(hr), rgb_to_y(sr)
    return psnr(hr, sr, shave), ssim(_shave(hr, shave), _shave(sr, shave))


def evaluate(rows: list[PairRow], sr_dir, scale: int, shave: Optional[int] = None, workers: int = 1) -> EvalReport:
    """Score ``sr_dir/<hr name>`` against every manifest row's HR image."""
    shave = scale if shave is None else shave
    sr_dir = Path(sr_dir)

    def job(row: PairRow) -> EvalRow:
        sr_path = sr_dir / row.name
        if not sr_path.exists():
            return EvalRow(row.name, math.nan, math.nan, f"missing SR image {sr_path}")
        try:
            hr = modcrop(read_png(row.hr_path), scale)
            sr = read_png(sr_path)
            p, s = evaluate_pair(hr, sr, shave)
        except (OSError, ImageFormatError, ValueError) as exc:
            return EvalRow(row.name, math.nan, math.nan, str(exc))
        return EvalRow(row.name, p, s)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(job, rows))
    return EvalReport(results, scale, shave)


def evaluate_manifest(manifest, sr_dir, scale: int, **kw) -> EvalReport:
    return evaluate(read_manifest(manifest), sr_dir, scale, **kw)
