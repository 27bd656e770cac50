"""Procedural RGB textures for desk-scale experiments (no dataset download needed)."""

from __future__ import annotations

import numpy as np


def texture(size: int | tuple[int, int], seed: int, n_gratings: int = 3, n_shapes: int = 6) -> np.ndarray:
    """Smooth oriented gratings overlaid with hard-edged rectangles and discs, values in [0, 1]."""
    h, w = (size, size) if isinstance(size, int) else size
    rng = np.random.Generator(np.random.PCG64(seed))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.empty((h, w, 3))
    img[:] = rng.uniform(0.2, 0.8, size=3)
    for _ in range(n_gratings):
        theta = rng.uniform(0, np.pi)
        period = rng.uniform(6.0, 24.0)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period + phase)
        img += 0.12 * wave[..., None] * rng.uniform(-1, 1, size=3)
    for _ in range(n_shapes):
        color = rng.uniform(0, 1, size=3)
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        if rng.random() < 0.5:
            hh, hw = rng.uniform(2, h / 3), rng.uniform(2, w / 3)
            mask = (np.abs(yy - cy) < hh) & (np.abs(xx - cx) < hw)
        else:
            r = rng.uniform(2, min(h, w) / 4)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        alpha = rng.uniform(0.5, 1.0)
        img[mask] = (1 - alpha) * img[mask] + alpha * color
    return np.clip(img, 0.0, 1.0)
