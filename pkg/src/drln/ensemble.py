"""The eight dihedral transforms of the square and the geometric self-ensemble."""

from __future__ import annotations

from typing import Callable

import numpy as np

N_TRANSFORMS = 8


def dihedral(a: np.ndarray, k: int, axes: tuple[int, int] = (0, 1)) -> np.ndarray:
    """Element ``k`` of D4: rotate by 90*(k % 4) degrees, transposing first when k >= 4."""
    if not 0 <= k < N_TRANSFORMS:
        raise ValueError(f"transform id must be in 0..7, got {k}")
    if k >= 4:
        a = np.swapaxes(a, *axes)
    return np.rot90(a, k % 4, axes=axes)


def inverse_dihedral(a: np.ndarray, k: int, axes: tuple[int, int] = (0, 1)) -> np.ndarray:
    if not 0 <= k < N_TRANSFORMS:
        raise ValueError(f"transform id must be in 0..7, got {k}")
    a = np.rot90(a, -(k % 4), axes=axes)
    if k >= 4:
        a = np.swapaxes(a, *axes)
    return a


def self_ensemble(model: Callable[[np.ndarray], np.ndarray], img: np.ndarray) -> np.ndarray:
    """Average of inverse-transformed model outputs over all eight transforms of ``img``.

    ``model`` maps an (H, W, C) float image to its super-resolved version; the
    average is taken in real-valued space, before any quantization.
    """
    outs = [inverse_dihedral(model(np.ascontiguousarray(dihedral(img, k))), k).astype(np.float64)
            for k in range(N_TRANSFORMS)]
    # pairwise sums: eight equal terms add up exactly, so an equivariant model is reproduced bit for bit
    while len(outs) > 1:
        outs = [outs[i] + outs[i + 1] for i in range(0, len(outs), 2)]
    return outs[0] / N_TRANSFORMS
