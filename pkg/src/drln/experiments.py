"""Desk-scale learning experiment: overfit fixed patches, then compare with bicubic on held-out textures."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .arch import NetworkConfig, build_network
from .config import desk_train_config
from .degradation import bicubic_resize
from .engine import Tensor, no_grad
from .imageio import from_nchw, quantize, to_nchw
from .metrics import psnr, rgb_to_y
from .synthetic import texture
from .trainer import TrainConfig, TrainingPair, train


@dataclass
class DeskExperiment:
    scale: int = 2
    n_patches: int = 8
    # HR side of each fixed training patch; the sampler crops lr_patch windows from it
    patch_size: int = 64
    patch_seed0: int = 100
    heldout_seed0: int = 900
    n_heldout: int = 5
    heldout_size: int = 64
    net_seed: int = 1
    train: TrainConfig = field(default_factory=desk_train_config)
    # loss level that counts as "reached"; averaged over a trailing window to ignore single lucky batches
    target_l1: float = 0.01
    window: int = 20


@dataclass
class DeskResult:
    trace: list
    reached_at: int | None
    train_seconds: float
    bicubic_psnr: list[float]
    model_psnr: list[float]

    @property
    def gain_db(self) -> float:
        return float(np.mean(self.model_psnr) - np.mean(self.bicubic_psnr))


def bi_pair(hr: np.ndarray, scale: int) -> tuple[np.ndarray, np.ndarray]:
    hr = quantize(hr)
    return hr, quantize(bicubic_resize(hr, scale, "down"))


def fixed_patches(exp: DeskExperiment) -> list[TrainingPair]:
    """``n_patches`` fixed textures of side ``patch_size``; training crops windows from these only."""
    side = exp.patch_size
    pairs = []
    for i in range(exp.n_patches):
        hr, lr = bi_pair(texture(side, seed=exp.patch_seed0 + i), exp.scale)
        pairs.append(TrainingPair(f"patch{i}", lr.astype(np.float32), hr.astype(np.float32)))
    return pairs


def heldout_psnr(net, exp: DeskExperiment) -> tuple[list[float], list[float]]:
    bic, model = [], []
    for j in range(exp.n_heldout):
        hr, lr = bi_pair(texture(exp.heldout_size, seed=exp.heldout_seed0 + j), exp.scale)
        up = quantize(bicubic_resize(lr, exp.scale, "up"))
        with no_grad():
            sr = quantize(from_nchw(net(Tensor(to_nchw(lr))).data))
        bic.append(psnr(rgb_to_y(hr), rgb_to_y(up), exp.scale))
        model.append(psnr(rgb_to_y(hr), rgb_to_y(sr), exp.scale))
    return bic, model


def run_desk_experiment(exp: DeskExperiment | None = None) -> DeskResult:
    exp = exp or DeskExperiment()
    net = build_network(NetworkConfig.desk(exp.scale), seed=exp.net_seed)
    pairs = fixed_patches(exp)
    t0 = time.perf_counter()
    _, trace = train(net, pairs, exp.train)
    seconds = time.perf_counter() - t0
    losses = np.array([loss for _, loss, _ in trace])
    reached = None
    if len(losses) >= exp.window:
        smooth = np.convolve(losses, np.ones(exp.window) / exp.window, mode="valid")
        hits = np.nonzero(smooth < exp.target_l1)[0]
        if hits.size:
            reached = int(hits[0] + exp.window)
    bic, model = heldout_psnr(net, exp)
    return DeskResult(trace, reached, seconds, bic, model)
