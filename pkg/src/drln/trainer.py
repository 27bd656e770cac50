"""Patch sampling, Adam, step-decay schedule and the L1 training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .arch import Network
from .checkpoint import Checkpoint
from .degradation import PairRow
from .engine import Tensor, backward, l1_loss
from .ensemble import N_TRANSFORMS, dihedral
from .imageio import modcrop, read_png, to_nchw

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr_patch: int = 48
    lr0: float = 1e-4
    halve_every: int = 200_000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_steps: int = 1000
    seed: int = 0
    checkpoint_every: int = 0
    augment: bool = True

    def validate(self) -> None:
        if self.batch_size < 1 or self.lr_patch < 1 or self.halve_every < 1:
            raise ValueError("batch_size, lr_patch and halve_every must be positive")
        if not (self.lr0 > 0 and self.eps > 0 and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("learning rate / Adam constants out of range")
        if self.max_steps < 0 or self.checkpoint_every < 0:
            raise ValueError("max_steps and checkpoint_every must be non-negative")

    def to_items(self) -> list[tuple[str, str]]:
        return [(f.name, repr(getattr(self, f.name))) for f in fields(self)]

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "TrainConfig":
        kw = {}
        for f in fields(cls):
            if f.name in items:
                raw = items[f.name]
                if f.type in ("bool", bool):
                    kw[f.name] = raw in ("True", "true", "1", "yes")
                elif f.type in ("float", float):
                    kw[f.name] = float(raw)
                else:
                    kw[f.name] = int(raw)
        return cls(**kw)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float, checkpoint: Optional[Path]):
        super().__init__(f"non-finite loss {loss} at step {step}; diagnostic checkpoint: {checkpoint}")
        self.step, self.loss, self.checkpoint = step, loss, checkpoint


def lr_at(step: int, cfg: TrainConfig) -> float:
    """lr0 halved once every ``halve_every`` steps."""
    if step < 0:
        raise ValueError("step must be non-negative")
    return cfg.lr0 * 0.5 ** (step // cfg.halve_every)


# ---------------------------------------------------------------------------
# data


@dataclass
class TrainingPair:
    name: str
    lr: np.ndarray  # (h, w, C) float32
    hr: np.ndarray  # (h*scale, w*scale, C) float32


def load_pairs(rows: Sequence[PairRow], scale: int) -> list[TrainingPair]:
    pairs = []
    for row in rows:
        lr = read_png(row.lr_path).astype(np.float32)
        hr = modcrop(read_png(row.hr_path), scale).astype(np.float32)
        if hr.shape[:2] != (lr.shape[0] * scale, lr.shape[1] * scale):
            raise ValueError(f"{row.name}: HR {hr.shape[:2]} is not x{scale} of LR {lr.shape[:2]}")
        pairs.append(TrainingPair(row.name, lr, hr))
    return pairs


def batch_rng(seed: int, step: int) -> np.random.Generator:
    """Sampler stream for one step; batches depend only on (seed, step)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, step])))


def sample_batch(pairs: Sequence[TrainingPair], cfg: TrainConfig, rng: np.random.Generator,
                 scale: int) -> tuple[np.ndarray, np.ndarray]:
    """Aligned (LR, HR) NCHW patch batches with a shared random dihedral transform per pair."""
    if not pairs:
        raise ValueError("no training pairs")
    p, hp = cfg.lr_patch, cfg.lr_patch * scale
    lrs, hrs = [], []
    for _ in range(cfg.batch_size):
        pair = pairs[int(rng.integers(len(pairs)))]
        h, w = pair.lr.shape[:2]
        if p > h or p > w:
            raise ValueError(f"{pair.name}: LR patch {p} larger than image {h}x{w}")
        y = int(rng.integers(h - p + 1))
        x = int(rng.integers(w - p + 1))
        k = int(rng.integers(N_TRANSFORMS)) if cfg.augment else 0
        lr = pair.lr[y : y + p, x : x + p]
        hr = pair.hr[y * scale : y * scale + hp, x * scale : x * scale + hp]
        lrs.append(dihedral(lr, k))
        hrs.append(dihedral(hr, k))
    lr_b = np.ascontiguousarray(np.stack(lrs).transpose(0, 3, 1, 2))
    hr_b = np.ascontiguousarray(np.stack(hrs).transpose(0, 3, 1, 2))
    return lr_b, hr_b


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Bias-corrected Adam over a fixed, named parameter list."""

    def __init__(self, named_params: Sequence[tuple[str, Tensor]], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(named_params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for name, p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.shape:
                raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
            dt = p.dtype.type
            m = dt(b1) * self.m[name] + dt(1 - b1) * g
            v = dt(b2) * self.v[name] + dt(1 - b2) * (g * g)
            self.m[name], self.v[name] = m, v
            update = (m / dt(c1)) / (np.sqrt(v / dt(c2)) + dt(self.eps))
            p.data = (p.data - dt(lr) * update).astype(p.dtype)

    def load_state(self, m: dict, v: dict, t: int) -> None:
        for name, p in self.params:
            self.m[name] = np.asarray(m[name]).reshape(p.shape).astype(p.dtype)
            self.v[name] = np.asarray(v[name]).reshape(p.shape).astype(p.dtype)
        self.t = t


# ---------------------------------------------------------------------------
# loop


def make_checkpoint(net: Network, opt: Adam, step: int, cfg: TrainConfig) -> Checkpoint:
    ckpt = Checkpoint.from_network(net, step=step, adam_t=opt.t, seed=cfg.seed,
                                   extra={f"train.{k}": v for k, v in cfg.to_items()})
    ckpt.adam_m = {k: a.copy() for k, a in opt.m.items()}
    ckpt.adam_v = {k: a.copy() for k, a in opt.v.items()}
    return ckpt


def train(net: Network, pairs: Sequence[TrainingPair], cfg: TrainConfig, out_dir=None,
          resume: Optional[Checkpoint] = None, stop_below: Optional[float] = None,
          log_every: int = 0):
    """Run sample -> forward -> L1 -> backward -> Adam up to ``cfg.max_steps``.

    Returns ``(checkpoint, trace)`` where trace rows are ``(step, loss, lr)``.
    With ``out_dir`` set, ``checkpoint.ckpt`` is written every
    ``checkpoint_every`` steps and at the end.
    """
    cfg.validate()
    scale = net.config.scale
    for pair in pairs:
        if cfg.lr_patch > min(pair.lr.shape[:2]):
            raise ValueError(f"{pair.name}: lr_patch {cfg.lr_patch} exceeds LR extent {pair.lr.shape[:2]}")
    opt = Adam(net.named_parameters(), cfg.beta1, cfg.beta2, cfg.eps)
    start = 0
    if resume is not None:
        resume.load_into(net)
        if resume.adam_m:
            opt.load_state(resume.adam_m, resume.adam_v, resume.adam_t)
        start = resume.step
    out_dir = Path(out_dir) if out_dir is not None else None
    trace: list[tuple[int, float, float]] = []
    dtype = net.head.weight.dtype

    step = start
    while step < cfg.max_steps:
        lr = lr_at(step, cfg)
        lr_b, hr_b = sample_batch(pairs, cfg, batch_rng(cfg.seed, step), scale)
        net.zero_grad()
        loss = l1_loss(net(Tensor(lr_b.astype(dtype))), Tensor(hr_b.astype(dtype)))
        value = loss.item()
        if not math.isfinite(value):
            path = None
            if out_dir is not None:
                path = make_checkpoint(net, opt, step, cfg).save(out_dir / "diverged.ckpt")
            raise TrainingDiverged(step, value, path)
        backward(loss)
        opt.step(lr)
        trace.append((step, value, lr))
        step += 1
        if log_every and step % log_every == 0:
            log.info("step %d loss %.6f lr %.3g", step, value, lr)
        if out_dir is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            make_checkpoint(net, opt, step, cfg).save(out_dir / "checkpoint.ckpt")
        if stop_below is not None and value < stop_below:
            break

    ckpt = make_checkpoint(net, opt, step, cfg)
    if out_dir is not None:
        ckpt.save(out_dir / "checkpoint.ckpt")
    return ckpt, trace


def format_trace(trace, header: bool = True) -> str:
    lines = ["step,loss,lr"] if header else []
    lines += [f"{s},{loss!r},{lr!r}" for s, loss, lr in trace]
    return "".join(line + "\n" for line in lines)
