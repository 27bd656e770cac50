"""Network assembly: residual blocks, dense units, Laplacian attention, cascading blocks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Iterator, Optional

import numpy as np

from .engine import (
    ConvParams,
    Tensor,
    add,
    concat_channels,
    conv2d,
    global_avg_pool,
    mul_broadcast,
    pixel_shuffle,
    relu,
    sigmoid,
)

# RGB mean of DIV2K, the usual mean-shift constant for this model family
DIV2K_RGB_MEAN = (0.4488, 0.4371, 0.4040)

VALID_SCALES = (2, 3, 4, 8)


@dataclass
class NetworkConfig:
    scale: int = 2
    channels: int = 64
    n_cascading_blocks: int = 6
    drlms_per_block: int = 3
    rbs_per_drlm: int = 3
    reduction: int = 4
    input_channels: int = 3
    mean_shift: Optional[tuple[float, ...]] = DIV2K_RGB_MEAN
    preset: str = "paper"

    @classmethod
    def paper(cls, scale: int = 2, **overrides) -> "NetworkConfig":
        return cls(scale=scale, preset="paper", **overrides)

    @classmethod
    def desk(cls, scale: int = 2, **overrides) -> "NetworkConfig":
        kw = dict(channels=32, n_cascading_blocks=2)
        kw.update(overrides)
        return cls(scale=scale, preset="desk", **kw)

    @classmethod
    def from_preset(cls, name: str, scale: int = 2, **overrides) -> "NetworkConfig":
        if name == "paper":
            return cls.paper(scale, **overrides)
        if name == "desk":
            return cls.desk(scale, **overrides)
        raise ValueError(f"unknown preset {name!r} (expected 'paper' or 'desk')")

    def validate(self) -> None:
        if self.scale not in VALID_SCALES:
            raise ValueError(f"scale must be one of {VALID_SCALES}, got {self.scale}")
        for name in ("channels", "n_cascading_blocks", "drlms_per_block", "rbs_per_drlm", "reduction"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.channels % self.reduction:
            raise ValueError(f"channels ({self.channels}) not divisible by reduction ({self.reduction})")
        if self.input_channels not in (1, 3):
            raise ValueError("input_channels must be 1 or 3")
        if self.mean_shift is not None and len(self.mean_shift) != self.input_channels:
            raise ValueError("mean_shift needs one value per input channel")
        if self.preset not in ("paper", "desk"):
            raise ValueError(f"unknown preset {self.preset!r}")

    @property
    def upsample_factors(self) -> list[int]:
        return {2: [2], 3: [3], 4: [2, 2], 8: [2, 2, 2]}[self.scale]

    def to_items(self) -> list[tuple[str, str]]:
        items = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "mean_shift":
                v = "none" if v is None else ",".join(repr(float(m)) for m in v)
            items.append((f.name, str(v)))
        return items

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "NetworkConfig":
        kw = {}
        for f in fields(cls):
            if f.name not in items:
                continue
            raw = items[f.name]
            if f.name == "mean_shift":
                kw[f.name] = None if raw == "none" else tuple(float(v) for v in raw.split(","))
            elif f.name == "preset":
                kw[f.name] = raw
            else:
                kw[f.name] = int(raw)
        return cls(**kw)


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class ResidualBlock:
    conv1: ConvParams
    conv2: ConvParams


@dataclass
class LaplacianAttention:
    branch3: ConvParams
    branch5: ConvParams
    branch7: ConvParams
    fuse: ConvParams

    @property
    def branches(self) -> list[ConvParams]:
        return [self.branch3, self.branch5, self.branch7]


@dataclass
class DRLM:
    residual_blocks: list[ResidualBlock]
    dense_compressors: list[ConvParams]
    final_compression: ConvParams
    attention: LaplacianAttention


@dataclass
class CascadingBlock:
    drlms: list[DRLM]
    cascade_compressors: list[ConvParams]


@dataclass
class Network:
    config: NetworkConfig
    head: ConvParams
    blocks: list[CascadingBlock]
    tail_conv: ConvParams
    upsampler: list[tuple[ConvParams, int]]
    reconstruction: ConvParams
    sub_mean: Optional[ConvParams] = None
    add_mean: Optional[ConvParams] = None

    def named_convs(self) -> Iterator[tuple[str, ConvParams]]:
        yield "head", self.head
        for bi, block in enumerate(self.blocks):
            for di, m in enumerate(block.drlms):
                pre = f"blocks.{bi}.drlms.{di}"
                for ri, rb in enumerate(m.residual_blocks):
                    yield f"{pre}.rbs.{ri}.conv1", rb.conv1
                    yield f"{pre}.rbs.{ri}.conv2", rb.conv2
                for ci, cp in enumerate(m.dense_compressors):
                    yield f"{pre}.dense.{ci}", cp
                yield f"{pre}.compression", m.final_compression
                yield f"{pre}.attention.branch3", m.attention.branch3
                yield f"{pre}.attention.branch5", m.attention.branch5
                yield f"{pre}.attention.branch7", m.attention.branch7
                yield f"{pre}.attention.fuse", m.attention.fuse
            for ci, cp in enumerate(block.cascade_compressors):
                yield f"blocks.{bi}.cascade.{ci}", cp
        yield "tail", self.tail_conv
        for ui, (cp, _) in enumerate(self.upsampler):
            yield f"upsampler.{ui}", cp
        yield "reconstruction", self.reconstruction

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for name, cp in self.named_convs():
            out.append((f"{name}.weight", cp.weight))
            if cp.bias is not None:
                out.append((f"{name}.bias", cp.bias))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(t.data.size for t in self.parameters())

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.grad = None

    def __call__(self, lr: Tensor, gates: Optional[list] = None) -> Tensor:
        return forward(lr, self, gates)


# ---------------------------------------------------------------------------
# forward pieces


def residual_block(x: Tensor, rb: ResidualBlock) -> Tensor:
    """relu(conv2(relu(conv1(x))) + x)."""
    if x.shape[1] != rb.conv1.in_channels:
        raise ValueError(f"residual_block: {x.shape[1]} channels, block expects {rb.conv1.in_channels}")
    return relu(add(conv2d(relu(conv2d(x, rb.conv1)), rb.conv2), x))


def dense_residual_unit(x: Tensor, rbs: list[ResidualBlock], compressors: list[ConvParams]) -> Tensor:
    """Each block after the first sees a 1x1 compression of [x; all previous block outputs]."""
    if len(compressors) != len(rbs) - 1:
        raise ValueError("dense_residual_unit needs one compressor per block after the first")
    feats = [x]
    h = x
    for i, rb in enumerate(rbs):
        if i > 0:
            cat = concat_channels(feats)
            if cat.shape[1] != compressors[i - 1].in_channels:
                raise ValueError(f"dense_residual_unit: concat width {cat.shape[1]} does not match "
                                 f"compressor {compressors[i - 1].in_channels}")
            h = conv2d(cat, compressors[i - 1])
        h = residual_block(h, rb)
        feats.append(h)
    return h


def attention_gate(fc: Tensor, la: LaplacianAttention) -> Tensor:
    """Per-channel gate in (0, 1) from the pooled descriptor and three dilated branches."""
    if fc.shape[1] != la.branch3.in_channels:
        raise ValueError(f"laplacian_attention: {fc.shape[1]} channels, branches expect {la.branch3.in_channels}")
    gd = global_avg_pool(fc)
    pyramid = concat_channels([relu(conv2d(gd, b)) for b in la.branches])
    return sigmoid(conv2d(pyramid, la.fuse))


def laplacian_attention(fc: Tensor, la: LaplacianAttention, gates: Optional[list] = None) -> Tensor:
    gate = attention_gate(fc, la)
    if gates is not None:
        gates.append(gate.data)
    return mul_broadcast(gate, fc)


def drlm(x: Tensor, m: DRLM, gates: Optional[list] = None) -> Tensor:
    f_r = dense_residual_unit(x, m.residual_blocks, m.dense_compressors)
    f_c = conv2d(f_r, m.final_compression)
    return laplacian_attention(f_c, m.attention, gates)


def cascading_block(x: Tensor, block: CascadingBlock, gates: Optional[list] = None) -> Tensor:
    """Cascade [x; u_1; ...; u_i] through a 1x1 compressor after each module, then add x back."""
    feats = [x]
    prev = x
    for m, comp in zip(block.drlms, block.cascade_compressors):
        feats.append(drlm(prev, m, gates))
        prev = conv2d(concat_channels(feats), comp)
    return add(prev, x)


def forward(lr: Tensor, net: Network, gates: Optional[list] = None) -> Tensor:
    if lr.data.ndim != 4:
        raise ValueError(f"forward: expected (N, C, H, W) input, got shape {lr.shape}")
    if lr.shape[1] != net.config.input_channels:
        raise ValueError(f"forward: input has {lr.shape[1]} channels, network expects {net.config.input_channels}")
    x = conv2d(lr, net.sub_mean) if net.sub_mean is not None else lr
    f0 = conv2d(x, net.head)
    t = f0
    for block in net.blocks:
        t = cascading_block(t, block, gates)
    fg = add(f0, conv2d(t, net.tail_conv))
    fu = fg
    for cp, r in net.upsampler:
        fu = pixel_shuffle(conv2d(fu, cp), r)
    y = conv2d(fu, net.reconstruction)
    if net.add_mean is not None:
        y = conv2d(y, net.add_mean)
    return y


# ---------------------------------------------------------------------------
# construction


class _Init:
    """Uniform fan-in init, bound 1/sqrt(fan_in) for weight and bias alike."""

    def __init__(self, seed: int, dtype):
        self.rng = np.random.Generator(np.random.PCG64(seed))
        self.dtype = dtype

    def conv(self, c_in, c_out, k, dilation=1) -> ConvParams:
        fan_in = c_in * k * k
        bound = 1.0 / math.sqrt(fan_in)
        w = self.rng.uniform(-bound, bound, size=(c_out, c_in, k, k)).astype(self.dtype)
        b = self.rng.uniform(-bound, bound, size=(c_out,)).astype(self.dtype)
        pad = dilation * (k - 1) // 2
        return ConvParams(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True),
                          padding=pad, dilation=dilation)


def _mean_shift(mean, sign: float, dtype) -> ConvParams:
    c = len(mean)
    w = np.eye(c, dtype=dtype).reshape(c, c, 1, 1)
    b = (sign * np.asarray(mean, dtype=np.float64)).astype(dtype)
    return ConvParams(Tensor(w), Tensor(b))


def build_network(cfg: NetworkConfig, seed: int = 0, dtype=np.float32) -> Network:
    """Deterministically initialise every convolution of the configured network from ``seed``."""
    cfg.validate()
    init = _Init(seed, dtype)
    c = cfg.channels
    cr = c // cfg.reduction
    head = init.conv(cfg.input_channels, c, 3)
    blocks = []
    for _ in range(cfg.n_cascading_blocks):
        drlms, cascade = [], []
        for di in range(cfg.drlms_per_block):
            rbs = [ResidualBlock(init.conv(c, c, 3), init.conv(c, c, 3)) for _ in range(cfg.rbs_per_drlm)]
            dense = [init.conv(c * (i + 2), c, 1) for i in range(cfg.rbs_per_drlm - 1)]
            final = init.conv(c, c, 1)
            att = LaplacianAttention(init.conv(c, cr, 3, dilation=3), init.conv(c, cr, 3, dilation=5),
                                     init.conv(c, cr, 3, dilation=7), init.conv(3 * cr, c, 1))
            drlms.append(DRLM(rbs, dense, final, att))
            cascade.append(init.conv(c * (di + 2), c, 1))
        blocks.append(CascadingBlock(drlms, cascade))
    tail = init.conv(c, c, 3)
    upsampler = [(init.conv(c, c * r * r, 3), r) for r in cfg.upsample_factors]
    recon = init.conv(c, cfg.input_channels, 3)
    sub_mean = add_mean = None
    if cfg.mean_shift is not None:
        sub_mean = _mean_shift(cfg.mean_shift, -1.0, dtype)
        add_mean = _mean_shift(cfg.mean_shift, 1.0, dtype)
    return Network(cfg, head, blocks, tail, upsampler, recon, sub_mean, add_mean)


def layer_kind(name: str) -> str:
    """Coarse grouping of parameter names (head, rb_conv, attention_branch, ...)."""
    if name.startswith("head"):
        return "head"
    if name.startswith("tail"):
        return "tail"
    if name.startswith("upsampler"):
        return "upsampler"
    if name.startswith("reconstruction"):
        return "reconstruction"
    if ".rbs." in name:
        return "rb_conv"
    if ".dense." in name:
        return "dense_compressor"
    if ".compression" in name:
        return "compression"
    if ".attention.branch" in name:
        return "attention_branch"
    if ".attention.fuse" in name:
        return "attention_fuse"
    if ".cascade." in name:
        return "cascade_compressor"
    raise ValueError(f"unrecognised parameter name {name!r}")


def cast_network(net: Network, dtype) -> Network:
    """Copy of ``net`` with every tensor converted to ``dtype``."""

    def cp(p: Optional[ConvParams]) -> Optional[ConvParams]:
        if p is None:
            return None
        w = Tensor(p.weight.data.astype(dtype), requires_grad=p.weight.requires_grad)
        b = None if p.bias is None else Tensor(p.bias.data.astype(dtype), requires_grad=p.bias.requires_grad)
        return ConvParams(w, b, p.stride, p.padding, p.dilation)

    blocks = []
    for block in net.blocks:
        drlms = [DRLM([ResidualBlock(cp(rb.conv1), cp(rb.conv2)) for rb in m.residual_blocks],
                      [cp(d) for d in m.dense_compressors], cp(m.final_compression),
                      LaplacianAttention(*(cp(b) for b in m.attention.branches), cp(m.attention.fuse)))
                 for m in block.drlms]
        blocks.append(CascadingBlock(drlms, [cp(c) for c in block.cascade_compressors]))
    return Network(net.config, cp(net.head), blocks, cp(net.tail_conv),
                   [(cp(u), r) for u, r in net.upsampler], cp(net.reconstruction),
                   cp(net.sub_mean), cp(net.add_mean))
