"""Differentiable operations on NCHW tensors.

Every forward and backward here is a fixed sequence of numpy calls with no
data-dependent reduction order, so repeated runs are bit-identical.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, make_result

# names of ops whose backward is deliberately corrupted (gradient-check self test)
_faults: set[str] = set()


@contextlib.contextmanager
def inject_fault(op: str):
    """Corrupt the backward pass of ``op`` inside the block."""
    _faults.add(op)
    try:
        yield
    finally:
        _faults.discard(op)


def _check4d(x: Tensor, name: str) -> None:
    if x.data.ndim != 4:
        raise ValueError(f"{name}: expected a 4-D (N, C, H, W) tensor, got shape {x.shape}")


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


@dataclass
class ConvParams:
    """Weights and geometry of one 2-D convolution."""

    weight: Tensor
    bias: Optional[Tensor] = None
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    dilation: tuple[int, int] = (1, 1)

    def __post_init__(self):
        self.stride = _pair(self.stride)
        self.padding = _pair(self.padding)
        self.dilation = _pair(self.dilation)
        w = self.weight.data
        if w.ndim != 4 or min(w.shape) < 1:
            raise ValueError(f"conv weight must be 4-D with positive extents, got {w.shape}")
        if self.bias is not None and self.bias.shape != (w.shape[0],):
            raise ValueError(f"bias shape {self.bias.shape} does not match C_out={w.shape[0]}")
        if min(self.stride) < 1 or min(self.dilation) < 1 or min(self.padding) < 0:
            raise ValueError("stride/dilation must be positive and padding non-negative")

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel_size(self) -> tuple[int, int]:
        return self.weight.shape[2], self.weight.shape[3]

    def tensors(self) -> list[Tensor]:
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        """floor((H + 2p - d(k-1) - 1) / s) + 1 per axis; d(k-1)+1 is the effective kernel extent."""
        kh, kw = self.kernel_size
        (sh, sw), (ph, pw), (dh, dw) = self.stride, self.padding, self.dilation
        return ((h + 2 * ph - dh * (kh - 1) - 1) // sh + 1,
                (w + 2 * pw - dw * (kw - 1) - 1) // sw + 1)


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    """Zero-padded cross-correlation, computed as one GEMM per batch item."""
    _check4d(x, "conv2d")
    n, c, h, w = x.shape
    if c != p.in_channels:
        raise ValueError(f"conv2d: input has {c} channels, weight expects {p.in_channels}")
    ho, wo = p.output_size(h, w)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: non-positive output size {(ho, wo)} for input {(h, w)}")
    o, _, kh, kw = p.weight.shape
    (sh, sw), (ph, pw), (dh, dw) = p.stride, p.padding, p.dilation
    W = p.weight.data
    xd = x.data

    pointwise = kh == kw == 1 and sh == sw == 1 and ph == pw == 0
    if pointwise:
        cols = xd.reshape(n, c, h * w)
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else xd
        win = sliding_window_view(xp, (dh * (kh - 1) + 1, dw * (kw - 1) + 1), axis=(2, 3))
        win = win[:, :, : (ho - 1) * sh + 1 : sh, : (wo - 1) * sw + 1 : sw, ::dh, ::dw]
        # (N, C, kh, kw, Ho, Wo) -> (N, C*kh*kw, Ho*Wo)
        cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * kh * kw, ho * wo)
    Wm = W.reshape(o, -1)
    out = np.matmul(Wm, cols)
    if p.bias is not None:
        out += p.bias.data[None, :, None]
    out = out.reshape(n, o, ho, wo)

    def grad_fn(g):
        gm = g.reshape(n, o, ho * wo)
        gw = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(W.shape)
        gb = g.sum(axis=(0, 2, 3)) if p.bias is not None else None
        gx = None
        if x.requires_grad:
            gcols = np.matmul(Wm.T, gm)
            if pointwise:
                gx = gcols.reshape(n, c, h, w)
            else:
                gcols = gcols.reshape(n, c, kh, kw, ho, wo)
                gxp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i * dh : i * dh + (ho - 1) * sh + 1 : sh,
                            j * dw : j * dw + (wo - 1) * sw + 1 : sw] += gcols[:, :, i, j]
                gx = gxp[:, :, ph : ph + h, pw : pw + w]
            if "conv2d" in _faults:
                gx = gx * 1.05
        grads = [gx, gw]
        if p.bias is not None:
            grads.append(gb)
        return grads

    return make_result(out, [x, *p.tensors()], grad_fn, "conv2d")


def relu(x: Tensor) -> Tensor:
    """max(0, v); the derivative at 0 is taken as 0."""
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype)

    def grad_fn(g):
        return [g * mask]

    return make_result(out, [x], grad_fn, "relu")


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, kept inside the open interval (0, 1) even when it saturates."""
    v = x.data
    e = np.exp(-np.abs(v))
    out = np.where(v >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)
    tiny = np.finfo(x.dtype).tiny
    out = np.clip(out, tiny, np.nextafter(x.dtype.type(1), x.dtype.type(0)))

    def grad_fn(g):
        return [g * out * (1 - out)]

    return make_result(out, [x], grad_fn, "sigmoid")


def global_avg_pool(x: Tensor) -> Tensor:
    _check4d(x, "global_avg_pool")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def grad_fn(g):
        return [np.broadcast_to(g / (h * w), x.shape).astype(x.dtype)]

    return make_result(out, [x], grad_fn, "global_avg_pool")


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(N, C*r*r, H, W) -> (N, C, H*r, W*r) with out[c, y*r+a, x*r+b] = in[c*r*r + a*r + b, y, x]."""
    _check4d(x, "pixel_shuffle")
    n, c, h, w = x.shape
    if r < 1 or c % (r * r):
        raise ValueError(f"pixel_shuffle: {c} channels not divisible by r^2 = {r * r}")
    co = c // (r * r)
    out = x.data.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * r, w * r)

    def grad_fn(g):
        return [pixel_unshuffle(g, r)]

    return make_result(out, [x], grad_fn, "pixel_shuffle")


def pixel_unshuffle(a: np.ndarray, r: int) -> np.ndarray:
    """Exact inverse rearrangement of :func:`pixel_shuffle` on raw arrays."""
    n, c, hr, wr = a.shape
    h, w = hr // r, wr // r
    return np.ascontiguousarray(
        a.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h, w))


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise ValueError("concat_channels: empty list")
    for t in parts:
        _check4d(t, "concat_channels")
    ref = parts[0]
    for t in parts[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (ref.shape[0], ref.shape[2], ref.shape[3]):
            raise ValueError(f"concat_channels: shape mismatch {ref.shape} vs {t.shape}")
        if t.dtype != ref.dtype:
            raise ValueError(f"concat_channels: dtype mismatch {ref.dtype} vs {t.dtype}")
    if len(parts) == 1:
        out = parts[0].data.copy()
    else:
        out = np.concatenate([t.data for t in parts], axis=1)
    bounds = np.cumsum([0] + [t.shape[1] for t in parts])

    def grad_fn(g):
        return [g[:, bounds[i] : bounds[i + 1]] for i in range(len(parts))]

    return make_result(out, parts, grad_fn, "concat_channels")


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return make_result(a.data + b.data, [a, b], lambda g: [g, g], "add")


def mul_broadcast(gate: Tensor, x: Tensor) -> Tensor:
    """Scale every (n, c) feature map of ``x`` by the scalar ``gate[n, c, 0, 0]``."""
    _check4d(x, "mul_broadcast")
    n, c = x.shape[:2]
    if gate.shape != (n, c, 1, 1):
        raise ValueError(f"mul_broadcast: gate shape {gate.shape} incompatible with {x.shape}")
    out = gate.data * x.data

    def grad_fn(g):
        return [(g * x.data).sum(axis=(2, 3), keepdims=True), g * gate.data]

    return make_result(out, [gate, x], grad_fn, "mul_broadcast")


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error over every element of the batch (0-d result)."""
    if pred.shape != target.shape:
        raise ValueError(f"l1_loss: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    count = diff.size
    out = np.asarray(np.abs(diff).sum() / count, dtype=pred.dtype)

    def grad_fn(g):
        s = np.sign(diff) * (g / count)
        return [s, -s]

    return make_result(out, [pred, target], grad_fn, "l1_loss")


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return make_result(out, [x], lambda g: [np.broadcast_to(g, x.shape).astype(x.dtype)], "sum")
