"""Minimal NCHW autodiff engine: just the ops the network needs."""

from .ops import (
    ConvParams,
    add,
    concat_channels,
    conv2d,
    global_avg_pool,
    inject_fault,
    l1_loss,
    mul_broadcast,
    pixel_shuffle,
    pixel_unshuffle,
    relu,
    sigmoid,
    sum_all,
)
from .tensor import Tensor, backward, no_grad, topological_order, vjp

__all__ = [
    "ConvParams", "Tensor", "add", "backward", "concat_channels", "conv2d",
    "global_avg_pool", "inject_fault", "l1_loss", "mul_broadcast", "no_grad",
    "pixel_shuffle", "pixel_unshuffle", "relu", "sigmoid", "sum_all",
    "topological_order", "vjp",
]
