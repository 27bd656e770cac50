"""Tensor value type and reverse-mode gradient propagation."""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

# per thread, so concurrent inference workers cannot clobber each other's saved mode
_mode = threading.local()


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference)."""
    prev = grad_enabled()
    _mode.enabled = False
    try:
        yield
    finally:
        _mode.enabled = prev


def grad_enabled() -> bool:
    return getattr(_mode, "enabled", True)


class Tensor:
    """Dense float array with optional gradient tracking.

    Activations are 4-D ``(N, C, H, W)``; parameters keep their natural shape
    (a conv bias is 1-D) and scalar losses are 0-d.
    """

    __slots__ = ("data", "requires_grad", "grad", "parents", "grad_fn", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32 if dtype is None else dtype)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.parents: tuple[Tensor, ...] = ()
        self.grad_fn: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self.grad_fn is None

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}, requires_grad={self.requires_grad})"


def make_result(data: np.ndarray, parents: Iterable[Tensor], grad_fn, op: str) -> Tensor:
    """Wrap an op output, recording the graph edge only when needed."""
    parents = tuple(parents)
    out = Tensor(data)
    out.op = op
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.grad_fn = grad_fn
    return out


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` that require grad, parents before children."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Intermediate gradients live only for the duration of the call, so calling
    this twice on the same graph adds the leaf gradients twice.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    vjp(loss, np.ones_like(loss.data))


def vjp(root: Tensor, seed: np.ndarray) -> None:
    """Propagate ``seed`` (same shape as ``root``) back to the leaves."""
    if seed.shape != root.shape:
        raise ValueError(f"seed shape {seed.shape} != output shape {root.shape}")
    if not root.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(root): seed}
    for node in reversed(topological_order(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.grad_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
