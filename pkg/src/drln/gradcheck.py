"""Central finite-difference verification of every engine op and of a whole network."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import engine as E
from .arch import NetworkConfig, build_network, cast_network, layer_kind
from .engine import Tensor

OP_CLASSES = (
    "conv2d", "relu", "sigmoid", "global_avg_pool", "pixel_shuffle",
    "concat_channels", "add", "mul_broadcast", "l1_loss", "network",
)
STEP = 1e-6
# below this magnitude gradients are compared absolutely
ABS_FLOOR = 1e-6


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), ABS_FLOOR)


@dataclass
class CheckResult:
    op: str
    worst: float
    where: str
    n_checked: int

    def passed(self, threshold: float) -> bool:
        return self.worst < threshold


def _away_from_zero(rng, shape, margin=0.05):
    v = rng.standard_normal(shape)
    return np.where(np.abs(v) < margin, np.sign(v + 1e-300) * (margin + np.abs(v)), v)


def check_function(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], rng: np.random.Generator,
                   samples: int, name: str) -> CheckResult:
    """Compare autodiff against central differences of <fn(inputs), R> for random R."""
    leaves = [Tensor(a.astype(np.float64), requires_grad=True) for a in inputs]
    out = fn(*leaves)
    proj = rng.standard_normal(out.shape) if out.data.size > 1 else np.ones(out.shape)
    E.vjp(out, proj)

    def objective() -> float:
        with E.no_grad():
            return float(np.sum(fn(*leaves).data * proj))

    worst, where, count = 0.0, "", 0
    for li, leaf in enumerate(leaves):
        flat = leaf.data.reshape(-1)
        grad = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad
        for idx in rng.choice(flat.size, size=min(samples, flat.size), replace=False):
            orig = flat[idx]
            flat[idx] = orig + STEP
            up = objective()
            flat[idx] = orig - STEP
            down = objective()
            flat[idx] = orig
            num = (up - down) / (2 * STEP)
            err = relative_error(float(grad.reshape(-1)[idx]), num)
            count += 1
            if err > worst:
                worst, where = err, f"input {li} index {int(idx)}"
    return CheckResult(name, worst, where, count)


def _op_cases(rng: np.random.Generator) -> dict[str, tuple[Callable, list[np.ndarray]]]:
    def conv(x, w, b):
        return E.conv2d(x, E.ConvParams(w, b, padding=3, dilation=3))

    def conv_plain(x, w, b):
        return E.conv2d(x, E.ConvParams(w, b, padding=1))

    def concat(a, b, c):
        return E.concat_channels([a, b, c])

    pred = rng.standard_normal((2, 3, 4, 4))
    target = pred + _away_from_zero(rng, pred.shape, 0.05)
    return {
        "conv2d": [
            (conv, [rng.standard_normal((2, 3, 9, 9)), rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)]),
            (conv_plain, [rng.standard_normal((2, 3, 6, 5)), rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)]),
        ],
        "relu": [(E.relu, [_away_from_zero(rng, (2, 3, 5, 5))])],
        "sigmoid": [(E.sigmoid, [2 * rng.standard_normal((2, 3, 5, 5))])],
        "global_avg_pool": [(E.global_avg_pool, [rng.standard_normal((2, 3, 5, 4))])],
        "pixel_shuffle": [(lambda x: E.pixel_shuffle(x, 2), [rng.standard_normal((2, 8, 3, 3))])],
        "concat_channels": [(concat, [rng.standard_normal((2, c, 4, 4)) for c in (1, 2, 3)])],
        "add": [(E.add, [rng.standard_normal((2, 3, 4, 4)), rng.standard_normal((2, 3, 4, 4))])],
        "mul_broadcast": [(E.mul_broadcast, [rng.standard_normal((2, 3, 1, 1)), rng.standard_normal((2, 3, 4, 4))])],
        "l1_loss": [(E.l1_loss, [pred, target])],
    }


def check_network(rng: np.random.Generator, samples: int, seed: int = 1,
                  cfg: Optional[NetworkConfig] = None, size: int = 6) -> dict[str, CheckResult]:
    """Finite-difference check of d(L1)/d(param), ``samples`` coordinates per layer kind."""
    cfg = cfg or NetworkConfig.desk(2)
    net = cast_network(build_network(cfg, seed=seed), np.float64)
    x = Tensor(rng.uniform(0, 1, (1, cfg.input_channels, size, size)))
    y = Tensor(rng.uniform(0, 1, (1, cfg.input_channels, size * cfg.scale, size * cfg.scale)))
    E.backward(E.l1_loss(net(x), y))

    def objective() -> float:
        with E.no_grad():
            return E.l1_loss(net(x), y).item()

    by_kind: dict[str, list[tuple[str, Tensor]]] = {}
    for name, t in net.named_parameters():
        by_kind.setdefault(layer_kind(name), []).append((name, t))
    results = {}
    for kind, params in by_kind.items():
        sizes = np.array([t.data.size for _, t in params])
        picks = rng.choice(sizes.sum(), size=min(samples, int(sizes.sum())), replace=False)
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        worst, where = 0.0, ""
        for flat_idx in picks:
            pi = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
            name, t = params[pi]
            local = int(flat_idx - offsets[pi])
            flat = t.data.reshape(-1)
            orig = flat[local]
            flat[local] = orig + STEP
            up = objective()
            flat[local] = orig - STEP
            down = objective()
            flat[local] = orig
            num = (up - down) / (2 * STEP)
            err = relative_error(float(t.grad.reshape(-1)[local]), num)
            if err > worst:
                worst, where = err, f"{name}[{local}]"
        results[kind] = CheckResult(f"network:{kind}", worst, where, len(picks))
    return results


def run_gradcheck(ops: Optional[Sequence[str]] = None, samples: int = 20, seed: int = 1) -> list[CheckResult]:
    """Run the selected op classes (all by default); one result per op, plus per layer kind for the network."""
    ops = list(OP_CLASSES if not ops else ops)
    unknown = [o for o in ops if o not in OP_CLASSES]
    if unknown:
        raise ValueError(f"unknown op class(es) {unknown}; choose from {', '.join(OP_CLASSES)}")
    rng = np.random.Generator(np.random.PCG64(seed))
    cases = _op_cases(rng)
    results = []
    for op in ops:
        if op == "network":
            results.extend(check_network(rng, samples, seed).values())
            continue
        worst = None
        for fn, inputs in cases[op]:
            r = check_function(fn, inputs, rng, samples, op)
            if worst is None or r.worst > worst.worst:
                worst = CheckResult(op, r.worst, r.where, r.n_checked + (worst.n_checked if worst else 0))
            else:
                worst.n_checked += r.n_checked
        results.append(worst)
    return results
