"""Central finite differences, used as an oracle for the tape."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numerical_grad(f: Callable[[], float], t: Tensor, index: tuple[int, ...], h: float = 1e-5) -> float:
    """d f / d t[index] by central differences; ``f`` re-runs the forward pass."""
    old = t.data[index]
    t.data[index] = old + h
    up = f()
    t.data[index] = old - h
    down = f()
    t.data[index] = old
    return (up - down) / (2.0 * h)


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    probes: int,
    rng: np.random.Generator,
    h: float = 1e-5,
) -> list[tuple[str, tuple[int, ...], float, float, float]]:
    """Compare tape gradients with finite differences at ``probes`` random entries.

    Returns ``(param name, index, analytic, numeric, relative error)`` rows.
    Must be run at 64-bit precision to be meaningful.
    """
    loss = loss_fn()
    backward(loss, params)
    analytic = [p.grad.copy() for p in params]
    sizes = np.array([p.size for p in params], dtype=float)
    rows = []
    for _ in range(probes):
        k = int(rng.choice(len(params), p=sizes / sizes.sum()))
        idx = tuple(int(rng.integers(0, s)) for s in params[k].shape)
        num = numerical_grad(lambda: float(loss_fn().data), params[k], idx, h)
        ana = float(analytic[k][idx])
        rows.append((params[k].name or f"param{k}", idx, ana, num, relative_error(ana, num)))
    return rows
