"""Central finite-difference checks of tape gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


def numeric_grad(f: Callable[[], Tensor], t: Tensor, coords, eps: float = 1e-3) -> np.ndarray:
    """d f / d t at the flat indices ``coords`` by central differences."""
    flat = t.data.reshape(-1)
    out = np.empty(len(coords), dtype=np.float64)
    with no_grad():
        for j, i in enumerate(coords):
            old = flat[i]
            flat[i] = old + eps
            hi = float(f().data)
            flat[i] = old - eps
            lo = float(f().data)
            flat[i] = old
            out[j] = (hi - lo) / (2 * eps)
    return out


def check_gradients(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-3,
                    max_coords: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Relative error ``||tape - fd|| / ||fd||`` over (a sample of) all parameter coordinates.

    ``f`` must rebuild the graph from scratch on each call and return a scalar.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.grad = None
    backward(f())
    tape, fd = [], []
    for p in params:
        n = p.size
        coords = np.arange(n) if max_coords is None or n <= max_coords else np.sort(
            rng.choice(n, max_coords, replace=False))
        g = np.zeros(n) if p.grad is None else p.grad.reshape(-1)
        tape.append(g[coords].astype(np.float64))
        fd.append(numeric_grad(f, p, coords, eps))
    tape_v, fd_v = np.concatenate(tape), np.concatenate(fd)
    scale = max(np.linalg.norm(fd_v), np.linalg.norm(tape_v), 1e-12)
    return float(np.linalg.norm(tape_v - fd_v) / scale)
