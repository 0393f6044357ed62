"""Central finite-difference gradient verification.

The checker re-evaluates a caller-supplied forward closure with perturbed
parameter entries, so it never touches the reverse-mode tape it is
verifying. Intended for float64; float32 cannot meet the tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .numerics import Tensor, no_grad


@dataclass
class GradMismatch:
    name: str
    index: tuple[int, ...]
    autodiff: float
    finite_diff: float
    rel_error: float


def finite_difference_grad(loss_fn: Callable[[], float], tensor: Tensor,
                           h: float = 1e-5) -> np.ndarray:
    """d(loss)/d(tensor) by central differences, one entry at a time."""
    flat = tensor.data.reshape(-1)
    out = np.zeros_like(flat)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            out[i] = (up - down) / (2.0 * h)
    return out.reshape(tensor.data.shape)


def check_gradients(loss_fn: Callable[[], float], params: dict[str, Tensor],
                    grads: dict[str, np.ndarray], h: float = 1e-5,
                    tol: float = 1e-4, floor: float = 1e-6) -> list[GradMismatch]:
    """Compare autodiff grads against central differences entry by entry.

    Returns the mismatches whose relative error
    |ad - fd| / max(floor, |ad|, |fd|) exceeds ``tol``; empty means pass.
    """
    failures: list[GradMismatch] = []
    for name, p in params.items():
        ad = grads[name]
        fd = finite_difference_grad(loss_fn, p, h=h)
        denom = np.maximum(floor, np.maximum(np.abs(ad), np.abs(fd)))
        rel = np.abs(ad - fd) / denom
        bad = np.argwhere(rel > tol)
        for idx in bad:
            idx = tuple(int(i) for i in idx)
            failures.append(GradMismatch(name, idx, float(ad[idx]), float(fd[idx]),
                                         float(rel[idx])))
    return failures
