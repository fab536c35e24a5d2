"""Adaptive Dormand-Prince 5(4) stepping onto a fixed output grid.

Steps never straddle an output node, so the returned samples are integrator
states rather than interpolants. A step that would make any component
non-positive is rejected and retried with a smaller step.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = ["StepSizeError", "integrate_on_grid"]

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B_LOW = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                   187 / 2100, 1 / 40])
_E = _B - _B_LOW

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0


class StepSizeError(RuntimeError):
    """Raised when the step size collapses, e.g. under a persistent positivity violation."""


def integrate_on_grid(rhs: Callable[[float, np.ndarray], np.ndarray], y0: np.ndarray,
                      nodes: np.ndarray, rtol: float = 1e-9, atol: float = 1e-16,
                      positive: bool = True, h_min: float = 1e-12) -> np.ndarray:
    """Integrate ``dy/dx = rhs(x, y)`` and return ``y`` at every entry of ``nodes``.

    ``nodes`` must be strictly increasing; ``y0`` is the state at ``nodes[0]``.
    """
    nodes = np.asarray(nodes, dtype=float)
    y = np.array(y0, dtype=float)
    out = np.empty((nodes.size, y.size))
    out[0] = y
    if positive and np.any(y <= 0):
        raise StepSizeError("initial state is not strictly positive")

    k = np.empty((7, y.size))
    x = nodes[0]
    h = nodes[1] - nodes[0] if nodes.size > 1 else 0.0
    fsal = None
    for n in range(1, nodes.size):
        x_end = nodes[n]
        while x < x_end:
            last = x + h >= x_end - 1e-12 * max(1.0, abs(x_end))
            step = x_end - x if last else h
            k[0] = rhs(x, y) if fsal is None else fsal
            for s in range(1, 7):
                k[s] = rhs(x + _C[s] * step, y + step * (np.dot(_A[s], k[:s])))
            y_new = y + step * (_B @ k)
            err_vec = step * (_E @ k)
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err = float(np.max(np.abs(err_vec) / scale)) if y.size else 0.0

            if positive and np.any(y_new <= 0):
                h = 0.25 * step
                fsal = None
                if h < h_min:
                    raise StepSizeError(
                        f"non-positive state encountered at x={x:.6g}; step size collapsed")
                continue
            if err > 1.0:
                h = step * max(_MIN_FACTOR, _SAFETY * err ** -0.2)
                fsal = None
                if h < h_min:
                    raise StepSizeError(f"step size underflow at x={x:.6g} (error {err:.3g})")
                continue

            x = x_end if last else x + step
            y = y_new
            fsal = k[6].copy()
            grow = _MAX_FACTOR if err == 0 else min(_MAX_FACTOR, _SAFETY * err ** -0.2)
            h_next = step * grow
            # keep the size we would have used had the node not cut the step short
            h = max(h_next, h) if last else h_next
        out[n] = y
    return out
