"""Central finite-difference Jacobian, the oracle every analytic gradient
in this package is tested against."""

from __future__ import annotations

from typing import Callable

import numpy as np


def finite_diff_jacobian(fn: Callable[[np.ndarray], np.ndarray],
                         x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Jacobian of ``fn`` at ``x``: entry (i, j) = (f_i(x+δe_j) - f_i(x-δe_j)) / 2δ."""
    x = np.asarray(x, dtype=np.float64)
    f0 = np.asarray(fn(x))
    jac = np.empty((f0.size, x.size))
    flat = x.ravel()
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        up = np.asarray(fn(x)).ravel()
        flat[k] = orig - step
        down = np.asarray(fn(x)).ravel()
        flat[k] = orig
        jac[:, k] = (up - down) / (2.0 * step)
    return jac


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """Norm-relative error ‖a-b‖ / max(‖a‖, ‖b‖, floor) over flattened arrays.

    Norm-based rather than elementwise so that near-zero entries (where
    finite differences lose all relative accuracy) do not dominate.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)
