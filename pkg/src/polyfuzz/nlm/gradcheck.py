"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np


def numeric_grad(f, x: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. array ``x``, perturbed in place."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def max_relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def check_gradients(f, params: dict, grads: dict, eps: float = 1e-4) -> dict:
    """Relative error per parameter name; ``f`` must read ``params`` live."""
    return {k: max_relative_error(grads[k], numeric_grad(f, params[k], eps)) for k in grads}
