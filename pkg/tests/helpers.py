"""Shared numeric helpers: central finite differences and gradient checks."""

from __future__ import annotations

from typing import Callable

import numpy as np


def fd_grad(fun: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of one array."""
    x = np.asarray(x, dtype="float64")
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        up = x.copy()
        up[idx] += h
        down = x.copy()
        down[idx] -= h
        grad[idx] = (fun(up) - fun(down)) / (2.0 * h)
    return grad


def grad_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst per-coordinate relative error with a guarded denominator."""
    analytic = np.asarray(analytic, dtype="float64")
    numeric = np.asarray(numeric, dtype="float64")
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    return float(np.max(np.abs(analytic - numeric) / denom))


def assert_grad_close(
    fun: Callable[[np.ndarray], float],
    x: np.ndarray,
    analytic: np.ndarray,
    tol: float = 1e-4,
    h: float = 1e-5,
) -> None:
    numeric = fd_grad(fun, x, h=h)
    err = grad_rel_err(analytic, numeric)
    assert err < tol, f"gradient mismatch: {err:.3e}"
