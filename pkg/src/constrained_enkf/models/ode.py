"""Fixed-step classical Runge-Kutta integration."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from ..enkf import ForwardModelError


class IntegrationError(ForwardModelError):
    def __init__(self, message: str, t: float):
        super().__init__(f"{message} at t={t:.6g}")
        self.t = t


def n_substeps(t0: float, t1: float, dt_max: float) -> int:
    # tolerate spans that are an integer multiple of dt_max up to rounding
    ratio = (t1 - t0) / dt_max
    n = math.ceil(ratio - 1e-9 * max(1.0, ratio))
    return max(n, 0)


def rk4_step(rhs: Callable, t: float, y: np.ndarray, h: float) -> np.ndarray:
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = rhs(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(rhs: Callable[[float, np.ndarray], np.ndarray], state, t0: float, t1: float,
              dt_max: float) -> np.ndarray:
    """Integrate dy/dt = rhs(t, y) from t0 to t1 with uniform steps of size <= dt_max."""
    if not t1 >= t0:
        raise ValueError(f"t1={t1} must be >= t0={t0}")
    if dt_max <= 0:
        raise ValueError("dt_max must be positive")
    y = np.array(state, dtype=float)
    n = n_substeps(t0, t1, dt_max)
    if n == 0:
        return y
    h = (t1 - t0) / n
    for i in range(n):
        t = t0 + i * h
        y = rk4_step(rhs, t, y, h)
        if not np.all(np.isfinite(y)):
            raise IntegrationError("non-finite state during integration", t + h)
    return y
