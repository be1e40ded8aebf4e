"""Six-state ultradian glucose-insulin model with meal forcing.

State ordering: (I_p, I_i, G, h_1, h_2, h_3); the augmented state appends R_g.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from importlib import resources

import numpy as np
import yaml

from .ode import integrate

STATE_NAMES = ("I_p", "I_i", "G", "h_1", "h_2", "h_3")
AUGMENTED_NAMES = STATE_NAMES + ("R_g",)
GLUCOSE_INDEX = 2

# physiological bounds on the augmented state (lower, upper)
STATE_LOWER = (0.01, 0.01, 2000.0, 0.01, 0.01, 0.01, 0.0)
STATE_UPPER = (1e4, 1e4, 4e4, 1e4, 1e4, 1e4, 1e6)


def _defaults() -> dict:
    text = resources.files("constrained_enkf.data").joinpath("ultradian_defaults.yaml").read_text()
    return yaml.safe_load(text)


@dataclass(frozen=True)
class UltradianParams:
    V_p: float
    V_i: float
    V_g: float
    E: float
    t_p: float
    t_i: float
    t_d: float
    R_m: float
    a_1: float
    C_1: float
    C_2: float
    C_3: float
    C_4: float
    C_5: float
    U_b: float
    U_0: float
    U_m: float
    R_g: float
    alpha: float
    beta: float

    def __post_init__(self):
        for name in ("V_p", "V_i", "V_g", "t_p", "t_i", "t_d", "beta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for f in dataclasses.fields(self):
            if not np.isfinite(getattr(self, f.name)):
                raise ValueError(f"{f.name} must be finite")

    @classmethod
    def default(cls, **overrides) -> "UltradianParams":
        values = {k: float(v) for k, v in _defaults()["params"].items()}
        unknown = set(overrides) - set(values)
        if unknown:
            raise ValueError(f"unknown ultradian parameter(s): {sorted(unknown)}")
        values.update({k: float(v) for k, v in overrides.items()})
        return cls(**values)

    @property
    def kappa(self) -> float:
        return (1.0 / self.V_i - 1.0 / (self.E * self.t_i)) / self.C_4

    def replace(self, **kw) -> "UltradianParams":
        return dataclasses.replace(self, **kw)


@dataclass(frozen=True)
class MealSchedule:
    """Meal times (min) and carbohydrate amounts; ``scale`` converts the
    amounts to the glucose units of the model."""

    times: tuple[float, ...] = ()
    carbs: tuple[float, ...] = ()
    k: float = 0.5
    scale: float = 1.0

    def __post_init__(self):
        t = tuple(float(x) for x in self.times)
        m = tuple(float(x) for x in self.carbs)
        if len(t) != len(m):
            raise ValueError("meal times and carbs must have equal length")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("meal times must be strictly increasing")
        if not self.k > 0:
            raise ValueError("meal decay constant k must be positive")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "carbs", m)

    @classmethod
    def default(cls, times=(), carbs=(), **overrides) -> "MealSchedule":
        meal = {k: float(v) for k, v in _defaults()["meal"].items()}
        meal.update(overrides)
        return cls(tuple(times), tuple(carbs), **meal)


def meal_forcing(t: float, schedule: MealSchedule) -> float:
    """sum over meals with t_j < t of scale * m_j * k/60 * exp(k (t_j - t))."""
    total = 0.0
    c = schedule.scale * schedule.k / 60.0
    for tj, mj in zip(schedule.times, schedule.carbs):
        if tj < t:
            total += c * mj * np.exp(schedule.k * (tj - t))
    return total


def f1(G, p: UltradianParams):
    return p.R_m / (1.0 + np.exp(-G / (p.V_g * p.C_1) + p.a_1))


def f2(G, p: UltradianParams):
    return p.U_b * (1.0 - np.exp(-G / (p.C_2 * p.V_g)))


def f3(I_i, p: UltradianParams):
    # (kappa I)^-beta written as x^beta / (1 + x^beta); clipping at zero keeps
    # the rate defined (and equal to its limit) for nonpositive insulin
    x = max(p.kappa * I_i, 0.0) ** p.beta
    return (p.U_0 + (p.U_m - p.U_0) * x / (1.0 + x)) / (p.C_3 * p.V_g)


def f4(h3, p: UltradianParams, R_g: float | None = None):
    R_g = p.R_g if R_g is None else R_g
    # exp overflow for very negative h3 saturates to the correct limit R_g or 0
    with np.errstate(over="ignore"):
        return R_g / (1.0 + np.exp(p.alpha * (h3 / (p.C_5 * p.V_p) - 1.0)))


def ultradian_rhs(state, t: float, params: UltradianParams, schedule: MealSchedule,
                  R_g: float | None = None) -> np.ndarray:
    I_p, I_i, G, h1, h2, h3 = state
    p = params
    exchange = p.E * (I_p / p.V_p - I_i / p.V_i)
    return np.array([
        f1(G, p) - exchange - I_p / p.t_p,
        exchange - I_i / p.t_i,
        f4(h3, p, R_g) + meal_forcing(t, schedule) - f2(G, p) - f3(I_i, p) * G,
        (I_p - h1) / p.t_d,
        (h1 - h2) / p.t_d,
        (h2 - h3) / p.t_d,
    ])


def psi_glucose(v, t0: float, t1: float, params: UltradianParams, schedule: MealSchedule,
                dt_max: float = 1.0) -> np.ndarray:
    """Advance the augmented state (6 ODE states, R_g) from t0 to t1.

    R_g is read from the last coordinate and carried over unchanged.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (7,):
        raise ValueError(f"augmented glucose state must have 7 entries, got {v.shape}")
    R_g = float(v[6])
    x = integrate(lambda t, y: ultradian_rhs(y, t, params, schedule, R_g), v[:6], t0, t1, dt_max)
    return np.concatenate([x, [R_g]])


@dataclass(frozen=True, eq=False)
class GlucoseTransition:
    """Psi_j over measurement times: step j maps times[j] to times[j+1].

    ``times[0]`` is the time of the initial ensemble.
    """

    times: np.ndarray
    params: UltradianParams
    schedule: MealSchedule
    dt_max: float = 1.0

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 1 or np.any(np.diff(t) <= 0):
            raise ValueError("measurement times must be strictly increasing")
        object.__setattr__(self, "times", t)

    def __call__(self, v, j: int) -> np.ndarray:
        return psi_glucose(v, self.times[j], self.times[j + 1], self.params, self.schedule,
                           self.dt_max)


def glucose_bounds():
    """Lower and upper bounds on the augmented state."""
    return np.array(STATE_LOWER), np.array(STATE_UPPER)
