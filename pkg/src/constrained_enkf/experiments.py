"""Assembly of the glucose filtering and wave inversion experiments from a RunConfig."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .constrained import LinearConstraints, ViolationReport, constrained_filter_run, violation_report
from .constrained_eki import LiftedConstraints, constrained_eki_run, rejection_sample_initial
from .eki import EkiHistory, InverseProblem, eki_run
from .enkf import FilterModel, FilterRun, NoiseStreams, filter_run
from .ensemble import Ensemble
from .models import ultradian as ud
from .models import wave as wv

GLUCOSE_H = np.array([[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]])


# ---------------------------------------------------------------------------
# constraints

def wave_parameter_constraints(depth: float, k: int = 0, lower=None, upper=None) -> LiftedConstraints:
    """Box constraints on (c_s0, k, z_0, n, z_1, alpha) plus z_0 <= z_1 <= depth.

    Twelve rows, as two inequalities per parameter interval; the interval for
    z_0 is [0, z_1] and the one for z_1 is [z_0, depth], so z_0 - z_1 <= 0
    appears twice.
    """
    lo = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 1.0]) if lower is None else np.asarray(lower, float)
    hi = np.array([1000.0, 100.0, depth, 1.0, depth, 10.0]) if upper is None else np.asarray(upper, float)
    names = wv.PARAM_NAMES
    G, g, labels = [], [], []

    def row(coefs, rhs, label):
        r = np.zeros(6)
        for i, c in coefs:
            r[i] = c
        G.append(r)
        g.append(rhs)
        labels.append(label)

    for i in range(6):
        if i == 2:
            row([(2, -1.0)], -lo[2], f"z_0>={lo[2]:g}")
            row([(2, 1.0), (4, -1.0)], 0.0, "z_0<=z_1")
        elif i == 4:
            row([(2, 1.0), (4, -1.0)], 0.0, "z_1>=z_0")
            row([(4, 1.0)], hi[4], f"z_1<={hi[4]:g}")
        else:
            row([(i, -1.0)], -lo[i], f"{names[i]}>={lo[i]:g}")
            row([(i, 1.0)], hi[i], f"{names[i]}<={hi[i]:g}")
    return LiftedConstraints(6, k, G_u=np.array(G), g_u=np.array(g), labels=tuple(labels))


def _explicit_blocks(spec, d):
    F = np.asarray(spec.F, float) if spec.F is not None else None
    G = np.asarray(spec.G, float) if spec.G is not None else None
    f = np.asarray(spec.f, float) if spec.f is not None else None
    g = np.asarray(spec.g, float) if spec.g is not None else None
    return F, f, G, g


def build_constraints(cfg: RunConfig):
    """LinearConstraints (glucose state) or LiftedConstraints (wave parameters/data)."""
    spec = cfg.constraints
    if spec is None:
        return None
    if cfg.model == "glucose":
        parts = []
        if spec.preset == "glucose":
            lo, hi = ud.glucose_bounds()
            parts.append(LinearConstraints.bounds(lo, hi, ud.AUGMENTED_NAMES))
        if spec.bounds is not None:
            lo = spec.bounds.lower if spec.bounds.lower is not None else [-np.inf] * 7
            hi = spec.bounds.upper if spec.bounds.upper is not None else [np.inf] * 7
            parts.append(LinearConstraints.bounds(lo, hi, ud.AUGMENTED_NAMES))
        F, f, G, g = _explicit_blocks(spec, 7)
        if F is not None or G is not None:
            parts.append(LinearConstraints(7, F, f, G, g, check_feasible=False))
        return _merge(parts, 7, spec.labels)
    grid = wave_grid(cfg)
    k = grid.n_samples
    blocks = []
    if spec.preset == "wave":
        blocks.append(wave_parameter_constraints(grid.depth, k))
    if spec.bounds is not None:
        lo = spec.bounds.lower if spec.bounds.lower is not None else [-np.inf] * 6
        hi = spec.bounds.upper if spec.bounds.upper is not None else [np.inf] * 6
        b = LinearConstraints.bounds(lo, hi, wv.PARAM_NAMES)
        blocks.append(LiftedConstraints(6, k, G_u=b.G, g_u=b.g, labels=b.labels))
    F, f, G, g = _explicit_blocks(spec, 6)
    Fw = np.asarray(spec.F_w, float) if spec.F_w is not None else None
    Gw = np.asarray(spec.G_w, float) if spec.G_w is not None else None
    fw = np.asarray(spec.f_w, float) if spec.f_w is not None else None
    gw = np.asarray(spec.g_w, float) if spec.g_w is not None else None
    if any(x is not None for x in (F, G, Fw, Gw)):
        blocks.append(LiftedConstraints(6, k, F, f, G, g, Fw, fw, Gw, gw))
    lifted = _merge_lifted(blocks, k, spec.labels)
    from .constrained_eki import assemble_lifted
    assemble_lifted(lifted)  # certifies the lifted set is nonempty
    return lifted


def _merge(parts, d, labels=None):
    if not parts:
        return None
    F = np.vstack([p.F for p in parts])
    f = np.concatenate([p.f for p in parts])
    G = np.vstack([p.G for p in parts])
    g = np.concatenate([p.g for p in parts])
    names = tuple(labels) if labels is not None else tuple(
        [l for p in parts for l in p.labels[: p.m_eq]] + [l for p in parts for l in p.labels[p.m_eq:]])
    return LinearConstraints(d, F, f, G, g, names)


def _merge_lifted(blocks, k, labels=None):
    if not blocks:
        return None
    cat = lambda name, cols: np.vstack([getattr(b, name) for b in blocks]) if blocks else np.zeros((0, cols))
    vec = lambda name: np.concatenate([getattr(b, name) for b in blocks])
    if labels is None:
        order = []
        for section in range(4):
            for b in blocks:
                sizes = [b.F_u.shape[0], b.F_w.shape[0], b.G_u.shape[0], b.G_w.shape[0]]
                start = sum(sizes[:section])
                order.extend(b._labels()[start: start + sizes[section]])
        labels = order
    return LiftedConstraints(6, k, cat("F_u", 6), vec("f_u"), cat("G_u", 6), vec("g_u"),
                             cat("F_w", k), vec("f_w"), cat("G_w", k), vec("g_w"), tuple(labels))


# ---------------------------------------------------------------------------
# glucose

@dataclass
class GlucoseData:
    """Observation times and values plus the meal table."""

    times: np.ndarray
    glucose: np.ndarray
    meal_times: np.ndarray
    meal_carbs: np.ndarray


def glucose_model(cfg: RunConfig):
    g = cfg.glucose
    params = ud.UltradianParams.default(**g.params)
    overrides = {}
    if g.meal_k is not None:
        overrides["k"] = g.meal_k
    if g.meal_scale is not None:
        overrides["scale"] = g.meal_scale
    return params, overrides


def glucose_schedule(cfg: RunConfig, meal_times, meal_carbs) -> ud.MealSchedule:
    _, overrides = glucose_model(cfg)
    return ud.MealSchedule.default(tuple(meal_times), tuple(meal_carbs), **overrides)


def simulate_glucose(cfg: RunConfig):
    """Truth trajectory at the observation times and noisy glucose readings.

    Returns (times, states (n+1, 7), GlucoseData); times[0] is the start time.
    """
    g = cfg.glucose
    params, _ = glucose_model(cfg)
    meals = sorted(g.meals)
    schedule = glucose_schedule(cfg, [m[0] for m in meals], [m[1] for m in meals])
    times = g.start_time + g.obs_interval * np.arange(g.obs_count + 1)
    psi = ud.GlucoseTransition(times, params, schedule, g.dt_max)
    states = [np.asarray(g.initial_state, dtype=float)]
    for j in range(g.obs_count):
        states.append(psi(states[-1], j))
    states = np.array(states)
    streams = NoiseStreams(cfg.seed)
    noise = np.array([streams.standard_normal("data", j, 0, 1)[0] for j in range(g.obs_count)])
    obs = states[1:, ud.GLUCOSE_INDEX] + g.obs_std * noise
    data = GlucoseData(times[1:], obs, np.array([m[0] for m in meals], dtype=float),
                       np.array([m[1] for m in meals], dtype=float))
    return times, states, data


def glucose_initial_ensemble(cfg: RunConfig) -> Ensemble:
    """Gaussian draws around the configured mean, truncated to the physiological box."""
    g = cfg.glucose
    mean = np.asarray(g.initial_mean if g.initial_mean is not None else g.initial_state, float)
    std = np.asarray(g.initial_std if g.initial_std is not None else 0.2 * np.abs(mean), float)
    streams = NoiseStreams(cfg.seed)
    lo, hi = ud.glucose_bounds()
    members = [np.clip(mean + std * streams.standard_normal("init", 0, n, 7), lo, hi)
               for n in range(cfg.ensemble.N)]
    return Ensemble(np.array(members))


def glucose_filter_model(cfg: RunConfig, data: GlucoseData) -> tuple[FilterModel, np.ndarray]:
    g = cfg.glucose
    keep = data.times > g.start_time
    times = np.concatenate([[g.start_time], data.times[keep]])
    obs = data.glucose[keep]
    if g.steps is not None:
        times = times[: g.steps + 1]
        obs = obs[: g.steps]
    if obs.size == 0:
        raise ValueError("no glucose observations after the start time")
    params, _ = glucose_model(cfg)
    schedule = glucose_schedule(cfg, data.meal_times, data.meal_carbs)
    psi = ud.GlucoseTransition(times, params, schedule, g.dt_max)
    model = FilterModel(psi, GLUCOSE_H, np.diag(np.square(g.process_std)), g.obs_std ** 2,
                        cfg.ensemble.perturb)
    return model, obs


def run_glucose_filter(cfg: RunConfig, data: GlucoseData):
    """Returns (FilterRun, ViolationReport or None, observation times)."""
    model, obs = glucose_filter_model(cfg, data)
    initial = glucose_initial_ensemble(cfg)
    constraints = build_constraints(cfg)
    variant = cfg.ensemble.variant
    series = [np.array([y]) for y in obs]
    if variant.startswith("constrained"):
        run, report = constrained_filter_run(model, initial, series, constraints,
                                             variant.replace("constrained-", ""), cfg.seed)
    else:
        run = filter_run(model, initial, series, cfg.seed, variant)
        report = violation_report(run, constraints) if constraints is not None else None
    return run, report, model.transition.times


# ---------------------------------------------------------------------------
# wave

def wave_grid(cfg: RunConfig) -> wv.WaveGrid:
    return wv.WaveGrid(**dataclasses.asdict(cfg.wave.grid))


def wave_problem(cfg: RunConfig, y, sigma: float) -> InverseProblem:
    grid = wave_grid(cfg)
    return InverseProblem(lambda u: wv.wave_forward(u, grid), y, sigma ** 2,
                          cfg.ensemble.perturb,
                          forward_batch=lambda U: wv.wave_forward_batch(U, grid))


def synthetic_wave_data(cfg: RunConfig):
    """(clean data, noisy data, noise std) from the configured truth."""
    grid = wave_grid(cfg)
    clean = wv.wave_forward(np.asarray(cfg.wave.truth, float), grid)
    sigma = cfg.wave.noise_fraction * np.abs(clean).max()
    noise = NoiseStreams(cfg.seed).standard_normal("data", 0, 0, clean.size)
    return clean, clean + sigma * noise, sigma


def wave_initial_ensemble(cfg: RunConfig, constraints: LiftedConstraints | None) -> Ensemble:
    w = cfg.wave
    grid = wave_grid(cfg)
    lo = np.asarray(w.prior_lower, float)
    hi = np.asarray(w.prior_upper, float)
    if constraints is None:
        constraints = wave_parameter_constraints(grid.depth, grid.n_samples)
    rng = NoiseStreams(cfg.seed).generator("init", 0, 0)
    return rejection_sample_initial(
        lambda r: r.uniform(lo, hi), constraints,
        lambda u: wv.velocity_at_transition(u) <= w.max_transition_velocity,
        cfg.ensemble.N, w.max_draws, rng)


def run_wave_inversion(cfg: RunConfig, y=None, sigma: float | None = None):
    """Returns (EkiHistory, ViolationReport or None, problem)."""
    if y is None:
        _, y, sigma = synthetic_wave_data(cfg)
    elif sigma is None and cfg.wave.noise_std is not None:
        sigma = cfg.wave.noise_std
    elif sigma is None:
        sigma = cfg.wave.noise_fraction * np.abs(y).max()
    problem = wave_problem(cfg, y, sigma)
    constraints = build_constraints(cfg)
    initial = wave_initial_ensemble(cfg, constraints)
    variant = cfg.ensemble.variant
    if variant.startswith("constrained"):
        hist, report = constrained_eki_run(problem, constraints, initial, cfg.wave.iterations,
                                           variant, cfg.seed)
    else:
        hist, report = eki_run(problem, initial, cfg.wave.iterations, cfg.seed), None
    return hist, report, problem


def profile_depths(cfg: RunConfig) -> np.ndarray:
    if cfg.wave.profile_depths is not None:
        return np.asarray(cfg.wave.profile_depths, float)
    H = cfg.wave.grid.depth
    return np.linspace(0.05 * H, 0.95 * H, 10)


def mean_profile(ensemble: Ensemble, z) -> np.ndarray:
    """Ensemble average of the member velocity profiles."""
    return np.mean([wv.cs_profile(z, wv.WaveParams.from_vector(u)) for u in ensemble.members], axis=0)


__all__ = ["FilterRun", "EkiHistory", "ViolationReport"]
