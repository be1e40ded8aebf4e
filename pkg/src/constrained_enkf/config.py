"""Run configuration: YAML file -> validated dataclasses.

Unknown keys are rejected.  Every error names the offending field path and,
when it comes from a file, the line it was defined on.
"""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

KINDS = ("simulate", "filter", "invert")
MODELS = ("glucose", "wave")
VARIANTS = ("gain", "range", "constrained-original", "constrained-range")


class ConfigError(ValueError):
    def __init__(self, message: str, path: str = "", line: int | None = None):
        where = path or "<root>"
        if line is not None:
            where += f" (line {line})"
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line


class InfeasibleConfigError(ConfigError):
    """The configured constraint set is empty."""


@dataclass
class BoundsSpec:
    lower: list[float] | None = None
    upper: list[float] | None = None


@dataclass
class ConstraintSpec:
    """Either named ``preset`` bounds, explicit ``bounds``, or F/f/G/g blocks.

    For inversions the blocks act on the parameters; ``F_w``... on the data.
    """

    preset: str | None = None
    bounds: BoundsSpec | None = None
    F: list[list[float]] | None = None
    f: list[float] | None = None
    G: list[list[float]] | None = None
    g: list[float] | None = None
    F_w: list[list[float]] | None = None
    f_w: list[float] | None = None
    G_w: list[list[float]] | None = None
    g_w: list[float] | None = None
    labels: list[str] | None = None


@dataclass
class EnsembleSpec:
    N: int = 13
    variant: str = "constrained-range"
    perturb: int = 1
    ddof: int = 0


@dataclass
class GlucoseSpec:
    params: dict[str, float] = field(default_factory=dict)
    meal_k: float | None = None
    meal_scale: float | None = None
    dt_max: float = 1.0
    # simulation
    initial_state: list[float] = field(
        default_factory=lambda: [40.0, 80.0, 10000.0, 40.0, 40.0, 40.0, 180.0])
    start_time: float = 0.0
    obs_interval: float = 10.0
    obs_count: int = 144
    meals: list[list[float]] = field(default_factory=list)
    obs_std: float = 400.0
    # filtering
    data: str | None = None
    initial_mean: list[float] | None = None
    initial_std: list[float] | None = None
    process_std: list[float] = field(default_factory=lambda: [0.0] * 7)
    steps: int | None = None


@dataclass
class WaveGridSpec:
    depth: float = 50.0
    nz: int = 50
    dt: float = 1e-4
    T: float = 0.6
    sample_every: int = 20
    peak_frequency: float = 5.0
    amplitude: float = 1e-3
    max_refinement: int = 64


@dataclass
class WaveSpec:
    grid: WaveGridSpec = field(default_factory=WaveGridSpec)
    truth: list[float] = field(default_factory=lambda: [200.0, 0.5, 5.0, 0.5, 30.0, 1.5])
    noise_fraction: float = 0.05
    data: str | None = None
    # noise std for a measurement file; default noise_fraction * max|y|
    noise_std: float | None = None
    prior_lower: list[float] = field(default_factory=lambda: [0.0, 0.0, 0.0, 0.0, 0.0, 1.0])
    prior_upper: list[float] = field(default_factory=lambda: [1000.0, 100.0, 50.0, 1.0, 50.0, 10.0])
    max_transition_velocity: float = 5000.0
    max_draws: int = 100000
    iterations: int = 40
    profile_depths: list[float] | None = None


@dataclass
class RunConfig:
    kind: str
    model: str
    seed: int = 0
    output: str = "out"
    tol: float = 1e-9
    ensemble: EnsembleSpec = field(default_factory=EnsembleSpec)
    constraints: ConstraintSpec | None = None
    glucose: GlucoseSpec | None = None
    wave: WaveSpec | None = None
    base_dir: str = field(default=".", metadata={"internal": True})

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else Path(os.path.normpath(Path(self.base_dir) / path))


# ---------------------------------------------------------------------------
# generic dict -> dataclass conversion

class _Lines:
    """Line numbers of mapping keys, by dotted path."""

    def __init__(self, node=None):
        self.lines: dict[str, int] = {}
        if node is not None:
            self._walk(node, "")

    def _walk(self, node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                sub = f"{path}.{k.value}" if path else str(k.value)
                self.lines[sub] = k.start_mark.line + 1
                self._walk(v, sub)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                sub = f"{path}[{i}]"
                self.lines[sub] = v.start_mark.line + 1
                self._walk(v, sub)

    def get(self, path):
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path.rsplit(".", 1)[0] if "." in path else ""
        return None


def _convert(tp, value, path, lines: _Lines):
    def fail(msg):
        raise ConfigError(msg, path, lines.get(path))

    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or (origin is not None and str(origin) == "<class 'types.UnionType'>"):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(inner[0], value, path, lines)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            fail(f"expected a mapping, got {type(value).__name__}")
        return _build(tp, value, path, lines)
    if origin is list:
        if not isinstance(value, list):
            fail(f"expected a list, got {type(value).__name__}")
        return [_convert(args[0], v, f"{path}[{i}]", lines) for i, v in enumerate(value)]
    if origin is dict:
        if not isinstance(value, dict):
            fail(f"expected a mapping, got {type(value).__name__}")
        return {str(k): _convert(args[1], v, f"{path}.{k}", lines) for k, v in value.items()}
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            fail(f"expected a number, got {value!r}")
        if not np.isfinite(value):
            fail("must be finite")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            fail(f"expected an integer, got {value!r}")
        return int(value)
    if tp is str:
        if not isinstance(value, str):
            fail(f"expected a string, got {value!r}")
        return value
    return value


def _build(cls, data: dict, path: str, lines: _Lines):
    hints = typing.get_type_hints(cls)
    names = {f.name: f for f in dataclasses.fields(cls) if not f.metadata.get("internal")}
    for key in data:
        if key not in names:
            sub = f"{path}.{key}" if path else str(key)
            raise ConfigError(f"unknown key {key!r}", sub, lines.get(sub))
    kwargs = {}
    for name, f in names.items():
        sub = f"{path}.{name}" if path else name
        if name in data:
            kwargs[name] = _convert(hints[name], data[name], sub, lines)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError("required key missing", sub, lines.get(path))
    return cls(**kwargs)


# ---------------------------------------------------------------------------
# semantic checks

def _check(cond, msg, path, lines):
    if not cond:
        raise ConfigError(msg, path, lines.get(path))


def _validate(cfg: RunConfig, lines: _Lines):
    _check(cfg.kind in KINDS, f"must be one of {KINDS}", "kind", lines)
    _check(cfg.model in MODELS, f"must be one of {MODELS}", "model", lines)
    _check(cfg.tol > 0, "must be positive", "tol", lines)
    _check(cfg.seed >= 0, "must be nonnegative", "seed", lines)
    e = cfg.ensemble
    _check(e.N >= 2, "an ensemble needs N >= 2", "ensemble.N", lines)
    _check(e.variant in VARIANTS, f"must be one of {VARIANTS}", "ensemble.variant", lines)
    _check(e.perturb in (0, 1), "must be 0 or 1", "ensemble.perturb", lines)
    _check(e.ddof in (0, 1), "must be 0 or 1", "ensemble.ddof", lines)
    if cfg.kind == "invert":
        _check(cfg.model == "wave", "inversion is defined for the wave model", "model", lines)
        _check(e.variant in ("gain", "constrained-original", "constrained-range"),
               "inversions use 'gain' (unconstrained) or a constrained variant",
               "ensemble.variant", lines)
    if cfg.kind == "filter":
        _check(cfg.model == "glucose", "filtering is defined for the glucose model", "model", lines)
    if cfg.model == "glucose":
        if cfg.glucose is None:
            cfg.glucose = GlucoseSpec()
        _validate_glucose(cfg, lines)
    else:
        if cfg.wave is None:
            cfg.wave = WaveSpec()
        _validate_wave(cfg, lines)
    if e.variant.startswith("constrained") and cfg.kind != "simulate":
        _check(cfg.constraints is not None, f"variant {e.variant!r} needs a constraints section",
               "ensemble.variant", lines)


def _validate_glucose(cfg: RunConfig, lines: _Lines):
    g = cfg.glucose
    for name in ("initial_state", "process_std"):
        _check(len(getattr(g, name)) == 7, "needs 7 entries (I_p, I_i, G, h_1, h_2, h_3, R_g)",
               f"glucose.{name}", lines)
    for name in ("initial_mean", "initial_std"):
        if getattr(g, name) is not None:
            _check(len(getattr(g, name)) == 7, "needs 7 entries", f"glucose.{name}", lines)
    _check(all(s >= 0 for s in g.process_std), "must be nonnegative", "glucose.process_std", lines)
    _check(g.obs_std > 0, "must be positive", "glucose.obs_std", lines)
    _check(g.dt_max > 0, "must be positive", "glucose.dt_max", lines)
    _check(g.obs_interval > 0, "must be positive", "glucose.obs_interval", lines)
    _check(g.obs_count >= 1, "must be >= 1", "glucose.obs_count", lines)
    for i, m in enumerate(g.meals):
        _check(len(m) == 2, "each meal is [time, carbs]", f"glucose.meals[{i}]", lines)
    if cfg.kind == "filter":
        _check(g.data is not None, "filtering needs a measurement file", "glucose.data", lines)
    from .models.ultradian import UltradianParams
    try:
        UltradianParams.default(**g.params)
    except ValueError as exc:
        raise ConfigError(str(exc), "glucose.params", lines.get("glucose.params")) from None
    _validate_constraints(cfg, 7, 0, lines)


def _validate_wave(cfg: RunConfig, lines: _Lines):
    w = cfg.wave
    for name in ("truth", "prior_lower", "prior_upper"):
        _check(len(getattr(w, name)) == 6, "needs 6 entries (c_s0, k, z_0, n, z_1, alpha)",
               f"wave.{name}", lines)
    _check(all(a <= b for a, b in zip(w.prior_lower, w.prior_upper)),
           "prior_lower must not exceed prior_upper", "wave.prior_lower", lines)
    _check(w.noise_fraction > 0, "must be positive", "wave.noise_fraction", lines)
    _check(w.noise_std is None or w.noise_std > 0, "must be positive", "wave.noise_std", lines)
    _check(w.iterations >= 0, "must be >= 0", "wave.iterations", lines)
    _check(w.max_draws >= cfg.ensemble.N, "must be >= ensemble.N", "wave.max_draws", lines)
    from .models.wave import WaveGrid
    try:
        grid = WaveGrid(**dataclasses.asdict(w.grid))
    except ValueError as exc:
        raise ConfigError(str(exc), "wave.grid", lines.get("wave.grid")) from None
    if w.profile_depths is not None:
        _check(all(0 <= z <= grid.depth for z in w.profile_depths),
               f"depths must lie in [0, {grid.depth}]", "wave.profile_depths", lines)
    _validate_constraints(cfg, 6, grid.n_samples, lines)


def _matrix(rows, cols, path, lines):
    A = np.asarray(rows, dtype=float)
    if A.size == 0:
        return np.zeros((0, cols))
    _check(A.ndim == 2, "must be a list of equal-length rows", path, lines)
    _check(A.shape[1] == cols, f"rows must have {cols} entries (state dimension), got {A.shape[1]}",
           path, lines)
    return A


def _validate_constraints(cfg: RunConfig, d: int, k: int, lines: _Lines):
    c = cfg.constraints
    if c is None:
        return
    if c.preset is not None:
        presets = {"glucose": ("glucose", "state bounds"), "wave": ("wave", "parameter boxes")}
        _check(c.preset in presets and presets[c.preset][0] == cfg.model,
               f"unknown preset for model {cfg.model!r} (use {cfg.model!r})",
               "constraints.preset", lines)
    if c.bounds is not None:
        for name in ("lower", "upper"):
            v = getattr(c.bounds, name)
            if v is not None:
                _check(len(v) == d, f"needs {d} entries", f"constraints.bounds.{name}", lines)
    for A, b, cols in (("F", "f", d), ("G", "g", d), ("F_w", "f_w", k), ("G_w", "g_w", k)):
        rows = getattr(c, A)
        rhs = getattr(c, b)
        if rows is None and rhs is None:
            continue
        _check(rows is not None and rhs is not None, f"{A} and {b} must be given together",
               f"constraints.{A}", lines)
        M = _matrix(rows, cols, f"constraints.{A}", lines)
        _check(len(rhs) == M.shape[0], f"needs {M.shape[0]} entries to match {A}",
               f"constraints.{b}", lines)
    if cfg.model == "glucose":
        _check(c.F_w is None and c.G_w is None, "data-space blocks apply to inversions only",
               "constraints", lines)
    # feasibility (phase-1) is certified when the constraint object is built
    from .constrained import InfeasibleConstraintsError
    from .experiments import build_constraints
    try:
        build_constraints(cfg)
    except InfeasibleConstraintsError as exc:
        raise InfeasibleConfigError(f"infeasible constraint set: {exc}", "constraints",
                          lines.get("constraints")) from None


def config_from_dict(data: dict, base_dir: str = ".", lines: _Lines | None = None) -> RunConfig:
    lines = lines or _Lines()
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping")
    cfg = _build(RunConfig, data, "", lines)
    cfg.base_dir = str(base_dir)
    _validate(cfg, lines)
    return cfg


def parse_config(path, overrides: dict | None = None) -> RunConfig:
    """Read and validate a YAML run configuration.

    ``overrides`` replaces top-level keys (e.g. kind or seed from the command line).
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", str(path)) from None
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}", str(path),
                          mark.line + 1 if mark else None) from None
    if data is None:
        raise ConfigError("empty config file", str(path))
    if overrides and isinstance(data, dict):
        data.update(overrides)
    return config_from_dict(data, base_dir=str(path.parent), lines=_Lines(node))
