"""Command-line entry point: simulate, filter, invert, validate-config."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import io
from .config import ConfigError, InfeasibleConfigError, RunConfig, parse_config
from .constrained import InfeasibleConstraintsError, QpFailure
from .constrained_eki import RejectionSamplingError
from .enkf import ForwardModelError
from .ensemble import EnsembleError
from .models import ultradian as ud
from .models import wave as wv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_INFEASIBLE = 0, 2, 3, 4

NUMERICAL_ERRORS = (ForwardModelError, QpFailure, EnsembleError, RejectionSamplingError,
                    np.linalg.LinAlgError, FloatingPointError)

log = logging.getLogger("constrained_enkf")


def _simulate(cfg: RunConfig, out: Path) -> list[Path]:
    if cfg.model == "glucose":
        times, states, data = ex.simulate_glucose(cfg)
        return [io.write_states(out / "truth.csv", times, states, ud.AUGMENTED_NAMES),
                io.write_glucose_observations(out / "observations.csv", data.times, data.glucose,
                                              data.meal_times, data.meal_carbs)]
    clean, noisy, _ = ex.synthetic_wave_data(cfg)
    grid = ex.wave_grid(cfg)
    z = ex.profile_depths(cfg)
    truth = wv.cs_profile(z, wv.WaveParams.from_vector(cfg.wave.truth))
    return [io.write_wave_observations(out / "observations.csv", grid.sample_times, noisy, clean),
            io.write_table(out / "truth_profile.csv", ["z", "cs_true"], zip(z, truth))]


def _filter(cfg: RunConfig, out: Path) -> list[Path]:
    series = io.ingest_measurements(cfg.resolve(cfg.glucose.data), "glucose")
    data = ex.GlucoseData(series.times, series.values[:, 0], series.meal_times, series.meal_carbs)
    run, report, times = ex.run_glucose_filter(cfg, data)
    names = ud.AUGMENTED_NAMES
    paths = [io.write_trajectory(out / "trajectory.csv", run.ensembles, names, times),
             io.write_mean_spread(out / "mean_spread.csv", run.ensembles, names, times)]
    if report is not None:
        report.to_csv(out / "violations.csv")
        paths.append(out / "violations.csv")
    return paths


def _invert(cfg: RunConfig, out: Path) -> list[Path]:
    y = sigma = None
    if cfg.wave.data is not None:
        series = io.ingest_measurements(cfg.resolve(cfg.wave.data), "wave")
        grid = ex.wave_grid(cfg)
        if series.times.size != grid.n_samples or not np.allclose(series.times, grid.sample_times):
            raise io.MeasurementError(
                f"data has {series.times.size} samples; the grid records {grid.n_samples} "
                f"at t = {grid.sample_times[0]:g}, {grid.sample_times[1]:g}, ...")
        y = series.values[:, 0]
    hist, report, _ = ex.run_wave_inversion(cfg, y, sigma)
    names = wv.PARAM_NAMES
    z = ex.profile_depths(cfg)
    paths = [io.write_trajectory(out / "trajectory.csv", hist.ensembles, names,
                                 step_name="iteration"),
             io.write_mean_spread(out / "mean_spread.csv", hist.ensembles, names,
                                  step_name="iteration"),
             io.write_ensemble_evolution(out / "ensemble_evolution.csv", hist.ensembles, names),
             io.write_profile(out / "profile.csv", z, ex.mean_profile(hist.ensembles[0], z),
                              ex.mean_profile(hist.final, z),
                              wv.cs_profile(z, wv.WaveParams.from_vector(cfg.wave.truth)))]
    if report is not None:
        report.to_csv(out / "violations.csv")
        paths.append(out / "violations.csv")
    return paths


RUNNERS = {"simulate": _simulate, "filter": _filter, "invert": _invert}


def run(cfg: RunConfig, out_dir=None, plots: bool = False) -> list[Path]:
    """Execute a validated config and return the written files."""
    out = Path(out_dir) if out_dir is not None else cfg.resolve(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    with np.errstate(over="ignore"):
        paths = RUNNERS[cfg.kind](cfg, out)
    if plots:
        from .plotting import plot_outputs

        paths += plot_outputs(out)
    return paths


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="constrained-enkf",
                                description="Constrained ensemble Kalman filtering and inversion.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("simulate", "filter", "invert", "validate-config"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="YAML run configuration")
        s.add_argument("--seed", type=int, help="overrides the config seed")
        if name != "validate-config":
            s.add_argument("--out", help="output directory (default: config 'output')")
            s.add_argument("--plots", action="store_true", help="also write SVG plots")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {}
    if args.command != "validate-config":
        overrides["kind"] = args.command
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        cfg = parse_config(args.config, overrides)
    except InfeasibleConfigError as exc:
        print(f"infeasible constraints: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleConstraintsError as exc:
        print(f"infeasible constraints: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    if args.command == "validate-config":
        print(f"ok: {cfg.kind} {cfg.model}, N={cfg.ensemble.N}, variant={cfg.ensemble.variant}")
        return EXIT_OK
    try:
        paths = run(cfg, args.out, args.plots)
    except (ConfigError, io.MeasurementError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleConstraintsError as exc:
        print(f"infeasible constraints: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for path in paths:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
