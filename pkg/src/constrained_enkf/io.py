"""Measurement ingestion and CSV emission.

Every float is written with 17 significant digits so files round-trip exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

FLOAT = "{:.17g}"

SCHEMAS = {
    # required value columns, optional meal column
    "glucose": (("glucose",), "carbs"),
    "wave": (("acceleration",), None),
}


class MeasurementError(ValueError):
    pass


@dataclass
class MeasurementSeries:
    """Observation rows plus, for glucose, the meal table."""

    times: np.ndarray
    values: np.ndarray  # (steps, k)
    columns: tuple[str, ...]
    meal_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    meal_carbs: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if self.times.size and np.any(np.diff(self.times) <= 0):
            raise MeasurementError("observation times must be strictly increasing")


def _cell(s: str):
    s = s.strip()
    return None if s == "" else s


def _number(s, line, col):
    try:
        x = float(s)
    except ValueError:
        raise MeasurementError(f"line {line}: column {col!r} is not a number: {s!r}") from None
    if not np.isfinite(x):
        raise MeasurementError(f"line {line}: column {col!r} must be finite")
    return x


def ingest_measurements(path, schema: str = "glucose") -> MeasurementSeries:
    """Read a headed CSV with a ``time`` column.

    Rows that carry a value in the observation columns are measurements; for
    the glucose schema, rows with a ``carbs`` entry are meals.  Meal rows may
    be interleaved with measurements in any order.
    """
    if schema not in SCHEMAS:
        raise MeasurementError(f"unknown schema {schema!r}")
    required, meal_col = SCHEMAS[schema]
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise MeasurementError(f"cannot read {path}: {exc}") from None
    with fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in ("time",) + required if c not in header]
        if missing:
            raise MeasurementError(f"{path}: missing column(s) {', '.join(missing)}")
        reader.fieldnames = header
        times, values, meals = [], [], []
        for row in reader:
            line = reader.line_num
            t = _cell(row.get("time") or "")
            if t is None:
                raise MeasurementError(f"line {line}: missing time")
            t = _number(t, line, "time")
            obs = [_cell(row.get(c) or "") for c in required]
            if all(o is not None for o in obs):
                times.append(t)
                values.append([_number(o, line, c) for o, c in zip(obs, required)])
            elif any(o is not None for o in obs):
                raise MeasurementError(f"line {line}: incomplete observation row")
            if meal_col is not None and _cell(row.get(meal_col) or "") is not None:
                meals.append((t, _number(row[meal_col], line, meal_col)))
    if not times:
        raise MeasurementError(f"{path}: no observation rows")
    times = np.array(times)
    bad = np.nonzero(np.diff(times) <= 0)[0]
    if bad.size:
        raise MeasurementError(
            f"{path}: observation times not strictly increasing at t = {times[bad[0] + 1]:g}")
    meals.sort(key=lambda m: m[0])
    return MeasurementSeries(times, np.array(values), required,
                             np.array([m[0] for m in meals], dtype=float),
                             np.array([m[1] for m in meals], dtype=float))


def _fmt(x) -> str:
    return FLOAT.format(float(x))


def write_table(path, header: Sequence[str], rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([r if isinstance(r, str) else (str(r) if isinstance(r, (int, np.integer))
                                                      else _fmt(r)) for r in row])
    return path


def write_glucose_observations(path, times, glucose, meal_times=(), meal_carbs=()):
    """Measurement and meal rows merged by time (meals first on ties)."""
    rows = [(float(t), 0, _fmt(t), _fmt(g), "") for t, g in zip(times, glucose)]
    rows += [(float(t), -1, _fmt(t), "", _fmt(c)) for t, c in zip(meal_times, meal_carbs)]
    rows.sort(key=lambda r: (r[0], r[1]))
    return write_table(path, ["time", "glucose", "carbs"], [r[2:] for r in rows])


def write_wave_observations(path, times, noisy, clean=None):
    header = ["time", "acceleration"] + (["acceleration_clean"] if clean is not None else [])
    cols = [times, noisy] + ([clean] if clean is not None else [])
    return write_table(path, header, zip(*cols))


def write_states(path, times, states, names):
    """One row per step of a single trajectory."""
    return write_table(path, ["step", "time", *names],
                  ([j, t, *x] for j, (t, x) in enumerate(zip(times, states))))


def write_trajectory(path, ensembles, names, times=None, step_name="step"):
    """Long format: one row per (step, member)."""
    def rows():
        for j, ens in enumerate(ensembles):
            M = ens.members if hasattr(ens, "members") else np.asarray(ens)
            for n, x in enumerate(M):
                lead = [j] + ([times[j]] if times is not None else [])
                yield [*lead, n, *x]
    header = [step_name] + (["time"] if times is not None else []) + ["member", *names]
    return write_table(path, header, rows())


def write_mean_spread(path, ensembles, names, times=None, step_name="step"):
    """Ensemble mean and standard deviation (divisor N) per step."""
    def rows():
        for j, ens in enumerate(ensembles):
            M = ens.members if hasattr(ens, "members") else np.asarray(ens)
            lead = [j] + ([times[j]] if times is not None else [])
            yield [*lead, *M.mean(axis=0), *M.std(axis=0)]
    header = ([step_name] + (["time"] if times is not None else [])
              + [f"mean_{n}" for n in names] + [f"spread_{n}" for n in names])
    return write_table(path, header, rows())


def write_ensemble_evolution(path, ensembles, names):
    """Per iteration and parameter: mean, std, min, quartiles, max."""
    def rows():
        for j, ens in enumerate(ensembles):
            M = ens.members
            q = np.percentile(M, [0, 25, 50, 75, 100], axis=0)
            for i, name in enumerate(names):
                yield [j, name, M[:, i].mean(), M[:, i].std(), *q[:, i]]
    return write_table(path, ["iteration", "parameter", "mean", "std", "min", "q25", "median",
                         "q75", "max"], rows())


def write_profile(path, z, initial, final, true):
    return write_table(path, ["z", "cs_initial_mean", "cs_final_mean", "cs_true"],
                  zip(z, initial, final, true))


def read_csv_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
