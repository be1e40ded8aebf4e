"""End-to-end CLI runs on shortened configurations."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
import yaml

from constrained_enkf import cli
from constrained_enkf.io import ingest_measurements, read_csv_table

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _write_cfg(path: Path, data: dict) -> Path:
    path.write_text(yaml.safe_dump(data, sort_keys=False))
    return path


def _glucose_pair(tmp_path, obs_count=12):
    sim = yaml.safe_load((CONFIGS / "glucose_simulate.yaml").read_text())
    sim["glucose"]["obs_count"] = obs_count
    sim["glucose"]["meals"] = [[15.0, 60.0]]
    sim["output"] = str(tmp_path / "sim")
    filt = yaml.safe_load((CONFIGS / "glucose_filter.yaml").read_text())
    filt["glucose"]["data"] = str(tmp_path / "sim" / "observations.csv")
    filt["output"] = str(tmp_path / "filter")
    return (_write_cfg(tmp_path / "sim.yaml", sim), _write_cfg(tmp_path / "filter.yaml", filt))


def _small_wave(tmp_path, **wave):
    cfg = yaml.safe_load((CONFIGS / "wave_invert.yaml").read_text())
    cfg["ensemble"]["N"] = 8
    cfg["wave"]["grid"].update(nz=25, T=0.25, sample_every=25)
    cfg["wave"]["iterations"] = 2
    cfg["wave"].update(wave)
    cfg["output"] = str(tmp_path / "wave")
    return cfg


def test_simulate_then_filter(tmp_path, capsys):
    sim, filt = _glucose_pair(tmp_path)
    assert cli.main(["simulate", "--config", str(sim)]) == 0
    series = ingest_measurements(tmp_path / "sim" / "observations.csv", "glucose")
    assert series.values.shape == (12, 1)
    assert series.meal_times.tolist() == [15.0]
    assert cli.main(["filter", "--config", str(filt)]) == 0
    header, rows = read_csv_table(tmp_path / "filter" / "trajectory.csv")
    assert header[:3] == ["step", "time", "member"]
    assert len(rows) == 13 * 13  # initial ensemble plus 12 analyses
    vh, vrows = read_csv_table(tmp_path / "filter" / "violations.csv")
    assert len(vh) == 1 + 12
    assert len(vrows) == 14  # 7 lower, 7 upper bounds
    printed = capsys.readouterr().out.split()
    assert str(tmp_path / "filter" / "mean_spread.csv") in printed


def test_filter_is_byte_identical_on_rerun(tmp_path):
    sim, filt = _glucose_pair(tmp_path, obs_count=6)
    assert cli.main(["simulate", "--config", str(sim)]) == 0
    assert cli.main(["filter", "--config", str(filt), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["filter", "--config", str(filt), "--out", str(tmp_path / "b")]) == 0
    for name in ("trajectory.csv", "mean_spread.csv", "violations.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_override_changes_output(tmp_path):
    sim, _ = _glucose_pair(tmp_path, obs_count=4)
    assert cli.main(["simulate", "--config", str(sim), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["simulate", "--config", str(sim), "--seed", "8",
                     "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "observations.csv").read_bytes()
    b = (tmp_path / "b" / "observations.csv").read_bytes()
    assert a != b


def test_validate_config(capsys):
    assert cli.main(["validate-config", "--config", str(CONFIGS / "glucose_filter.yaml")]) == 0
    assert "ok: filter glucose" in capsys.readouterr().out


def test_bad_config_exit_2(tmp_path, capsys):
    cfg = yaml.safe_load((CONFIGS / "glucose_filter.yaml").read_text())
    cfg["ensemble"]["N"] = 1
    path = _write_cfg(tmp_path / "bad.yaml", cfg)
    assert cli.main(["filter", "--config", str(path)]) == 2
    assert "ensemble.N" in capsys.readouterr().err


def test_missing_data_exit_2(tmp_path):
    cfg = yaml.safe_load((CONFIGS / "glucose_filter.yaml").read_text())
    cfg["glucose"]["data"] = str(tmp_path / "absent.csv")
    path = _write_cfg(tmp_path / "cfg.yaml", cfg)
    assert cli.main(["filter", "--config", str(path), "--out", str(tmp_path / "o")]) == 2


def test_infeasible_constraints_exit_4(tmp_path, capsys):
    cfg = yaml.safe_load((CONFIGS / "glucose_filter.yaml").read_text())
    cfg["constraints"] = {"bounds": {"lower": [0.0] * 7, "upper": [1e4] * 7},
                          "G": [[1, 1, 0, 0, 0, 0, 0]], "g": [-1.0]}
    path = _write_cfg(tmp_path / "cfg.yaml", cfg)
    assert cli.main(["validate-config", "--config", str(path)]) == 4
    assert cli.main(["filter", "--config", str(path)]) == 4
    assert "infeasible" in capsys.readouterr().err


def test_numerical_failure_exit_3(tmp_path, capsys):
    # time step far beyond the stability limit with refinement disabled
    cfg = _small_wave(tmp_path)
    cfg["ensemble"]["variant"] = "gain"
    cfg["wave"]["grid"].update(dt=1e-2, sample_every=1, max_refinement=1)
    path = _write_cfg(tmp_path / "cfg.yaml", cfg)
    assert cli.main(["invert", "--config", str(path)]) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_invert_outputs_and_plots(tmp_path):
    cfg = _small_wave(tmp_path, profile_depths=[2.0, 10.0, 25.0, 40.0])
    path = _write_cfg(tmp_path / "cfg.yaml", cfg)
    assert cli.main(["invert", "--config", str(path), "--plots"]) == 0
    out = tmp_path / "wave"
    header, rows = read_csv_table(out / "profile.csv")
    assert header == ["z", "cs_initial_mean", "cs_final_mean", "cs_true"]
    assert [float(r[0]) for r in rows] == [2.0, 10.0, 25.0, 40.0]
    eh, erows = read_csv_table(out / "ensemble_evolution.csv")
    assert eh[:2] == ["iteration", "parameter"]
    assert len(erows) == 3 * 6
    vh, vrows = read_csv_table(out / "violations.csv")
    assert len(vh) == 1 + 2 and len(vrows) == 12
    for name in ("mean_spread", "violations", "ensemble_evolution", "profile"):
        svg = out / f"{name}.svg"
        assert svg.exists() and svg.read_text().lstrip().startswith("<?xml")


def test_invert_from_simulated_file(tmp_path):
    cfg = _small_wave(tmp_path)
    cfg["kind"] = "simulate"
    cfg["output"] = str(tmp_path / "sim")
    sim = _write_cfg(tmp_path / "sim.yaml", cfg)
    assert cli.main(["simulate", "--config", str(sim)]) == 0
    header, rows = read_csv_table(tmp_path / "sim" / "observations.csv")
    clean = np.array([r[header.index("acceleration_clean")] for r in rows], dtype=float)
    inv = _small_wave(tmp_path, data=str(tmp_path / "sim" / "observations.csv"),
                      noise_std=float(cfg["wave"]["noise_fraction"] * np.abs(clean).max()))
    inv_path = _write_cfg(tmp_path / "inv.yaml", inv)
    assert cli.main(["invert", "--config", str(inv_path), "--out", str(tmp_path / "a")]) == 0
    direct = _small_wave(tmp_path)
    direct_path = _write_cfg(tmp_path / "direct.yaml", direct)
    assert cli.main(["invert", "--config", str(direct_path), "--out", str(tmp_path / "b")]) == 0
    a = np.array(read_csv_table(tmp_path / "a" / "mean_spread.csv")[1], dtype=float)
    b = np.array(read_csv_table(tmp_path / "b" / "mean_spread.csv")[1], dtype=float)
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_wave_data_length_mismatch_exit_2(tmp_path):
    data = tmp_path / "obs.csv"
    data.write_text("time,acceleration\n0.0,1.0\n0.1,2.0\n")
    cfg = _write_cfg(tmp_path / "cfg.yaml", _small_wave(tmp_path, data=str(data)))
    assert cli.main(["invert", "--config", str(cfg)]) == 2


def test_plots_are_deterministic(tmp_path):
    sim, filt = _glucose_pair(tmp_path, obs_count=4)
    assert cli.main(["simulate", "--config", str(sim)]) == 0
    for d in ("a", "b"):
        assert cli.main(["filter", "--config", str(filt), "--out", str(tmp_path / d),
                         "--plots"]) == 0
    for name in ("mean_spread.svg", "violations.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.yaml")))
def test_shipped_configs_validate(name):
    assert cli.main(["validate-config", "--config", str(CONFIGS / name)]) == 0
