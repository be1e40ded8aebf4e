import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from constrained_enkf.constrained import (InfeasibleConstraintsError, LinearConstraints,
                                          ViolationReport, constrained_filter_run,
                                          constrained_range_coefficients,
                                          constrained_update_original, constrained_update_range,
                                          regularized_constrained_update, violates,
                                          violation_report)
from constrained_enkf.enkf import FilterModel, analysis_update, filter_run, range_update
from constrained_enkf.ensemble import Ensemble, compute_stats, range_residual
from constrained_enkf.models.ultradian import AUGMENTED_NAMES, glucose_bounds

from _instances import feasible_constraints, rel_err, update_instance


def scalar_setup():
    # C = 1 from members {1, -1}; v_hat = 0 is handled by passing it explicitly
    ens = Ensemble(np.array([[1.0], [-1.0]]))
    return ens, compute_stats(ens), FilterModel(None, np.eye(1), 0.0, 1.0, perturb=0)


def test_violates_interior_and_tolerance_band():
    c = LinearConstraints(1, G=[[1.0]], g=[1.0])
    assert violates([0.0], c) == []
    assert violates([1.0 + 1e-9], c) == []  # tol = 2e-9
    assert violates([1.0 + 1e-8], c) == [0]
    with pytest.raises(ValueError):
        violates([0.0], c, tol=-1.0)


def test_glucose_lower_bound_reported():
    lo, hi = glucose_bounds()
    c = LinearConstraints.bounds(lo, hi, AUGMENTED_NAMES)
    v = np.array([1.0, 1.0, 1999.0, 1.0, 1.0, 1.0, 100.0])
    rows = violates(v, c)
    assert [c.labels[i] for i in rows] == ["G>=2000"]


def test_infeasible_set_rejected_at_construction():
    with pytest.raises(InfeasibleConstraintsError):
        LinearConstraints(1, G=[[1.0], [-1.0]], g=[0.0, -1.0])
    with pytest.raises(ValueError):
        LinearConstraints(2, G=[[1.0]], g=[0.0])


def test_scalar_active_bound_both_variants():
    ens, s, model = scalar_setup()
    c = LinearConstraints(1, G=[[1.0]], g=[0.5])
    # unconstrained optimum of 1/2 (2 - v)^2 + 1/2 v^2 is 1; the bound caps it
    v0 = analysis_update(Ensemble(np.array([[0.0], [0.0]])), s, model, np.array([[2.0], [2.0]]))
    np.testing.assert_allclose(v0.members[0], [1.0])
    np.testing.assert_allclose(constrained_update_original([0.0], s, model, [2.0], c), [0.5],
                               atol=1e-12)
    np.testing.assert_allclose(constrained_update_range([0.0], s, model, [2.0], c), [0.5],
                               atol=1e-12)


def test_inactive_constraints_give_unconstrained_answer():
    rng = np.random.default_rng(0)
    inst = update_instance(rng, d=4, k=2, N=3)
    c = LinearConstraints(4, G=np.eye(4), g=np.full(4, 1e6))
    ref = analysis_update(inst.ensemble, inst.stats, inst.model, inst.Y).members[1]
    for fn in (constrained_update_original, constrained_update_range):
        v = fn(inst.ensemble.members[1], inst.stats, inst.model, inst.Y[1], c)
        assert np.abs(v - ref).max() <= 1e-9 * inst.scale
    b = constrained_range_coefficients(inst.ensemble.members[1], inst.stats, inst.model,
                                       inst.Y[1], c)
    ref_b = range_update(inst.ensemble, inst.stats, inst.model, inst.Y).members[1]
    np.testing.assert_allclose(inst.ensemble.members[1] + inst.stats.B @ b, ref_b, atol=1e-9)


def test_equality_reproduces_data_interpolation():
    rng = np.random.default_rng(4)
    inst = update_instance(rng, d=4, k=2, N=4)
    H = inst.model.H
    y = H @ (inst.ensemble.members[0] + inst.stats.B @ rng.standard_normal(4))
    c = LinearConstraints(4, F=H, f=y)
    v = constrained_update_original(inst.ensemble.members[0], inst.stats, inst.model, y, c)
    np.testing.assert_allclose(H @ v, y, atol=1e-9)
    # direct KKT solve of min 1/2|z|^2_diag(1/lam) s.t. H(v_hat + U z) = y
    U, lam = inst.stats.range_basis()
    HU = H @ U
    Gi = np.linalg.inv(inst.model.obs_cov)
    P = HU.T @ Gi @ HU + np.diag(1 / lam)
    r = y - H @ inst.ensemble.members[0]
    K = np.block([[P, HU.T], [HU, np.zeros((2, 2))]])
    z = np.linalg.solve(K, np.concatenate([HU.T @ Gi @ r, r]))[: U.shape[1]]
    np.testing.assert_allclose(v, inst.ensemble.members[0] + U @ z, atol=1e-9)


def test_unreachable_constraint_raises():
    # constraint on a coordinate the ensemble does not vary in, violated at v_hat
    ens = Ensemble(np.array([[0.0, 5.0], [1.0, 5.0], [2.0, 5.0]]))
    s = compute_stats(ens)
    model = FilterModel(None, [[1.0, 0.0]], 0.0, 1.0, perturb=0)
    c = LinearConstraints(2, G=[[0.0, 1.0]], g=[4.0])
    for fn in (constrained_update_original, constrained_update_range):
        with pytest.raises(InfeasibleConstraintsError):
            fn(ens.members[0], s, model, [1.0], c)


def test_never_active_run_matches_filter_run():
    rng = np.random.default_rng(3)
    model = FilterModel.autonomous(lambda v: 0.9 * v, np.eye(2)[:1], process_cov=0.1,
                                   obs_cov=1.0)
    ens = Ensemble(rng.standard_normal((4, 2)))
    data = [rng.standard_normal(1) for _ in range(4)]
    c = LinearConstraints.bounds([-1e3, -1e3], [1e3, 1e3])
    for variant, base in (("original", "gain"), ("range", "range")):
        run, report = constrained_filter_run(model, ens, data, c, variant, seed=5)
        ref = filter_run(model, ens, data, 5, base)
        for a, b in zip(run.ensembles, ref.ensembles):
            np.testing.assert_array_equal(a.members, b.members)
        assert not report.matrix.any() and report.matrix.shape == (c.rows, 4)


def test_constrained_run_is_feasible_and_reports_pre_solve_violations():
    rng = np.random.default_rng(7)
    model = FilterModel.autonomous(lambda v: v + 0.3, np.array([[1.0, 1.0, 0.0]]),
                                   process_cov=0.2, obs_cov=0.5)
    ens = Ensemble(rng.uniform(0.1, 1.0, (6, 3)))
    data = [np.array([-1.0 + 0.2 * j]) for j in range(6)]
    c = LinearConstraints.bounds([0.0, 0.0, 0.0], [np.inf] * 3)
    run, report = constrained_filter_run(model, ens, data, c, "range", seed=2)
    for e in run.ensembles[1:]:
        assert all(not violates(v, c, tol=1e-8) for v in e.members)
    unconstrained = filter_run(model, ens, data, 2, "range")
    assert violation_report(unconstrained, c).matrix.any()
    assert report.matrix.any()


def test_violation_report_fraction_and_csv(tmp_path):
    rep = ViolationReport(("a", "b"))
    rep.record([[0], [0, 1], [], [0], [], [], [], [], [], [], [], [], [0]], 13)
    assert rep.matrix[0, 0] == pytest.approx(4 / 13)
    assert rep.resolved == [4]
    rep.to_csv(tmp_path / "v.csv")
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "constraint,step_1"
    assert lines[1] == f"a,{4 / 13:.17g}"


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_original_and_range_variants_agree(seed):
    rng = np.random.default_rng(seed)
    inst = update_instance(rng)
    n = int(rng.integers(0, inst.ensemble.N))
    c = feasible_constraints(rng, inst, n)
    args = (inst.ensemble.members[n], inst.stats, inst.model, inst.Y[n], c)
    a = constrained_update_original(*args)
    b = constrained_update_range(*args)
    assert rel_err(a, b) <= 1e-7
    for v in (a, b):
        assert c.max_violation(v) <= 1e-8 * inst.scale
        assert range_residual(inst.stats, v - inst.ensemble.members[n]) <= 1e-8 * inst.scale


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_regularized_constrained_limit(seed):
    rng = np.random.default_rng(seed)
    inst = update_instance(rng)
    c = feasible_constraints(rng, inst, 0, m_eq=0)
    args = (inst.ensemble.members[0], inst.stats, inst.model, inst.Y[0], c)
    ref = constrained_update_original(*args)
    errs = [np.linalg.norm(regularized_constrained_update(*args, eps) - ref)
            for eps in (1e-2, 1e-4, 1e-6, 1e-8)]
    assert all(b <= a * (1 + 1e-6) + 1e-10 for a, b in zip(errs, errs[1:]))
    assert errs[-1] <= 1e-4 * inst.scale
