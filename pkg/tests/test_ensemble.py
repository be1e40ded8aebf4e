import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from constrained_enkf.ensemble import (Ensemble, EnsembleError, anomaly_apply, compute_stats,
                                       covariance_action_coefficients, range_residual)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def members(min_n=2, max_n=8, max_d=6):
    return st.tuples(st.integers(min_n, max_n), st.integers(1, max_d)).flatmap(
        lambda s: arrays(np.float64, s, elements=finite))


def test_identical_members_have_zero_spread():
    x = np.array([1.0, -2.0, 3.5])
    s = compute_stats(Ensemble(np.tile(x, (4, 1))))
    np.testing.assert_array_equal(s.mean, x)
    assert not s.covariance.any()
    assert not s.anomalies.any()


def test_two_members_covariance_is_outer_product():
    m, delta = np.array([1.0, 2.0]), np.array([0.5, -1.5])
    s = compute_stats(Ensemble(np.array([m + delta, m - delta])))
    np.testing.assert_allclose(s.covariance, np.outer(delta, delta), atol=1e-15)


def test_mean_of_three_members():
    s = compute_stats(Ensemble(np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 3.0]])))
    np.testing.assert_allclose(s.mean, [1.0, 4.0 / 3.0], rtol=1e-15)


def test_ddof_one_divisor():
    X = np.random.default_rng(0).standard_normal((5, 3))
    np.testing.assert_allclose(compute_stats(Ensemble(X), ddof=1).covariance, np.cov(X.T),
                               atol=1e-14)


@pytest.mark.parametrize("bad", [np.ones((1, 3)), np.ones(4), np.array([[1.0, np.nan], [0, 0]])])
def test_invalid_ensembles_rejected(bad):
    with pytest.raises(EnsembleError):
        Ensemble(bad)


def test_anomaly_apply_basic_cases():
    X = np.random.default_rng(1).standard_normal((4, 3))
    s = compute_stats(Ensemble(X))
    np.testing.assert_array_equal(anomaly_apply(s, np.zeros(4)), np.zeros(3))
    np.testing.assert_allclose(anomaly_apply(s, np.array([4.0, 0, 0, 0])), s.anomalies[0],
                               atol=1e-15)
    with pytest.raises(ValueError):
        anomaly_apply(s, np.zeros(3))


def test_covariance_action_matches_dense_product():
    rng = np.random.default_rng(2)
    for _ in range(50):
        N, d = rng.integers(2, 8), rng.integers(1, 7)
        s = compute_stats(Ensemble(rng.standard_normal((N, d)) * 10))
        a = rng.standard_normal(d)
        b = covariance_action_coefficients(s, a)
        assert np.linalg.norm(s.covariance @ a - anomaly_apply(s, b)) <= 1e-12 * max(
            1.0, np.linalg.norm(a) * np.abs(s.covariance).max())


def test_nullspace_direction_maps_to_zero():
    rng = np.random.default_rng(3)
    s = compute_stats(Ensemble(rng.standard_normal((3, 6))))
    lam, vec = np.linalg.eigh(s.covariance)
    a = vec[:, 0]  # eigenvalue ~ 0 since rank <= 2
    assert lam[0] < 1e-12
    assert np.linalg.norm(anomaly_apply(s, covariance_action_coefficients(s, a))) < 1e-12
    assert covariance_action_coefficients(s, np.zeros(6)).tolist() == [0.0, 0.0, 0.0]


def test_range_basis_excludes_null_space():
    rng = np.random.default_rng(4)
    s = compute_stats(Ensemble(rng.standard_normal((4, 6))))
    U, lam = s.range_basis()
    assert U.shape == (6, 3) and np.all(lam > 0)
    assert range_residual(s, s.anomalies[1]) < 1e-12


@settings(max_examples=60, deadline=None)
@given(members())
def test_anomalies_sum_to_zero_and_rebuild_covariance(X):
    s = compute_stats(Ensemble(X))
    scale = max(1.0, np.abs(X).max())
    assert np.abs(s.anomalies.sum(axis=0)).max() <= 1e-12 * scale * X.shape[0]
    direct = sum(np.outer(x - s.mean, x - s.mean) for x in X) / X.shape[0]
    assert np.abs(s.covariance - direct).max() <= 1e-13 * max(np.abs(direct).max(), 1e-300) + 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 5), st.integers(5, 8), st.integers(0, 2**32 - 1))
def test_rank_bounded_by_n_minus_one(N, d, seed):
    X = np.random.default_rng(seed).standard_normal((N, d))
    lam = np.linalg.eigvalsh(compute_stats(Ensemble(X)).covariance)
    assert np.all(lam[: d - N + 1] <= 1e-10 * lam[-1])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), finite, finite)
def test_anomaly_apply_is_linear(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    s = compute_stats(Ensemble(rng.standard_normal((5, 3))))
    b1, b2 = rng.standard_normal(5), rng.standard_normal(5)
    lhs = anomaly_apply(s, alpha * b1 + beta * b2)
    rhs = alpha * anomaly_apply(s, b1) + beta * anomaly_apply(s, b2)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * (1 + abs(alpha) + abs(beta)))
