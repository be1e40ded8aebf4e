import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from constrained_enkf.models import ultradian as ud
from constrained_enkf.models import wave as wv
from constrained_enkf.models.ode import IntegrationError, integrate, n_substeps

from _instances import homogeneous_wave_error


# ---------------------------------------------------------------------------
# integrator

def test_exponential_growth():
    y = integrate(lambda t, y: y, np.array([1.0]), 0.0, 1.0, 1e-3)
    assert abs(y[0] - np.e) <= 1e-9


def test_fourth_order_convergence():
    errs = [abs(integrate(lambda t, y: y, np.array([1.0]), 0.0, 1.0, h)[0] - np.e)
            for h in (0.1, 0.05, 0.025)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all((orders >= 3.7) & (orders <= 4.3))


def test_trivial_intervals_and_zero_rhs():
    y0 = np.array([1.0, 2.0])
    np.testing.assert_array_equal(integrate(lambda t, y: y, y0, 3.0, 3.0, 0.1), y0)
    np.testing.assert_array_equal(integrate(lambda t, y: 0 * y, y0, 0.0, 5.0, 0.1), y0)
    assert n_substeps(0.0, 1.0, 0.1) == 10
    with pytest.raises(ValueError):
        integrate(lambda t, y: y, y0, 1.0, 0.0, 0.1)


def test_blow_up_reported():
    with pytest.raises(IntegrationError), np.errstate(over="ignore"):
        integrate(lambda t, y: y ** 2, np.array([1.0]), 0.0, 2.0, 0.01)


# ---------------------------------------------------------------------------
# ultradian model

def test_meal_forcing():
    s = ud.MealSchedule.default((60.0, 120.0), (50.0, 30.0))
    assert ud.meal_forcing(30.0, s) == 0.0
    c = s.scale * s.k / 60
    assert ud.meal_forcing(60.0 + 1e-12, s) == pytest.approx(c * 50.0, rel=1e-9)
    t = 200.0
    direct = c * (50 * np.exp(s.k * (60 - t)) + 30 * np.exp(s.k * (120 - t)))
    assert ud.meal_forcing(t, s) == pytest.approx(direct, rel=1e-14)


def test_rate_functions():
    p = ud.UltradianParams.default()
    assert ud.f2(0.0, p) == 0.0
    assert ud.f4(-1e6, p) == pytest.approx(p.R_g)
    assert ud.f4(1e6, p) == pytest.approx(0.0, abs=1e-300)
    assert ud.f3(-5.0, p) == ud.f3(0.0, p) == pytest.approx(p.U_0 / (p.C_3 * p.V_g))


def test_delay_chain_fixed_point():
    p = ud.UltradianParams.default()
    rhs = ud.ultradian_rhs(np.array([50.0, 80.0, 9000.0, 50.0, 50.0, 50.0]), 0.0, p,
                           ud.MealSchedule.default())
    np.testing.assert_array_equal(rhs[3:], 0.0)


def test_defaults_are_config_entries():
    p = ud.UltradianParams.default(t_d=10.0)
    assert p.t_d == 10.0 and p.R_g == 180.0
    with pytest.raises((TypeError, ValueError)):
        ud.UltradianParams.default(not_a_parameter=1.0)


def test_transition_properties():
    p = ud.UltradianParams.default()
    s = ud.MealSchedule.default((30.0,), (60.0,))
    v = np.array([40.0, 80.0, 10000.0, 40.0, 40.0, 40.0, 150.0])
    full = ud.psi_glucose(v, 0.0, 20.0, p, s)
    half = ud.psi_glucose(ud.psi_glucose(v, 0.0, 10.0, p, s), 10.0, 20.0, p, s)
    assert full[6] == 150.0
    assert np.abs(full - half).max() <= 1e-9 * np.abs(full).max()
    again = ud.psi_glucose(v, 0.0, 20.0, p, s)
    assert full.tobytes() == again.tobytes()
    psi = ud.GlucoseTransition(np.array([0.0, 10.0, 20.0]), p, s)
    np.testing.assert_array_equal(psi(psi(v, 0), 1), half)
    with pytest.raises(ValueError):
        ud.GlucoseTransition(np.array([0.0, 0.0]), p, s)


def test_glucose_bounds_are_the_physiological_box():
    lo, hi = ud.glucose_bounds()
    np.testing.assert_array_equal(lo, [0.01, 0.01, 2000, 0.01, 0.01, 0.01, 0])
    np.testing.assert_array_equal(hi, [10000, 10000, 40000, 10000, 10000, 10000, 1e6])


# ---------------------------------------------------------------------------
# wave model

TRUTH = wv.WaveParams(200.0, 0.5, 5.0, 0.5, 30.0, 1.5)


def test_profile_pieces():
    p = TRUTH
    assert wv.cs_profile(2.0, p) == 200.0
    assert wv.cs_profile(5.0, p) == 200.0
    mid = 200.0 * (1 + 0.5 * 10.0) ** 0.5
    assert wv.cs_profile(15.0, p) == pytest.approx(mid, rel=1e-15)
    top = 200.0 * (1 + 0.5 * 25.0) ** 0.5
    assert wv.cs_profile(30.0, p) == pytest.approx(top, rel=1e-15)
    assert wv.cs_profile(40.0, p) == pytest.approx(1.5 * top, rel=1e-15)
    assert wv.velocity_at_transition(p.to_vector()) == pytest.approx(1.5 * top)
    with pytest.raises(ValueError):
        wv.cs_profile(-1.0, p)


@settings(max_examples=100, deadline=None)
@given(st.floats(1, 1000), st.floats(0, 100), st.floats(0, 25), st.floats(0, 1),
       st.floats(25, 50), st.floats(1, 10))
def test_profile_continuity_and_jump(c, k, z0, n, z1, alpha):
    p = wv.WaveParams(c, k, z0, n, z1, alpha)
    assert wv.cs_profile(z0, p) == c
    below = float(wv._profile(np.nextafter(z1, 100.0), c, k, z0, n, z1, alpha))
    assert below == pytest.approx(alpha * wv.cs_profile(z1, p), rel=1e-14)


def test_zero_input_gives_zero_output():
    grid = wv.WaveGrid(T=0.1)
    out = wv.wave_forward(TRUTH, grid, d0=lambda t: 0.0 * t)
    assert not out.any()


def test_output_is_linear_in_input():
    grid = wv.WaveGrid(T=0.2, peak_frequency=5.0)
    base = wv.wave_forward(TRUTH, grid)
    scaled = wv.wave_forward(TRUTH, grid, d0=lambda t: 3.0 * grid.input_function()(t))
    assert np.abs(scaled - 3.0 * base).max() <= 1e-10 * np.abs(scaled).max()


def test_homogeneous_medium_matches_travelling_wave():
    coarse, fine = homogeneous_wave_error(50, f=5.0), homogeneous_wave_error(100, f=5.0)
    assert coarse <= 0.02
    assert coarse / fine >= 3.0


def test_batch_matches_single_and_refinement_is_transparent():
    grid = wv.WaveGrid(T=0.2, peak_frequency=5.0)
    fast = np.array([600.0, 0.5, 5.0, 0.5, 30.0, 9.0])  # about 19800 m/s below z_1
    U = np.vstack([TRUTH.to_vector(), fast])
    batch = wv.wave_forward_batch(U, grid)
    np.testing.assert_array_equal(batch[0], wv.wave_forward(TRUTH, grid))
    assert wv.refinement(wv._midpoint_c2(U, grid), grid).tolist() == [1, 3]
    np.testing.assert_array_equal(batch[1], wv.wave_forward(fast, grid))


def test_unphysical_and_cfl_failures():
    grid = wv.WaveGrid(T=0.1)
    with pytest.raises(wv.ForwardModelError, match="unphysical"):
        wv.wave_forward(np.array([-5.0, 0.5, 5.0, 0.5, 30.0, 1.5]), grid)
    with pytest.raises(wv.ForwardModelError, match="unphysical"):
        # negative base of the power law gives NaN
        wv.wave_forward(np.array([200.0, -1.0, 5.0, 0.5, 30.0, 1.5]), grid)
    tight = wv.WaveGrid(T=0.1, max_refinement=2)
    with pytest.raises(wv.CflError):
        wv.wave_forward(np.array([900.0, 100.0, 0.0, 1.0, 50.0, 1.0]), tight)
    samples = tight.input_motion()
    with pytest.raises(wv.CflError):
        wv.wave_forward(np.array([1000.0, 0.0, 0.0, 0.0, 0.0, 10.0]), tight, d0=samples)
