import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from switchdiff.errors import ConfigError, DomainError, InputError, NotFoundError
from switchdiff.schedule import VpSchedule, make_grid

unit = st.floats(0.0, 1.0, allow_nan=False)


@pytest.mark.parametrize("t, expected", [(0.0, 0.1), (1.0, 20.0), (0.5, 10.05)])
def test_beta_linear_ramp(schedule, t, expected):
    assert schedule.beta(t) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("t", [-1e-9, 1.0 + 1e-9, np.nan])
def test_beta_rejects_out_of_range(schedule, t):
    with pytest.raises(DomainError):
        schedule.beta(t)


def test_rejects_invalid_rates():
    with pytest.raises(ConfigError):
        VpSchedule(beta_min=0.0)
    with pytest.raises(ConfigError):
        VpSchedule(beta_min=2.0, beta_max=1.0)


def test_marginals_at_zero(schedule):
    assert schedule.marginal_coeffs(0.0) == (1.0, 0.0)


def test_alpha_at_one_matches_quadrature(schedule):
    ts = np.linspace(0.0, 1.0, 10_001)
    integral = trapezoid(schedule.beta(ts), ts)
    oracle = np.exp(-0.5 * integral)
    assert schedule.alpha(1.0) == pytest.approx(oracle, rel=1e-8)
    assert schedule.alpha(1.0) == pytest.approx(np.exp(-5.025), rel=1e-12)
    assert schedule.alpha(1.0) == pytest.approx(6.5716e-3, rel=1e-4)


def test_alpha_matches_quadrature_on_grid(schedule):
    for t in np.linspace(0.01, 1.0, 25):
        ts = np.linspace(0.0, t, 20_001)
        oracle = np.exp(-0.5 * trapezoid(schedule.beta(ts), ts))
        assert schedule.alpha(t) == pytest.approx(oracle, rel=1e-8)


def test_unit_norm_on_dense_grid(schedule):
    a, s = schedule.marginal_coeffs(np.linspace(0.0, 1.0, 1000))
    assert np.max(np.abs(a**2 + s**2 - 1.0)) <= 1e-12


@given(unit, st.floats(0.01, 5.0), st.floats(0.0, 30.0))
def test_unit_norm_property(t, bmin, extra):
    sch = VpSchedule(bmin, bmin + extra)
    a, s = sch.marginal_coeffs(t)
    assert abs(a * a + s * s - 1.0) <= 1e-12
    assert 0.0 < a <= 1.0 and 0.0 <= s < 1.0


def test_alpha_strictly_decreasing(schedule):
    a = schedule.alpha(np.linspace(0.0, 1.0, 1000))
    assert np.all(np.diff(a) < 0)


def test_drift_diffusion_examples(schedule):
    f, g2 = schedule.drift_diffusion(np.zeros(2), 0.3)
    assert np.all(f == 0)
    f, g2 = schedule.drift_diffusion(np.array([2.0, 0.0]), 0.0)
    np.testing.assert_allclose(f, [-0.1, 0.0])
    assert g2 == pytest.approx(0.1)


def test_drift_rejects_nonfinite(schedule):
    with pytest.raises(InputError):
        schedule.drift_diffusion(np.array([np.inf, 0.0]), 0.5)


def test_g2_consistent_with_variance_growth(schedule):
    # VP identity d(sigma^2)/dt = beta(t) (1 - sigma^2), checked by central differences
    h = 1e-6
    for t in np.linspace(0.01, 0.99, 50):
        ds2 = (schedule.sigma(t + h) ** 2 - schedule.sigma(t - h) ** 2) / (2 * h)
        _, g2 = schedule.drift_diffusion(np.zeros(2), t)
        assert ds2 == pytest.approx(g2 * (1 - schedule.sigma(t) ** 2), rel=1e-6)


def test_snr_strictly_decreasing(schedule):
    snr = schedule.snr(np.linspace(0.01, 1.0, 100))
    assert np.all(np.diff(snr) < 0)
    assert np.all(snr > 0)


def test_snr_infinite_at_zero(schedule):
    with pytest.raises(DomainError):
        schedule.snr(0.0)


def test_snr_crossing_level_one(schedule):
    t = schedule.snr_crossing(1.0)
    a, s = schedule.marginal_coeffs(t)
    assert a == pytest.approx(s, abs=1e-8)


def test_snr_crossing_matches_dense_scan(schedule):
    ts = np.linspace(1e-6, 1.0, 2_000_001)
    scan = ts[np.argmin(np.abs(np.log(schedule.snr(ts)) - np.log(1e-2)))]
    assert schedule.snr_crossing(1e-2) == pytest.approx(scan, abs=1e-6)


@given(st.floats(0.001, 0.999))
def test_snr_crossing_inverts_snr(t):
    sch = VpSchedule()
    assert sch.snr_crossing(sch.snr(t)) == pytest.approx(t, abs=1e-6)


def test_snr_crossing_unattainable(schedule):
    with pytest.raises(NotFoundError):
        schedule.snr_crossing(schedule.snr(1.0) / 2)
    with pytest.raises(DomainError):
        schedule.snr_crossing(0.0)


@pytest.mark.parametrize(
    "T, k, steps",
    [(1000, 1000, (1000, 0)), (1000, 250, (1000, 750, 500, 250, 0))],
)
def test_make_grid(T, k, steps):
    grid = make_grid(T, k)
    assert grid.steps == steps
    assert grid.eval_steps == steps[:-1]


def test_make_grid_requires_divisor():
    with pytest.raises(ConfigError):
        make_grid(10, 3)


@given(st.integers(1, 200).flatmap(lambda k: st.tuples(st.just(k), st.integers(1, 20))))
def test_grid_invariants(km):
    k, m = km
    grid = make_grid(k * m, k)
    assert grid.steps[0] == k * m and grid.steps[-1] == 0
    assert set(np.diff(grid.steps)) == {-k}


def test_snap_toward_zero():
    grid = make_grid(1000, 10)
    assert grid.snap(365) == 360
    assert grid.snap(360) == 360
    assert grid.snap(9) == 0
    assert grid.contains(1000) and not grid.contains(365)
