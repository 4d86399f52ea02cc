import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from switchdiff.errors import ConfigError, InputError, NumericalError
from switchdiff.evaluation import avg_loglik, gaussian_frechet
from switchdiff.gmm import ConditionalGmm, component
from switchdiff.sampler import (
    MixPolicy,
    SwitchPolicy,
    ode_step,
    sample_mixed,
    sample_sde,
    sample_switched,
    sample_vanilla,
    sde_step,
)
from switchdiff.schedule import VpSchedule, make_grid

COV = np.diag([0.25, 4.0])
MU = np.array([1.0, -0.5])


def anisotropic_gmm():
    return ConditionalGmm({0: (component(1.0, MU, COV),), 1: (component(1.0, -MU, COV),)})


def exact_flow_endpoint(x1, schedule):
    """Probability-flow map from t=1 to t=0 for N(MU, COV) with diagonal COV."""
    a1, s1 = schedule.marginal_coeffs(1.0)
    var1 = a1**2 * np.diag(COV) + s1**2
    return MU + np.sqrt(np.diag(COV) / var1) * (x1 - a1 * MU)


# -- single steps ---------------------------------------------------------


def test_ode_step_fixed_point(schedule):
    assert np.all(ode_step(np.zeros(2), 0.5, -0.01, np.zeros(2), schedule) == 0)


def test_ode_step_drift_and_score_cancel():
    # beta_min == beta_max == 1 gives a constant rate
    flat = VpSchedule(1.0, 1.0)
    x = ode_step(np.array([1.0, 0.0]), 0.3, -0.1, np.array([-1.0, 0.0]), flat)
    np.testing.assert_allclose(x, [1.0, 0.0], atol=1e-15)


def test_ode_step_requires_reverse_time(schedule):
    with pytest.raises(InputError):
        ode_step(np.zeros(2), 0.5, 0.01, np.zeros(2), schedule)


def test_ode_step_nonfinite_aborts(schedule):
    with pytest.raises(NumericalError, match="t=0.5"):
        ode_step(np.zeros(2), 0.5, -0.01, np.array([np.inf, 0.0]), schedule)


def test_sde_step_without_diffusion_is_drift_only(schedule):
    x = np.array([[1.0, 2.0]])
    out = sde_step(x, 0.4, -0.01, np.array([[5.0, 5.0]]), schedule, np.ones((1, 2)), diffusion_scale=0.0)
    f, _ = schedule.drift_diffusion(x, 0.4)
    np.testing.assert_array_equal(out, x + f * -0.01)


# -- vanilla --------------------------------------------------------------


def test_euler_is_first_order(schedule):
    g = anisotropic_gmm()
    x1 = np.random.default_rng(0).standard_normal((50, 2))  # same draw the sampler makes for seed 0
    exact = exact_flow_endpoint(x1, schedule)
    err = {}
    for k in (20, 10, 5):
        run = sample_vanilla(g, 0, 50, make_grid(1000, k), 0)
        err[k] = np.abs(run.points - exact).max()
    assert 1.8 < err[20] / err[10] < 2.2
    assert 1.8 < err[10] / err[5] < 2.2


def test_euler_against_refined_reference(schedule):
    # the finest grid (k=1) stands in for a 10x refined trajectory of k=10
    g = anisotropic_gmm()
    ref = sample_vanilla(g, 0, 50, make_grid(1000, 1), 0).points
    coarse = sample_vanilla(g, 0, 50, make_grid(1000, 10), 0).points
    fine = sample_vanilla(g, 0, 50, make_grid(1000, 5), 0).points
    ratio = np.abs(coarse - ref).max() / np.abs(fine - ref).max()
    assert 1.8 < ratio < 2.6


def test_vanilla_single_gaussian_mean(gmm, grid):
    run = sample_vanilla(gmm, 1, 5000, grid, 11)
    se = 1.0 / np.sqrt(5000)
    assert np.all(np.abs(run.points.mean(axis=0) - [2.0, 0.0]) < 3 * se)
    assert run.assigned_attribute == 1


def test_vanilla_empty(gmm, grid):
    run = sample_vanilla(gmm, 0, 0, grid, 0)
    assert run.points.shape == (0, 2)


def test_vanilla_deterministic(gmm, grid):
    a = sample_vanilla(gmm, 0, 100, grid, 3)
    b = sample_vanilla(gmm, 0, 100, grid, 3)
    assert a.points.tobytes() == b.points.tobytes()


@pytest.mark.parametrize("s, mu", [(0, [-2.0, 0.0]), (1, [2.0, 0.0])])
def test_vanilla_endpoint_matches_target(gmm, grid, s, mu):
    pts = sample_vanilla(gmm, s, 10_000, grid, 20 + s).points
    w2 = np.sqrt(gaussian_frechet(pts.mean(axis=0), np.cov(pts, rowvar=False), mu, np.eye(2)))
    assert w2 < 0.1


def test_grid_schedule_mismatch(gmm):
    with pytest.raises(ConfigError):
        sample_vanilla(gmm, 0, 10, make_grid(500, 10), 0)


# -- switched -------------------------------------------------------------


def test_switch_boundary_uses_s1():
    policy = SwitchPolicy(0, 1, 360)
    assert policy.attribute_at(370) == 0
    assert policy.attribute_at(360) == 1
    assert policy.attribute_at(0) == 1


def test_off_grid_tau_snaps_toward_zero(gmm, grid):
    a = sample_switched(gmm, SwitchPolicy(0, 1, 367), 50, grid, 1)
    b = sample_switched(gmm, SwitchPolicy(0, 1, 360), 50, grid, 1)
    assert a.policy["tau"] == 360
    assert a.points.tobytes() == b.points.tobytes()


def test_tau_beyond_horizon(gmm, grid):
    with pytest.raises(ConfigError):
        sample_switched(gmm, SwitchPolicy(0, 1, 1001), 5, grid, 0)
    with pytest.raises(ConfigError):
        SwitchPolicy(0, 1, -1)


def test_tau_zero_is_vanilla_s0(gmm, grid):
    sw = sample_switched(gmm, SwitchPolicy(0, 1, 0), 300, grid, 5)
    assert sw.points.tobytes() == sample_vanilla(gmm, 0, 300, grid, 5).points.tobytes()
    assert sw.assigned_attribute == 1


def test_tau_T_is_vanilla_s1(gmm, grid):
    sw = sample_switched(gmm, SwitchPolicy(0, 1, 1000), 300, grid, 5)
    assert sw.points.tobytes() == sample_vanilla(gmm, 1, 300, grid, 5).points.tobytes()


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000), st.sampled_from([0, 1]))
def test_equal_attributes_is_vanilla(tau, s):
    from switchdiff.gmm import default_gmm

    g, grid = default_gmm(), make_grid(1000, 10)
    sw = sample_switched(g, SwitchPolicy(s, s, tau), 40, grid, 2)
    assert sw.points.tobytes() == sample_vanilla(g, s, 40, grid, 2).points.tobytes()


def test_interior_switch_means_lie_between(gmm, grid):
    # common random numbers: every run starts from the same x_T
    n, seed = 5000, 13
    m0 = sample_vanilla(gmm, 0, n, grid, seed).points[:, 0].mean()
    m1 = sample_vanilla(gmm, 1, n, grid, seed).points[:, 0].mean()
    for tau in grid.steps[1:-1]:
        for s0, s1 in ((0, 1), (1, 0)):
            m = sample_switched(gmm, SwitchPolicy(s0, s1, tau), n, grid, seed).points[:, 0].mean()
            assert m0 < m < m1, (tau, s0, s1)


def test_trajectory_recording(gmm, grid, tmp_path):
    run = sample_switched(gmm, SwitchPolicy(0, 1, 500), 20, grid, 0, record_every=250)
    assert [s for s, _ in run.trajectory] == [1000, 750, 500, 250, 0]
    np.testing.assert_array_equal(run.trajectory[-1][1], run.points)
    run.export(tmp_path / "s.csv", tmp_path / "s.json", tmp_path / "traj")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "x0,x1,s_assigned"
    side = json.loads((tmp_path / "s.json").read_text())
    assert side["policy"] == {"kind": "switched", "s0": 0, "s1": 1, "tau": 500}
    assert side["grid"] == {"num_steps": 1000, "stride": 10}
    assert side["score_source"].startswith("analytic:")
    assert len(list((tmp_path / "traj").glob("*.csv"))) == 5


# -- mixed ----------------------------------------------------------------


def test_mix_endpoints_are_vanilla(gmm, grid):
    assert (
        sample_mixed(gmm, MixPolicy(0.0), 100, grid, 4).points.tobytes()
        == sample_vanilla(gmm, 0, 100, grid, 4).points.tobytes()
    )
    assert (
        sample_mixed(gmm, MixPolicy(1.0), 100, grid, 4).points.tobytes()
        == sample_vanilla(gmm, 1, 100, grid, 4).points.tobytes()
    )


def test_half_mix_is_centred(gmm, grid):
    pts = sample_mixed(gmm, MixPolicy(0.5), 10_000, grid, 6).points
    se = pts[:, 0].std() / np.sqrt(len(pts))
    assert abs(pts[:, 0].mean()) < 3 * se


def test_mix_policy_validation(gmm, grid):
    with pytest.raises(ConfigError):
        MixPolicy(1.5)
    with pytest.raises(ConfigError):
        sample_mixed(gmm, MixPolicy(0.5, blend="embedding"), 5, grid, 0)


# -- sde ------------------------------------------------------------------


def test_sde_without_diffusion_is_deterministic_drift(gmm, grid):
    run = sample_sde(gmm, 0, 50, grid, 0, diffusion_scale=0.0)
    x = np.random.default_rng(0).standard_normal((50, 2))
    sch = gmm.schedule
    for i, nxt in zip(grid.steps[:-1], grid.steps[1:]):
        f, _ = sch.drift_diffusion(x, i / 1000)
        x = x + f * (nxt - i) / 1000
    np.testing.assert_allclose(run.points, x, rtol=1e-12)


def test_sde_endpoint_covariance(gmm, grid):
    pts = sample_sde(gmm, 1, 10_000, make_grid(1000, 1), 8).points
    np.testing.assert_allclose(np.cov(pts, rowvar=False), np.eye(2), atol=0.1)
    assert np.all(np.abs(pts.mean(axis=0) - [2.0, 0.0]) < 0.05)


def test_sde_deterministic(gmm, grid):
    a = sample_sde(gmm, 0, 100, grid, 9).points
    b = sample_sde(gmm, 0, 100, grid, 9).points
    assert a.tobytes() == b.tobytes()


# -- utility --------------------------------------------------------------


def test_switched_loglik_reported(gmm, grid):
    """Measured gap between switched and vanilla likelihoods on the default mixture.

    The acceptance suite checks the 0.05-nat bound; this test pins the value so
    regressions in either sampler show up here.
    """
    sw = np.vstack([
        sample_switched(gmm, SwitchPolicy(0, 1, 360), 10_000, grid, 1).points,
        sample_switched(gmm, SwitchPolicy(1, 0, 360), 10_000, grid, 2).points,
    ])
    van = np.vstack([sample_vanilla(gmm, 1, 10_000, grid, 1).points, sample_vanilla(gmm, 0, 10_000, grid, 2).points])
    gap = avg_loglik(van, gmm) - avg_loglik(sw, gmm)
    assert 0.2 < gap < 0.4
