import math

import numpy as np
import pytest
from scipy.linalg import expm

from plussim import actuator as act
from plussim import simulator as sim
from plussim.aero import load_reference_plant
from plussim.controller import MatchingContext, MorphSchedule, SpanSchedule, build_schedule, phugoid_frequency
from plussim.errors import DomainError, SimulationDiverged
from plussim.powerline import PowerlineProfile

PLANT = load_reference_plant()


def constant_schedule(sigma=0.0, length=3000.0, n_spans=1, dx=1.0):
    spans = []
    for i in range(n_spans):
        xs = dx * np.arange(0, int(length / dx) + 1)
        spans.append(SpanSchedule(i, i * length, length, xs, np.full(xs.size, sigma), np.zeros(xs.size, bool)))
    return MorphSchedule(tuple(spans), dx, -1.0, 1.0)


def run(init, sigma=0.0, dt=0.01, horizon=20.0, **kw):
    cfg = sim.SimConfig(dt=dt, initial_state=init, horizon=horizon, **kw)
    return sim.integrate(PLANT, constant_schedule(sigma), cfg)


def test_zero_state_is_equilibrium():
    traj = run((0.0,) * 5, horizon=10.0)
    assert not traj.states.any()
    np.testing.assert_allclose(traj.x, 25.0 * traj.t, rtol=1e-13)
    assert traj.t[1] == 0.01 and len(traj) == 1001


def test_phugoid_period_matches_slow_eigenpair():
    ev = np.linalg.eigvals(PLANT.A[:4, :4])
    slow = min((e for e in ev if e.imag > 0), key=lambda e: abs(e))
    traj = run((1.0, 0, 0, 0, 0), dt=0.01, horizon=60.0)
    u = traj.component("u")
    # upward zero crossings, linearly interpolated
    idx = np.where((u[:-1] < 0) & (u[1:] >= 0))[0]
    tc = traj.t[idx] - u[idx] * 0.01 / (u[idx + 1] - u[idx])
    period = np.mean(np.diff(tc))
    assert period == pytest.approx(2 * math.pi / slow.imag, rel=0.01)


def test_constant_sigma_matches_matrix_exponential():
    s = 0.03
    traj = run((0.5, -0.2, 0.01, 0.02, 1.0), sigma=s, dt=0.01, horizon=5.0)
    M = PLANT.at(s)
    exact = expm(M * 5.0) @ np.array([0.5, -0.2, 0.01, 0.02, 1.0])
    np.testing.assert_allclose(traj.states[-1], exact, rtol=1e-7, atol=1e-9)


def test_rk4_fourth_order():
    init = (0.5, -0.2, 0.01, 0.02, 1.0)
    exact = expm(PLANT.at(0.02) * 2.0) @ np.array(init)
    errs = [np.max(np.abs(run(init, 0.02, dt, horizon=2.0).states[-1] - exact)) for dt in (0.04, 0.02)]
    assert 14.0 <= errs[0] / errs[1] <= 18.0


def test_superposition_under_fixed_schedule():
    a = np.array([0.3, 0.1, 0.0, 0.01, 0.5])
    b = np.array([-0.2, 0.05, 0.02, 0.0, -1.0])
    ta, tb, tab = (run(tuple(v), sigma=0.04, horizon=10.0) for v in (a, b, a + b))
    np.testing.assert_allclose(tab.states, ta.states + tb.states, atol=1e-12)


def test_stage_form_agrees_with_propagator():
    M = sim._augmented(PLANT.at(0.01), PLANT.u0)
    P = sim.rk4_propagator(M, 0.05)
    z = np.array([0.3, -0.1, 0.02, 0.01, 0.7, 10.0, 1.0])
    z_stage = sim.rk4_step(lambda y, t: M @ y, z, 0.0, 0.05)
    np.testing.assert_allclose(P @ z, z_stage, rtol=1e-14, atol=1e-14)


def test_continuation_is_bit_identical():
    prof = PowerlineProfile.uniform(2, 70.0, 0.03, 30.0)
    ctx = MatchingContext(PLANT.derivs, PLANT.u0, prof.spans[0])
    schedule = build_schedule(ctx, prof, 0.5)
    for mode in ("ideal", "servo"):
        cfg = sim.SimConfig(dt=0.005, actuator_mode=mode, initial_state=sim.phugoid_seed(PLANT, prof))
        full = sim.integrate(PLANT, schedule, cfg)
        first = sim.integrate(PLANT, schedule, cfg, stop_x=70.0)
        second = sim.integrate(PLANT, schedule, cfg, start=first.final)
        for name in ("t", "x", "states", "sigma_cmd", "sigma_achieved"):
            joined = np.concatenate([getattr(first, name)[:-1], getattr(second, name)])
            np.testing.assert_array_equal(joined, getattr(full, name))


def test_servo_mode_lags_command():
    prof = PowerlineProfile.uniform(1, 70.0, 0.03, 30.0)
    ctx = MatchingContext(PLANT.derivs, PLANT.u0, prof.spans[0])
    schedule = build_schedule(ctx, prof, 0.5)
    cfg = sim.SimConfig(dt=0.005, actuator_mode="servo", servo=act.default_servo())
    traj = sim.integrate(PLANT, schedule, cfg)
    n = int(round(0.05 / 0.005))
    assert np.all(traj.sigma_achieved[: n + 1] == 0.0)
    assert np.any(traj.sigma_cmd[: n + 1] != 0.0)
    rate = np.abs(np.diff(traj.sigma_achieved)) / 0.005
    assert rate.max() <= act.default_servo().slew_limit * act.default_servo().gain * (1 + 1e-9)


def test_divergence_reports_step():
    cfg = sim.SimConfig(dt=0.01, initial_state=(1.0, 0, 0, 0, 0), divergence_bound=1.5, horizon=50.0)
    with pytest.raises(SimulationDiverged) as info:
        sim.integrate(PLANT, constant_schedule(), cfg)
    err = info.value
    assert err.step > 0 and err.time == pytest.approx(err.step * 0.01)
    assert np.max(np.abs(err.state)) > 1.5


def test_config_validation():
    with pytest.raises(DomainError):
        sim.SimConfig(dt=0.0)
    with pytest.raises(DomainError):
        sim.SimConfig(actuator_mode="fast")
    with pytest.raises(DomainError):
        sim.SimConfig(initial_state=(0, 0))


# --------------------------------------------------------------------------
# metrics

def fake_trajectory(x, h):
    n = x.size
    states = np.zeros((n, 5))
    states[:, 4] = h
    z = np.zeros(n)
    return sim.Trajectory(np.arange(n) * 0.01, x, states, z, z, final=None)


PROFILE = PowerlineProfile.uniform(2, 70.0, 0.03, 30.0)


def test_on_wire_counts_everything_under():
    x = np.linspace(0, 140, 1401)
    traj = fake_trajectory(x, PROFILE.wire_height(x) - 30.0)
    m = sim.clearance_metrics(traj, PROFILE)
    assert m.fraction_under == 1.0
    assert m.length_under == pytest.approx(140.0, rel=1e-12)
    assert np.max(np.abs(m.clearance)) < 1e-12


def test_far_above_counts_nothing():
    x = np.linspace(0, 140, 1401)
    m = sim.clearance_metrics(fake_trajectory(x, np.full(x.size, 5.0)), PROFILE)
    assert m.fraction_under == 0.0 and m.length_over == pytest.approx(140.0)
    assert m.min_clearance >= 5.0


def test_partial_coverage_and_conservation():
    # clearance = x/70 on span 0 and 0 on span 1 -> 70 m + 70 m with the threshold at 1 m
    x = np.linspace(0, 140, 14001)
    h = PROFILE.wire_height(x) - 30.0 + np.where(x < 70, 2 * x / 70, 0.0)
    m = sim.clearance_metrics(fake_trajectory(x, h), PROFILE)
    assert m.length_under + m.length_over == pytest.approx(140.0, rel=1e-12)
    assert m.length_under == pytest.approx(35.0 + 70.0, abs=0.02)
    assert m.span_fraction_under == pytest.approx((0.5, 1.0), abs=1e-3)


def test_alternation_flag():
    x = np.linspace(0, 280, 2801)
    prof = PowerlineProfile.uniform(4, 70.0, 0.03, 30.0)
    off = np.where((x // 70) % 2 == 0, 3.0, 0.0)
    m = sim.clearance_metrics(fake_trajectory(x, prof.wire_height(x) - 30.0 + off), prof)
    assert m.alternates
    m2 = sim.clearance_metrics(fake_trajectory(x, prof.wire_height(x) - 30.0), prof)
    assert not m2.alternates


def test_mismatched_range_rejected():
    x = np.linspace(0, 30, 301)
    with pytest.raises(DomainError):
        sim.clearance_metrics(fake_trajectory(x, np.zeros(x.size)), PROFILE)
    x = np.linspace(0, 400, 301)
    with pytest.raises(DomainError):
        sim.clearance_metrics(fake_trajectory(x, np.zeros(x.size)), PROFILE)


def test_velocity_deviation():
    traj = run((0.4, 0, 0, 0, 0), horizon=30.0)
    v = sim.velocity_deviation(traj)
    assert v.max_abs == pytest.approx(np.max(np.abs(traj.component("u"))))
    assert v.max_abs >= 0.4 and 0 < v.rms < v.max_abs
    assert v.series.shape == traj.t.shape


def test_trajectory_csv():
    traj = run((0.1, 0, 0, 0, 0), horizon=0.05)
    rows = traj.to_csv(PROFILE).splitlines()
    assert rows[0] == "t,x,u,w,q,theta,h,sigma_cmd,sigma_achieved,wire_height,clearance"
    assert len(rows) == len(traj) + 1
    first = [float(v) for v in rows[1].split(",")]
    assert first[0] == 0.0 and first[2] == 0.1 and first[9] == pytest.approx(30.0)


def test_phugoid_wavelength():
    w = phugoid_frequency(PLANT.derivs, 0.0)
    lam = sim.phugoid_wavelength(PLANT.derivs, 0.0, 25.0)
    assert lam == pytest.approx(25.0 / w, rel=1e-15)
    assert lam == pytest.approx(32.2, abs=0.05)
    assert sim.phugoid_wavelength(PLANT.derivs, 0.0, 50.0) == pytest.approx(2 * lam, rel=1e-15)


def test_phugoid_seed_energy_balance():
    du = sim.phugoid_seed(PLANT, PROFILE)[0]
    assert 25.0 * -du == pytest.approx(9.81 * PROFILE.spans[0].sag_depth / 2, rel=1e-12)
