import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from plussim.aero import G, load_reference_plant
from plussim.controller import (
    MatchingContext, build_schedule, matching_requirement, matching_residual, phugoid_frequency, required_sigma,
)
from plussim.errors import DomainError, NonOscillatoryError
from plussim.powerline import CatenarySpec, PowerlineProfile, solve_catenary_from_sag

PLANT = load_reference_plant()
D = PLANT.derivs
SPAN = solve_catenary_from_sag(70.0, 0.02, 30.0)


def wide_ctx(catenary=SPAN, **kw):
    return MatchingContext(D, 25.0, catenary, sigma_lo=-10.0, sigma_hi=10.0, **kw)


def test_phugoid_frequency_reference():
    w = phugoid_frequency(D, 0.0)
    assert w == pytest.approx(math.sqrt(9.81 * 1.535 / 25.0), rel=1e-15)
    assert w == pytest.approx(0.776, abs=5e-4)


def test_phugoid_frequency_sqrt2_scaling():
    # sigma chosen so that Z_u + Z_u_sigma * sigma = 2 Z_u
    s = D.Z_u / D.Z_u_sigma
    assert phugoid_frequency(D, s) == pytest.approx(math.sqrt(2) * phugoid_frequency(D, 0.0), rel=1e-14)


def test_phugoid_frequency_sign_and_conventions():
    s = -D.Z_u / D.Z_u_sigma - 0.1  # radicand turns negative
    with pytest.raises(NonOscillatoryError):
        phugoid_frequency(D, s)
    lit = phugoid_frequency(D, s, convention="printed")
    assert lit == pytest.approx(math.sqrt(abs(9.81 * (D.Z_u + D.Z_u_sigma * s) / D.Z_q)))
    assert phugoid_frequency(D, 0.0, convention="printed") == phugoid_frequency(D, 0.0)
    with pytest.raises(ValueError):
        phugoid_frequency(D, 0.0, convention="other")
    with pytest.raises(DomainError):
        phugoid_frequency(replace(D, Z_q=0.0), 0.0)


def test_matching_requirement():
    ctx = wide_ctx()
    assert matching_requirement(ctx, 0.0) == (0.0, 0.0)
    om, need = matching_requirement(ctx, 35.0)
    assert om == pytest.approx(35.0 / SPAN.raw_ordinate(35.0), rel=1e-15)
    assert need == 25.0 * om
    assert 25.0 * 0.031 == pytest.approx(0.775)


def test_required_sigma_closed_form():
    """With a constant Z_u_sigma the residual is affine in sigma."""
    ctx = wide_ctx()
    for x in (5.0, 20.0, 35.0, 60.0):
        om = x / SPAN.raw_ordinate(x)
        expected = -(D.Z_u + D.Z_q * 25.0 ** 2 * om ** 2 / G) / D.Z_u_sigma
        sol = required_sigma(ctx, x)
        assert not sol.saturated
        assert sol.sigma == pytest.approx(expected, rel=1e-10, abs=1e-13)
        assert abs(matching_residual(ctx, x, sol.sigma)) < 1e-9


def test_required_sigma_zero_when_already_matched():
    # pick a so that u0 * x / y(x) equals the sigma = 0 Phugoid frequency at midspan
    w0 = phugoid_frequency(D, 0.0)
    a = 35.0 * 25.0 / w0
    spec = CatenarySpec(a=a, span_length=70.0, tower_height=40.0)
    sol = required_sigma(wide_ctx(spec), 35.0)
    assert abs(sol.sigma) < 1e-12 and not sol.saturated


def test_required_sigma_saturates():
    ctx = MatchingContext(D, 25.0, SPAN, sigma_lo=-0.032, sigma_hi=0.055)
    sol = required_sigma(ctx, 1.0)  # tiny demand needs sigma far below the bound
    assert sol.saturated and sol.sigma == -0.032
    assert required_sigma(wide_ctx(), 1.0).sigma < -0.032


def test_required_sigma_with_lookup_falls_back_to_bisection():
    ctx = wide_ctx(zu_sigma=lambda s: D.Z_u_sigma * (1 + 0.5 * s))
    sol = required_sigma(ctx, 30.0)
    assert abs(matching_residual(ctx, 30.0, sol.sigma)) < 1e-9


def test_round_trip_over_span():
    ctx = wide_ctx()
    for x in np.linspace(0.5, 70.0, 140):
        sol = required_sigma(ctx, x)
        assert not sol.saturated
        _, need = matching_requirement(ctx, x)
        assert phugoid_frequency(D, sol.sigma) == pytest.approx(need, rel=1e-8)


@settings(max_examples=40, deadline=None)
@given(x1=st.floats(1.0, 34.0), dx=st.floats(0.5, 30.0))
def test_required_sigma_monotone_in_demand(x1, dx):
    """Z_u_sigma < 0: more demanded frequency needs more sigma."""
    ctx = wide_ctx()
    x2 = x1 + dx
    assert matching_requirement(ctx, x2)[1] > matching_requirement(ctx, x1)[1]
    assert required_sigma(ctx, x2).sigma > required_sigma(ctx, x1).sigma


def test_context_validation():
    with pytest.raises(DomainError):
        MatchingContext(D, 25.0, SPAN, sigma_lo=0.1, sigma_hi=0.0)
    with pytest.raises(DomainError):
        MatchingContext(D, -1.0, SPAN)


def test_schedule_single_command():
    prof = PowerlineProfile((SPAN,))
    sch = build_schedule(wide_ctx(), prof, dx=70.0)
    assert sch.n_commands == 1
    rows = sch.to_csv().strip().splitlines()
    assert rows[0] == "span,x,sigma,saturated_flag,reset_marker"
    assert len(rows) == 3 and rows[-1].endswith(",1")


def test_schedule_identical_spans_and_bounds():
    prof = PowerlineProfile.uniform(3, 70.0, 0.02, 30.0)
    ctx = MatchingContext(D, 25.0, SPAN)
    sch = build_schedule(ctx, prof, dx=0.5)
    assert sch.n_commands == 3 * 140
    for sp in sch.spans[1:]:
        np.testing.assert_array_equal(sp.sigma, sch.spans[0].sigma)
        np.testing.assert_array_equal(sp.x, sch.spans[0].x)
    all_sigma = np.concatenate([s.sigma for s in sch.spans])
    assert all_sigma.min() >= ctx.sigma_lo and all_sigma.max() <= ctx.sigma_hi
    assert [s.x_start for s in sch.spans] == [0.0, 70.0, 140.0]
    assert sch.command(0, 0.2) == 0.0  # before the first command
    assert sch.command(1, 0.5) == sch.spans[1].sigma[0]
    assert sch.command(1, 0.99) == sch.spans[1].sigma[0]
    with pytest.raises(DomainError):
        build_schedule(ctx, prof, dx=0.0)


def test_schedule_deterministic():
    prof = PowerlineProfile.uniform(2, 70.0, 0.03, 30.0)
    ctx = MatchingContext(D, 25.0, SPAN)
    assert build_schedule(ctx, prof, 0.5).to_csv() == build_schedule(ctx, prof, 0.5).to_csv()


def test_schedule_floor_gating():
    prof = PowerlineProfile((SPAN,))
    ctx = wide_ctx(omega_floor=0.3)
    sch = build_schedule(ctx, prof, dx=1.0)
    sp = sch.spans[0]
    need = np.array([matching_requirement(ctx, x)[1] for x in sp.x])
    assert np.all(sp.sigma[need <= 0.3] == 0.0)
    assert np.all(sp.sigma[need > 0.3] != 0.0)
