import math
import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from plussim import aero
from plussim.aero import (
    AeroCoefficients, AircraftGeometry, CoefficientSample, EnvelopeWarning, PolarTable, StabilityDerivatives,
    derive_stability_matrices, dimensional_derivatives, dimensional_forces, eval_coefficients,
    ingest_polar_table, load_reference_plant, polar_table_csv, sigma_sensitivities, span_morph_moments,
    synthetic_coefficient_model, synthetic_plant, tabulate_model, trim,
)
from plussim.errors import DomainError, PolarTableError

COEFFS = AeroCoefficients(
    CL0=0.16, CL_alpha=4.5, CL_V=0.45, CL_mu=1.2,
    CD0=0.03, CD_alpha=0.05, CD_alpha2=0.9, CD_V=-0.01, CD_mu=0.1,
    Cm0=0.01, Cm_alpha=-0.8, Cm_V=0.37, Cm_mu=1.5, Cm_q=-30.0,
)
GEOM = AircraftGeometry(wingspan=1.4, chord=0.254, mass=3.3, Iyy=0.19)


def test_coefficients_at_origin():
    assert eval_coefficients(COEFFS, 0.0, 0.0, 0.0) == (0.16, 0.03, 0.01)


def test_lift_affine_in_alpha():
    a, mu = 0.07, 0.03
    assert COEFFS.lift(a, 0, mu) - COEFFS.lift(0, 0, mu) == pytest.approx(COEFFS.CL_alpha * a, rel=1e-13)


def test_sampled_point_matches_hand_evaluation():
    a, mu = math.radians(2.0), 0.05
    CL, CD, Cm = eval_coefficients(COEFFS, a, 0.0, mu)
    assert CL == pytest.approx(0.16 + 4.5 * a + 1.2 * mu, rel=1e-15)
    assert CD == pytest.approx(0.03 + 0.05 * a + 0.9 * a * a + 0.1 * mu, rel=1e-15)
    assert Cm == pytest.approx(0.01 - 0.8 * a + 1.5 * mu, rel=1e-15)


def test_envelope_warning_still_evaluates():
    with pytest.warns(EnvelopeWarning):
        out = eval_coefficients(COEFFS, math.radians(20), 0.0, 0.0)
    assert out[0] == pytest.approx(COEFFS.lift(math.radians(20)))
    with pytest.warns(EnvelopeWarning):
        eval_coefficients(COEFFS, 0.0, 0.0, 0.3, mu_max=0.14)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        eval_coefficients(COEFFS, 0.1, 0.0, 0.1, mu_max=0.14)


@settings(max_examples=60)
@given(a=st.floats(-0.25, 0.25), v=st.floats(-0.2, 0.2), m0=st.floats(-0.14, 0.14), dm=st.floats(0.001, 0.05))
def test_affine_in_mu_and_speed(a, v, m0, dm):
    """Second differences in mu and dV/V vanish; only CD_alpha2 is quadratic in alpha."""
    for f in (COEFFS.lift, COEFFS.drag, COEFFS.moment):
        second_mu = f(a, v, m0 + dm) - 2 * f(a, v, m0) + f(a, v, m0 - dm)
        second_v = f(a, v + dm, m0) - 2 * f(a, v, m0) + f(a, v - dm, m0)
        assert abs(second_mu) < 1e-12 and abs(second_v) < 1e-12
    d2 = COEFFS.drag(a + dm, v, m0) - 2 * COEFFS.drag(a, v, m0) + COEFFS.drag(a - dm, v, m0)
    assert d2 == pytest.approx(2 * COEFFS.CD_alpha2 * dm * dm, rel=1e-6, abs=1e-13)
    l2 = COEFFS.lift(a + dm, v, m0) - 2 * COEFFS.lift(a, v, m0) + COEFFS.lift(a - dm, v, m0)
    assert abs(l2) < 1e-12


def test_drag_positive_in_envelope():
    c = synthetic_coefficient_model()
    for a in np.radians(np.linspace(-15, 15, 31)):
        for mu in np.linspace(-0.14, 0.14, 15):
            assert c.drag(a, 0.0, mu) > 0


def test_dimensional_forces():
    L, D, M = dimensional_forces(GEOM, 0.5, 0.04, -0.02, 25.0)
    q_S = 0.5 * 1.225 * 625 * 0.3556
    assert L == pytest.approx(q_S * 0.5, rel=1e-14)
    assert L == pytest.approx(68.0640625, rel=1e-12)
    assert D == pytest.approx(q_S * 0.04, rel=1e-14)
    assert M == pytest.approx(q_S * 0.254 * -0.02, rel=1e-14)
    assert dimensional_forces(GEOM, 0.0, 0.04, 0.0, 25.0)[0] == 0.0
    L2, D2, M2 = dimensional_forces(GEOM, 0.5, 0.04, -0.02, 50.0)
    assert (L2, D2, M2) == pytest.approx((4 * L, 4 * D, 4 * M), rel=1e-14)
    with pytest.raises(DomainError):
        dimensional_forces(GEOM, 0.5, 0.04, 0.0, 0.0)


def test_geometry_defaults():
    assert GEOM.area == pytest.approx(1.4 * 0.254)
    with pytest.raises(DomainError):
        AircraftGeometry(wingspan=-1, chord=0.2, mass=1, Iyy=1)


def test_reference_plant_verbatim():
    p = load_reference_plant()
    np.testing.assert_array_equal(p.A[1], [-1.535, -7.457, 25, 0, 0])
    np.testing.assert_array_equal(p.B_sigma[2], [25.329, 95.192, -160.32, 0, 0])
    np.testing.assert_array_equal(p.A[0], [-0.074, -0.122, 0, -9.81, 0])
    assert not p.B_sigma[3:].any()
    np.testing.assert_array_equal(p.A[3], [0, 0, 1, 0, 0])
    np.testing.assert_array_equal(p.A[4], [0, -1, 0, 25, 0])
    literal = load_reference_plant(h_row="printed")
    np.testing.assert_array_equal(literal.A[4], [1, 0, 0, 0, 0])
    assert p.derivs.Z_u_sigma == -3.96
    with pytest.raises(ValueError):
        p.A[0, 0] = 1.0


def test_plant_round_trip(tmp_path):
    p = load_reference_plant()
    aero.save_plant(p, tmp_path / "p.json")
    q = load_reference_plant(tmp_path / "p.json")
    np.testing.assert_array_equal(p.A, q.A)
    np.testing.assert_array_equal(p.B_sigma, q.B_sigma)


def test_matrix_structure_general():
    d = StabilityDerivatives(*np.arange(1.0, 17.0))
    A, B = d.matrices(u0=20.0, theta0=0.1)
    assert not B[3:].any()
    assert A[3, 2] == 1 and A[3, 0] == 0 and A[3, 1] == 0
    np.testing.assert_allclose(A[4], [math.sin(0.1), -math.cos(0.1), 0, 20 * math.cos(0.1), 0])
    assert StabilityDerivatives.from_matrices(A, B) == d


def test_trim_balances_weight():
    c = synthetic_coefficient_model()
    t = trim(c, GEOM)
    W = GEOM.mass * aero.G
    assert GEOM.dynamic_pressure * GEOM.area * c.lift(t.alpha0) == pytest.approx(W, rel=1e-10)
    assert t.thrust == pytest.approx(GEOM.dynamic_pressure * GEOM.area * c.drag(t.alpha0), rel=1e-10)


def test_planted_linear_slopes_recovered():
    geom = replace(GEOM, alpha0=0.02)
    s = sigma_sensitivities(COEFFS, geom)
    k = geom.rho * geom.u0 * geom.area / (2 * geom.mass)
    kM = geom.rho * geom.u0 * geom.area * geom.chord / (2 * geom.Iyy)
    planted = {
        "X_u_sigma": -2 * COEFFS.CD_mu * k,
        "X_w_sigma": COEFFS.CL_mu * k,
        "Z_u_sigma": -2 * COEFFS.CL_mu * k,
        "Z_w_sigma": -COEFFS.CD_mu * k,
        "M_u_sigma": 2 * COEFFS.Cm_mu * kM,
    }
    for name, v in planted.items():
        assert s[name] == pytest.approx(v, rel=1e-6)
    assert abs(s["M_w_sigma"]) < 1e-9 and abs(s["M_q_sigma"]) < 1e-9


class _CurvedSource:
    """Coefficient source whose lift responds to shape through exp(3 sigma)."""

    def sample(self, alpha, sigma):
        base = COEFFS.sample(alpha, 0.0)
        return base._replace(CL=base.CL + 0.5 * (math.exp(3 * sigma) - 1))


def test_finite_difference_order():
    geom = replace(GEOM, alpha0=0.02)
    k = geom.rho * geom.u0 * geom.area / (2 * geom.mass)
    exact = -2 * k * 1.5  # d/dsigma of -2 k * 0.5 exp(3 sigma) at 0
    errs = [abs(sigma_sensitivities(_CurvedSource(), geom, step=h)["Z_u_sigma"] - exact) for h in (0.02, 0.01)]
    assert math.log2(errs[0] / errs[1]) >= 1.9


def test_lsq_scheme_on_linear_model():
    geom = replace(GEOM, alpha0=0.02)
    a = sigma_sensitivities(COEFFS, geom, scheme="lsq")
    b = sigma_sensitivities(COEFFS, geom, scheme="central")
    for key in a:
        assert a[key] == pytest.approx(b[key], rel=1e-8, abs=1e-9)
    with pytest.raises(ValueError):
        sigma_sensitivities(COEFFS, geom, scheme="forward")


def test_span_morph_moments():
    assert span_morph_moments((0, 0, 0), (1, 0, 0), (0.3, 0.2, 0.4), 0.2, 0.7, 0.05, 0.0) == (0.3, 0.0, 0.0)
    L, M, N = span_morph_moments((1, 0, 0), (0, 0, 0), (0.3, 0.2, 0.4), 0.2, 0.7, 0.05, 0.1)
    assert L == pytest.approx(2 * 0.2 * 0.1 * (0.7 + 0.05) * 1, rel=1e-15)
    assert L == pytest.approx(0.03)
    assert M == 0.0 and N == 0.0


@settings(max_examples=50)
@given(st.lists(st.floats(-5, 5), min_size=9, max_size=9), st.floats(-1, 1), st.floats(0.1, 2))
def test_span_morph_reduces_to_rigid_body(v, y0, m):
    p, q, r, pd, qd, rd = v[:6]
    Ix, Iy, Iz = (abs(x) + 0.1 for x in v[6:])
    L, M, N = span_morph_moments((p, q, r), (pd, qd, rd), (Ix, Iy, Iz), m, y0, 0.0, 0.0)
    assert L == pd * Ix + q * r * (Iz - Iy)
    assert M == qd * Iy + r * q * (Ix - Iz)
    assert N == rd * Iz + p * q * (Iy - Ix)


def test_synthetic_model_baseline_and_thickness_drag():
    c = synthetic_coefficient_model("NACA2412", "thickness")
    assert c.CD_mu > 0
    assert c.CL_alpha > 0
    s0 = c.sample(0.05, 0.0)
    assert s0.CL == c.lift(0.05)
    # thin-airfoil zero-lift angle of the 2412 mean line is about -2.08 deg
    assert math.degrees(-c.CL0 / c.CL_alpha) == pytest.approx(-2.077, abs=0.01)
    with pytest.raises(ValueError):
        synthetic_coefficient_model("NACA2412", "twist")
    with pytest.raises(ValueError):
        aero.parse_naca("clarky")


def test_thin_airfoil_symmetric_section():
    assert aero.thin_airfoil_zero_lift(0.0, 0.0) == 0.0


def test_calibrated_b_sigma_row():
    plant, coeffs, geom = synthetic_plant()
    np.testing.assert_allclose(plant.B_sigma[1, :2], [-3.960, -15.336], rtol=0.05)
    assert not plant.B_sigma[3:].any()
    # the secant lookup reproduces the shape-resolved Z_u
    for s in (-0.1, 0.05, 0.14):
        zu = dimensional_derivatives(coeffs, geom, s).Z_u
        assert plant.derivs.Z_u + plant.zu_sigma(s) * s == pytest.approx(zu, rel=1e-12)


# --------------------------------------------------------------------------
# polar tables

def _grid_csv(n_sigma=5, n_alpha=11, drop=None):
    t = tabulate_model(COEFFS, np.linspace(-0.1, 0.1, n_sigma), np.linspace(-5, 5, n_alpha))
    lines = polar_table_csv(t).splitlines()
    if drop is not None:
        del lines[drop]
    return "\n".join(lines) + "\n", t


def test_polar_round_trip():
    text, t = _grid_csv()
    p = ingest_polar_table(text)
    assert p.sigma_limits == (-0.1, 0.1)
    np.testing.assert_array_equal(p.CL, t.CL)
    assert p.CL.shape == (5, 11)


def test_polar_node_exact():
    text, t = _grid_csv()
    p = ingest_polar_table(text)
    for i, s in enumerate(p.sigma):
        for j, a in enumerate(p.alpha_deg):
            assert p.interpolate("CL", math.radians(a), s) == t.CL[i, j]


def test_polar_ragged_names_cell():
    text, _ = _grid_csv(drop=3)
    with pytest.raises(PolarTableError, match=r"sigma=-0.1, alpha_deg=-3"):
        ingest_polar_table(text)


def test_polar_errors():
    with pytest.raises(PolarTableError, match="line 1: missing column"):
        ingest_polar_table("sigma,alpha_deg,CL,CD\n0,0,0,0\n")
    with pytest.raises(PolarTableError, match="line 3: duplicate"):
        ingest_polar_table("sigma,alpha_deg,CL,CD,Cm\n0,0,1,1,1\n0,0,1,1,1\n")
    with pytest.raises(PolarTableError, match="line 3: rows not ordered"):
        ingest_polar_table("sigma,alpha_deg,CL,CD,Cm\n0,1,1,1,1\n0,0,1,1,1\n")
    with pytest.raises(PolarTableError, match="line 2: could not parse"):
        ingest_polar_table("sigma,alpha_deg,CL,CD,Cm\n0,x,1,1,1\n")
    with pytest.raises(PolarTableError):
        PolarTable(np.array([0.1, 0.2]), np.array([0.0, 1.0]), np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)))


def test_polar_outside_grid():
    text, _ = _grid_csv()
    p = ingest_polar_table(text)
    with pytest.raises(DomainError):
        p.interpolate("CL", 0.0, 0.2)


@settings(max_examples=60)
@given(u=st.floats(0, 1), v=st.floats(0, 1))
def test_polar_interpolation_bounded_by_cell(u, v):
    text, _ = _grid_csv()
    p = ingest_polar_table(text)
    i, j = 2, 6
    s = p.sigma[i] + u * (p.sigma[i + 1] - p.sigma[i])
    a = p.alpha_deg[j] + v * (p.alpha_deg[j + 1] - p.alpha_deg[j])
    val = p.interpolate("CD", math.radians(a), s)
    corners = p.CD[i:i + 2, j:j + 2]
    assert corners.min() - 1e-15 <= val <= corners.max() + 1e-15


def test_table_driven_derivatives_match_model():
    """One-grid-interval central differences on a tabulated linear model recover the model slopes."""
    geom = replace(GEOM, alpha0=0.02)
    t = tabulate_model(COEFFS, np.linspace(-0.1, 0.1, 5), np.linspace(-5, 5, 41))
    A_t, B_t, _ = derive_stability_matrices(t, geom)
    _, B_m, _ = derive_stability_matrices(COEFFS, geom)
    np.testing.assert_allclose(B_t[1, :2], B_m[1, :2], rtol=1e-6)
    np.testing.assert_allclose(B_t[0, 0], B_m[0, 0], rtol=1e-6)
