"""Shape-adaptive aerodynamics and the linearized longitudinal plant.

The morphing parameter ``sigma`` (the coefficient models call it ``mu``) is a
dimensionless shape change, e.g. 0.05 for a 5 % thickness increase. Plants
use the state order ``(u, w, q, theta, h)``: body-axis velocity perturbations
(w positive down), pitch rate, pitch angle and altitude (positive up).
"""

import csv
import io
import json
import math
import re
import warnings
from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import RegularGridInterpolator

from .errors import DomainError, PolarTableError, SolverError

G = 9.81


class EnvelopeWarning(UserWarning):
    pass


class CoefficientSample(NamedTuple):
    """Force/moment coefficients and their local slopes at one (alpha, sigma)."""

    CL: float
    CD: float
    Cm: float
    CL_a: float
    CD_a: float
    Cm_a: float
    CL_V: float
    CD_V: float
    Cm_V: float
    Cm_q: float


@dataclass(frozen=True)
class AeroCoefficients:
    """Coefficient expansion in alpha [rad], dV/V and the shape parameter mu.

    The first thirteen fields are the plain linear/quadratic sensitivities.
    ``Cm_q`` is pitch damping per unit ``q c / (2 u0)``. The ``*_alpha_mu``
    and ``Cm_q_mu`` terms let the slopes themselves move with shape, and
    ``CL_mu2``/``CD_mu2`` add a second-order shape response. With those extra
    shape terms at zero the expansion is affine in mu.
    """

    CL0: float
    CL_alpha: float
    CL_V: float
    CL_mu: float
    CD0: float
    CD_alpha: float
    CD_alpha2: float
    CD_V: float
    CD_mu: float
    Cm0: float
    Cm_alpha: float
    Cm_V: float
    Cm_mu: float
    Cm_q: float = -12.0
    CL_alpha_mu: float = 0.0
    Cm_alpha_mu: float = 0.0
    Cm_q_mu: float = 0.0
    CL_mu2: float = 0.0
    CD_mu2: float = 0.0

    def lift(self, alpha, dV_over_V=0.0, mu=0.0):
        return (self.CL0 + (self.CL_alpha + self.CL_alpha_mu * mu) * alpha
                + self.CL_V * dV_over_V + self.CL_mu * mu + self.CL_mu2 * mu * mu)

    def drag(self, alpha, dV_over_V=0.0, mu=0.0):
        return (self.CD0 + self.CD_alpha * alpha + self.CD_alpha2 * alpha * alpha
                + self.CD_V * dV_over_V + self.CD_mu * mu + self.CD_mu2 * mu * mu)

    def moment(self, alpha, dV_over_V=0.0, mu=0.0):
        return (self.Cm0 + (self.Cm_alpha + self.Cm_alpha_mu * mu) * alpha
                + self.Cm_V * dV_over_V + self.Cm_mu * mu)

    def sample(self, alpha, sigma) -> CoefficientSample:
        return CoefficientSample(
            CL=self.lift(alpha, 0.0, sigma),
            CD=self.drag(alpha, 0.0, sigma),
            Cm=self.moment(alpha, 0.0, sigma),
            CL_a=self.CL_alpha + self.CL_alpha_mu * sigma,
            CD_a=self.CD_alpha + 2.0 * self.CD_alpha2 * alpha,
            Cm_a=self.Cm_alpha + self.Cm_alpha_mu * sigma,
            CL_V=self.CL_V,
            CD_V=self.CD_V,
            Cm_V=self.Cm_V,
            Cm_q=self.Cm_q + self.Cm_q_mu * sigma,
        )


def eval_coefficients(coeffs: AeroCoefficients, alpha, dV_over_V, mu,
                      alpha_max=math.radians(15.0), mu_max=None):
    """Return ``(C_L, C_D, C_m)``.

    Points outside the envelope still evaluate but raise an
    :class:`EnvelopeWarning` so a caller can count saturation.
    """
    if abs(alpha) > alpha_max or (mu_max is not None and abs(mu) > mu_max):
        warnings.warn(f"coefficient evaluation outside envelope (alpha={alpha:.4f}, mu={mu:.4f})",
                      EnvelopeWarning, stacklevel=2)
    return (coeffs.lift(alpha, dV_over_V, mu),
            coeffs.drag(alpha, dV_over_V, mu),
            coeffs.moment(alpha, dV_over_V, mu))


@dataclass(frozen=True)
class AircraftGeometry:
    wingspan: float
    chord: float
    mass: float
    Iyy: float
    u0: float = 25.0
    theta0: float = 0.0
    alpha0: Optional[float] = None
    rho: float = 1.225
    area: Optional[float] = None

    def __post_init__(self):
        if self.area is None:
            object.__setattr__(self, "area", self.wingspan * self.chord)
        for name in ("wingspan", "chord", "mass", "Iyy", "u0", "rho", "area"):
            if not getattr(self, name) > 0:
                raise DomainError(f"geometry field {name} must be positive, got {getattr(self, name)}")

    @property
    def aspect_ratio(self):
        return self.wingspan ** 2 / self.area

    @property
    def dynamic_pressure(self):
        return 0.5 * self.rho * self.u0 ** 2


def dimensional_forces(geom: AircraftGeometry, CL, CD, Cm, V):
    if not V > 0:
        raise DomainError(f"airspeed must be positive, got {V}")
    qS = 0.5 * geom.rho * V * V * geom.area
    return qS * CL, qS * CD, qS * geom.chord * Cm


class TrimResult(NamedTuple):
    alpha0: float
    thrust: float
    iterations: int


def trim(source, geom: AircraftGeometry, g=G, tol=1e-12, max_iter=50) -> TrimResult:
    """Level-flight trim at ``geom.u0``.

    Newton iteration on ``(alpha0, thrust)`` so that ``L = m g cos(theta0)``
    and ``T = D + m g sin(theta0)``; thrust acts along the flight path.
    """
    W = geom.mass * g
    qS = geom.dynamic_pressure * geom.area
    x = np.array([0.0, 0.0])

    def residual(v):
        s = source.sample(v[0], 0.0)
        return np.array([qS * s.CL - W * math.cos(geom.theta0),
                         v[1] - qS * s.CD - W * math.sin(geom.theta0)])

    for it in range(1, max_iter + 1):
        r = residual(x)
        h = 1e-6
        J = np.empty((2, 2))
        for j in range(2):
            dx = np.zeros(2)
            dx[j] = h
            J[:, j] = (residual(x + dx) - residual(x - dx)) / (2 * h)
        step = np.linalg.solve(J, r)
        x = x - step
        if np.max(np.abs(step)) < tol * (1.0 + np.max(np.abs(x))):
            return TrimResult(float(x[0]), float(x[1]), it)
    raise SolverError("trim iteration did not converge")


@dataclass(frozen=True)
class StabilityDerivatives:
    X_u: float
    X_w: float
    X_q: float
    Z_u: float
    Z_w: float
    Z_q: float
    M_u: float
    M_w: float
    M_q: float
    X_u_sigma: float = 0.0
    X_w_sigma: float = 0.0
    Z_u_sigma: float = 0.0
    Z_w_sigma: float = 0.0
    M_u_sigma: float = 0.0
    M_w_sigma: float = 0.0
    M_q_sigma: float = 0.0

    def matrices(self, u0, theta0=0.0, g=G, h_row="climb_rate", w0=0.0):
        """Assemble ``(A, B_sigma)``.

        ``h_row="climb_rate"`` uses the linearized climb rate
        ``hdot = u sin(theta0) - w cos(theta0) + (u0 cos(theta0) + w0 sin(theta0)) theta``.
        ``h_row="printed"`` keeps ``[cos(theta0), sin(theta0), 0, 0, 0]``.
        """
        ct, st = math.cos(theta0), math.sin(theta0)
        A = np.array([
            [self.X_u, self.X_w, self.X_q, -g * ct, 0.0],
            [self.Z_u, self.Z_w, self.Z_q, -g * st, 0.0],
            [self.M_u, self.M_w, self.M_q, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0, 0.0],
            _h_row(h_row, u0, theta0, w0),
        ])
        B = np.array([
            [self.X_u_sigma, self.X_w_sigma, 0.0, 0.0, 0.0],
            [self.Z_u_sigma, self.Z_w_sigma, 0.0, 0.0, 0.0],
            [self.M_u_sigma, self.M_w_sigma, self.M_q_sigma, 0.0, 0.0],
            [0.0] * 5,
            [0.0] * 5,
        ])
        return A, B

    @classmethod
    def from_matrices(cls, A, B):
        A = np.asarray(A, float)
        B = np.asarray(B, float)
        return cls(
            X_u=A[0, 0], X_w=A[0, 1], X_q=A[0, 2],
            Z_u=A[1, 0], Z_w=A[1, 1], Z_q=A[1, 2],
            M_u=A[2, 0], M_w=A[2, 1], M_q=A[2, 2],
            X_u_sigma=B[0, 0], X_w_sigma=B[0, 1],
            Z_u_sigma=B[1, 0], Z_w_sigma=B[1, 1],
            M_u_sigma=B[2, 0], M_w_sigma=B[2, 1], M_q_sigma=B[2, 2],
        )


def _h_row(mode, u0, theta0, w0=0.0):
    ct, st = math.cos(theta0), math.sin(theta0)
    if mode == "climb_rate":
        return [st, -ct, 0.0, u0 * ct + w0 * st, 0.0]
    if mode == "printed":
        return [ct, st, 0.0, 0.0, 0.0]
    raise ValueError(f"unknown h_row mode {mode!r}")


@dataclass(frozen=True)
class Plant:
    """Linear shape-adaptive plant ``xdot = (A + B_sigma * sigma) x``."""

    A: np.ndarray
    B_sigma: np.ndarray
    derivs: StabilityDerivatives
    u0: float
    zu_sigma: Optional[object] = None  # callable sigma -> secant Z_u sensitivity
    g: float = G

    def __post_init__(self):
        for name in ("A", "B_sigma"):
            m = np.array(getattr(self, name), dtype=float)
            if m.shape != (5, 5):
                raise DomainError(f"{name} must be 5x5, got {m.shape}")
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    def at(self, sigma):
        return self.A + self.B_sigma * sigma


def _load_json(path):
    if path is None:
        text = resources.files("plussim.data").joinpath("reference_plant.json").read_text()
    else:
        text = Path(path).read_text()
    return json.loads(text)


def load_reference_plant(path=None, h_row="climb_rate") -> Plant:
    """Load the published reference plant (bundled file unless ``path`` given).

    The matrices are read verbatim; only the altitude row is rewritten when
    ``h_row="climb_rate"``.
    """
    d = _load_json(path)
    u0 = float(d.get("u0", 25.0))
    theta0 = float(d.get("theta0", 0.0))
    A = np.array(d["A"], dtype=float)
    B = np.array(d["B_sigma"], dtype=float)
    if h_row != "printed":
        A[4] = _h_row(h_row, u0, theta0)
    return Plant(A=A, B_sigma=B, derivs=StabilityDerivatives.from_matrices(A, B), u0=u0)


def save_plant(plant: Plant, path, theta0=0.0):
    Path(path).write_text(json.dumps({
        "u0": plant.u0, "theta0": theta0,
        "A": plant.A.tolist(), "B_sigma": plant.B_sigma.tolist(),
    }, indent=2))


# --------------------------------------------------------------------------
# derivatives from a coefficient source (AeroCoefficients or PolarTable)

def dimensional_derivatives(source, geom: AircraftGeometry, sigma=0.0) -> StabilityDerivatives:
    """Dimensional derivatives at shape ``sigma`` about the trim in ``geom``."""
    if geom.alpha0 is None:
        raise DomainError("geometry has no trim angle of attack; run trim() first")
    s = source.sample(geom.alpha0, sigma)
    u0 = geom.u0
    k = geom.rho * u0 * geom.area / (2.0 * geom.mass)
    kM = geom.rho * u0 * geom.area * geom.chord / (2.0 * geom.Iyy)
    return StabilityDerivatives(
        X_u=-(s.CD_V + 2.0 * s.CD) * k,
        X_w=-(s.CD_a - s.CL) * k,
        X_q=0.0,
        Z_u=-(s.CL_V + 2.0 * s.CL) * k,
        Z_w=-(s.CL_a + s.CD) * k,
        Z_q=u0,
        M_u=(s.Cm_V + 2.0 * s.Cm) * kM,
        M_w=s.Cm_a * kM,
        M_q=s.Cm_q * kM * geom.chord / 2.0,
    )


_SIGMA_FIELDS = ("X_u", "X_w", "Z_u", "Z_w", "M_u", "M_w", "M_q")


def sigma_sensitivities(source, geom, step=None, scheme="central"):
    """Finite-difference d(derivative)/d(sigma) at sigma = 0.

    ``step`` defaults to one grid interval for a polar table and 1e-3
    otherwise. ``scheme="lsq"`` fits a least-squares slope through
    ``sigma = -2h..2h`` instead of the two-point central difference.
    """
    if step is None:
        step = source.sigma_step if hasattr(source, "sigma_step") else 1e-3
    lo, hi = getattr(source, "sigma_limits", (-np.inf, np.inf))

    if scheme == "central":
        offsets = [-step, step]
    elif scheme == "lsq":
        offsets = [-2 * step, -step, 0.0, step, 2 * step]
    else:
        raise ValueError(f"unknown finite-difference scheme {scheme!r}")
    offsets = [o for o in offsets if lo - 1e-12 <= o <= hi + 1e-12]
    if 0.0 not in offsets:
        offsets.append(0.0)
    offsets = sorted(set(offsets))
    if len(offsets) < 2:
        raise DomainError("not enough sigma samples for a finite difference")

    rows = [dimensional_derivatives(source, geom, o) for o in offsets]
    out = {}
    for name in _SIGMA_FIELDS:
        vals = np.array([getattr(r, name) for r in rows])
        if scheme == "central" and len(offsets) == 3:
            slope = (vals[-1] - vals[0]) / (offsets[-1] - offsets[0])
        else:
            slope = np.polyfit(offsets, vals, 1)[0]
        if not np.isfinite(slope):
            raise SolverError(f"non-finite sensitivity for {name}")
        out[name + "_sigma"] = float(slope)
    return out


def derive_stability_matrices(source, geom: AircraftGeometry, step=None, scheme="central",
                              h_row="climb_rate", g=G):
    """Return ``(A, B_sigma, derivs)`` linearized about the trim in ``geom``."""
    if geom.alpha0 is None:
        geom = replace(geom, alpha0=trim(source, geom, g=g).alpha0)
    base = dimensional_derivatives(source, geom, 0.0)
    derivs = replace(base, **sigma_sensitivities(source, geom, step=step, scheme=scheme))
    for f in fields(derivs):
        if not np.isfinite(getattr(derivs, f.name)):
            raise SolverError(f"non-finite derivative {f.name}")
    A, B = derivs.matrices(geom.u0, geom.theta0, g=g, h_row=h_row)
    return A, B, derivs


def zu_sigma_lookup(source, geom: AircraftGeometry, h=1e-4):
    """Secant sensitivity ``(Z_u(sigma) - Z_u(0)) / sigma``.

    ``Z_u + lookup(sigma) * sigma`` equals the shape-resolved ``Z_u(sigma)``
    exactly; at sigma -> 0 the central-difference slope is returned.
    """
    if geom.alpha0 is None:
        geom = replace(geom, alpha0=trim(source, geom).alpha0)
    zu0 = dimensional_derivatives(source, geom, 0.0).Z_u

    def lookup(sigma):
        if abs(sigma) < h:
            return (dimensional_derivatives(source, geom, h).Z_u
                    - dimensional_derivatives(source, geom, -h).Z_u) / (2 * h)
        return (dimensional_derivatives(source, geom, sigma).Z_u - zu0) / sigma

    return lookup


def build_plant(source, geom: AircraftGeometry, step=None, scheme="central",
                h_row="climb_rate", g=G) -> Plant:
    if geom.alpha0 is None:
        geom = replace(geom, alpha0=trim(source, geom, g=g).alpha0)
    A, B, derivs = derive_stability_matrices(source, geom, step=step, scheme=scheme, h_row=h_row, g=g)
    return Plant(A=A, B_sigma=B, derivs=derivs, u0=geom.u0,
                 zu_sigma=zu_sigma_lookup(source, geom), g=g)


def span_morph_moments(rates, accels, inertias, m_s, y0, dy, dy_dot):
    """Rolling, pitching and yawing moment sums for symmetric span morphing.

    Each wing-tip mass ``m_s`` sits at ``y0 + dy`` and moves at ``dy_dot``.
    """
    p, q, r = rates
    pd, qd, rd = accels
    Ix, Iy, Iz = inertias
    L = pd * Ix + q * r * (Iz - Iy) + 2.0 * m_s * dy_dot * (y0 * p + dy * p)
    M = qd * Iy + r * q * (Ix - Iz)
    N = rd * Iz + p * q * (Iy - Ix) + 2.0 * m_s * dy_dot * (y0 * r + dy * r)
    return L, M, N


# --------------------------------------------------------------------------
# synthetic NACA-family model

_NACA = re.compile(r"^(?:NACA)?\s*(\d)(\d)(\d\d)$", re.IGNORECASE)


def parse_naca(family):
    m = _NACA.match(str(family).strip())
    if not m:
        raise ValueError(f"not a NACA 4-digit designation: {family!r}")
    return int(m.group(1)) / 100.0, int(m.group(2)) / 10.0, int(m.group(3)) / 100.0


def thin_airfoil_zero_lift(camber, position):
    """Zero-lift angle [rad] of a NACA 4-digit mean line by thin-airfoil theory."""
    if camber == 0.0 or position == 0.0:
        return 0.0
    m, p = camber, position

    def slope(xc):
        if xc < p:
            return 2 * m / p ** 2 * (p - xc)
        return 2 * m / (1 - p) ** 2 * (p - xc)

    th_p = math.acos(1 - 2 * p)
    val, _ = quad(lambda th: slope(0.5 * (1 - math.cos(th))) * (math.cos(th) - 1), 0, math.pi, points=[th_p])
    return -val / math.pi


def load_defaults():
    return json.loads(resources.files("plussim.data").joinpath("reference.json").read_text())


def synthetic_coefficient_model(family="NACA2412", sigma_mode="thickness", aspect_ratio=None,
                                calibration=None) -> AeroCoefficients:
    """Analytic stand-in for a panel-code polar.

    Lift: thin-airfoil zero-lift angle of the mean line, 2*pi section slope
    corrected to the finite wing by lifting-line. Drag: profile drag plus
    the induced polar ``CL^2 / (pi e AR)`` expanded in alpha. Pitching moment
    and speed sensitivities are whole-aircraft values from ``calibration``
    (the ``aero`` section of the bundled reference config by default), as
    are the shape slopes for ``sigma_mode``.
    """
    cal = calibration if calibration is not None else load_defaults()["aero"]
    if sigma_mode not in cal["modes"]:
        raise ValueError(f"unknown sigma_mode {sigma_mode!r}; expected one of {sorted(cal['modes'])}")
    camber, position, _ = parse_naca(family)
    if aspect_ratio is None:
        gm = cal["geometry"]
        aspect_ratio = gm["wingspan"] / gm["chord"]
    e = cal.get("oswald", 0.9)
    k_ind = 1.0 / (math.pi * e * aspect_ratio)
    a = 2 * math.pi / (1 + 2 * math.pi * k_ind)
    cl0 = -a * thin_airfoil_zero_lift(camber, position)
    air = cal["aircraft"]
    mode = cal["modes"][sigma_mode]
    return AeroCoefficients(
        CL0=cl0, CL_alpha=a, CL_V=air["CL_V"], CL_mu=mode["CL_mu"],
        CD0=cal.get("cd_profile", 0.025) + k_ind * cl0 ** 2,
        CD_alpha=2 * k_ind * cl0 * a,
        CD_alpha2=k_ind * a * a,
        CD_V=air["CD_V"], CD_mu=mode["CD_mu"],
        Cm0=air["Cm0"], Cm_alpha=air["Cm_alpha"], Cm_V=air["Cm_V"], Cm_mu=mode["Cm_mu"],
        Cm_q=air["Cm_q"],
        CL_alpha_mu=mode.get("CL_alpha_mu", 0.0),
        Cm_alpha_mu=mode.get("Cm_alpha_mu", 0.0),
        Cm_q_mu=mode.get("Cm_q_mu", 0.0),
        CL_mu2=mode.get("CL_mu2", 0.0),
        CD_mu2=mode.get("CD_mu2", 0.0),
    )


def geometry_from_config(cal, wingspan=None, chord=None) -> AircraftGeometry:
    gm = cal["geometry"]
    return AircraftGeometry(
        wingspan=gm["wingspan"] if wingspan is None else wingspan,
        chord=gm["chord"] if chord is None else chord,
        mass=gm["mass"], Iyy=gm["Iyy"], u0=gm["u0"],
        theta0=gm.get("theta0", 0.0), rho=gm.get("rho", 1.225),
    )


def synthetic_plant(cal=None, wingspan=None, chord=None, h_row="climb_rate", g=G):
    """Trimmed plant of the synthetic model for one (wingspan, chord)."""
    cal = cal if cal is not None else load_defaults()["aero"]
    geom = geometry_from_config(cal, wingspan, chord)
    coeffs = synthetic_coefficient_model(cal.get("family", "NACA2412"), cal.get("sigma_mode", "thickness"),
                                         aspect_ratio=geom.aspect_ratio, calibration=cal)
    geom = replace(geom, alpha0=trim(coeffs, geom, g=g).alpha0)
    plant = build_plant(coeffs, geom, scheme=cal.get("fd_scheme", "central"), h_row=h_row, g=g)
    return plant, coeffs, geom


# --------------------------------------------------------------------------
# polar tables

POLAR_COLUMNS = ("sigma", "alpha_deg", "CL", "CD", "Cm")


@dataclass(frozen=True)
class PolarTable:
    """Rectangular (sigma, alpha) grid of CL, CD, Cm samples."""

    sigma: np.ndarray
    alpha_deg: np.ndarray
    CL: np.ndarray
    CD: np.ndarray
    Cm: np.ndarray
    family: str = "unknown"
    pitch_damping: float = -12.0

    def __post_init__(self):
        s, a = np.asarray(self.sigma, float), np.asarray(self.alpha_deg, float)
        if s.size < 2 or a.size < 2:
            raise PolarTableError("table needs at least two sigma and two alpha values")
        if np.any(np.diff(s) <= 0) or np.any(np.diff(a) <= 0):
            raise PolarTableError("table axes must be strictly increasing")
        if not s[0] <= 0.0 <= s[-1]:
            raise PolarTableError(f"sigma range [{s[0]}, {s[-1]}] must bracket 0")
        for name in ("CL", "CD", "Cm"):
            v = np.asarray(getattr(self, name), float)
            if v.shape != (s.size, a.size):
                raise PolarTableError(f"{name} grid has shape {v.shape}, expected {(s.size, a.size)}")
        object.__setattr__(self, "_interp", {
            name: RegularGridInterpolator((s, np.radians(a)), np.asarray(getattr(self, name), float))
            for name in ("CL", "CD", "Cm")
        })

    @property
    def sigma_limits(self):
        return float(self.sigma[0]), float(self.sigma[-1])

    @property
    def sigma_step(self):
        return float(np.min(np.diff(self.sigma)))

    @property
    def alpha_step(self):
        return float(np.radians(np.min(np.diff(self.alpha_deg))))

    def interpolate(self, name, alpha, sigma):
        """Bilinear value of ``name`` at ``alpha`` [rad], ``sigma``."""
        lo, hi = self.sigma_limits
        a_lo, a_hi = np.radians(self.alpha_deg[0]), np.radians(self.alpha_deg[-1])
        if not (lo - 1e-12 <= sigma <= hi + 1e-12 and a_lo - 1e-12 <= alpha <= a_hi + 1e-12):
            raise DomainError(f"(alpha={alpha:.4f} rad, sigma={sigma}) outside polar table")
        pt = (min(max(sigma, lo), hi), min(max(alpha, a_lo), a_hi))
        return float(self._interp[name]([pt])[0])

    def _alpha_slope(self, name, alpha, sigma):
        h = self.alpha_step
        a_lo, a_hi = np.radians(self.alpha_deg[0]), np.radians(self.alpha_deg[-1])
        lo, hi = max(alpha - h, a_lo), min(alpha + h, a_hi)
        return (self.interpolate(name, hi, sigma) - self.interpolate(name, lo, sigma)) / (hi - lo)

    def sample(self, alpha, sigma) -> CoefficientSample:
        return CoefficientSample(
            CL=self.interpolate("CL", alpha, sigma),
            CD=self.interpolate("CD", alpha, sigma),
            Cm=self.interpolate("Cm", alpha, sigma),
            CL_a=self._alpha_slope("CL", alpha, sigma),
            CD_a=self._alpha_slope("CD", alpha, sigma),
            Cm_a=self._alpha_slope("Cm", alpha, sigma),
            CL_V=0.0, CD_V=0.0, Cm_V=0.0,
            Cm_q=self.pitch_damping,
        )


def ingest_polar_table(source, family="unknown", pitch_damping=-12.0) -> PolarTable:
    """Parse a ``sigma,alpha_deg,CL,CD,Cm`` CSV (path, text, or file object).

    Rows must be ordered by sigma, then by alpha within each sigma block.
    Errors name the offending line.
    """
    if hasattr(source, "read"):
        text = source.read()
    else:
        p = Path(source) if not (isinstance(source, str) and "\n" in source) else None
        text = p.read_text(encoding="utf-8") if p is not None else source
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise PolarTableError("line 1: empty polar table") from None
    missing = [c for c in POLAR_COLUMNS if c not in header]
    if missing:
        raise PolarTableError(f"line 1: missing column(s) {', '.join(missing)}")
    col = {c: header.index(c) for c in POLAR_COLUMNS}

    cells = {}
    last = None
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            vals = {c: float(row[i]) for c, i in col.items()}
        except (ValueError, IndexError):
            raise PolarTableError(f"line {lineno}: could not parse numeric row {row!r}") from None
        key = (vals["sigma"], vals["alpha_deg"])
        if key in cells:
            raise PolarTableError(f"line {lineno}: duplicate node sigma={key[0]:g}, alpha_deg={key[1]:g} "
                                  f"(first seen on line {cells[key][0]})")
        if last is not None and (key[0] < last[0] or (key[0] == last[0] and key[1] <= last[1])):
            raise PolarTableError(f"line {lineno}: rows not ordered by sigma then alpha_deg")
        cells[key] = (lineno, vals["CL"], vals["CD"], vals["Cm"])
        last = key

    if not cells:
        raise PolarTableError("polar table has no data rows")
    sig = np.array(sorted({k[0] for k in cells}))
    alp = np.array(sorted({k[1] for k in cells}))
    grids = {n: np.empty((sig.size, alp.size)) for n in ("CL", "CD", "Cm")}
    for i, s in enumerate(sig):
        for j, a in enumerate(alp):
            if (s, a) not in cells:
                raise PolarTableError(f"ragged grid: missing node sigma={s:g}, alpha_deg={a:g}")
            _, cl, cd, cm = cells[(s, a)]
            grids["CL"][i, j], grids["CD"][i, j], grids["Cm"][i, j] = cl, cd, cm
    return PolarTable(sig, alp, grids["CL"], grids["CD"], grids["Cm"], family=family, pitch_damping=pitch_damping)


def tabulate_model(coeffs: AeroCoefficients, sigmas, alphas_deg, family="synthetic") -> PolarTable:
    sig = np.asarray(sigmas, float)
    alp = np.asarray(alphas_deg, float)
    S, A = np.meshgrid(sig, np.radians(alp), indexing="ij")
    return PolarTable(sig, alp, coeffs.lift(A, 0.0, S), coeffs.drag(A, 0.0, S), coeffs.moment(A, 0.0, S),
                      family=family, pitch_damping=coeffs.Cm_q)


def polar_table_csv(table: PolarTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(POLAR_COLUMNS)
    for i, s in enumerate(table.sigma):
        for j, a in enumerate(table.alpha_deg):
            w.writerow([repr(float(s)), repr(float(a)), repr(float(table.CL[i, j])),
                        repr(float(table.CD[i, j])), repr(float(table.Cm[i, j]))])
    return buf.getvalue()
