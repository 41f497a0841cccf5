"""Feedforward Phugoid/catenary frequency-matching controller.

The controller asks for the morphing ``sigma`` whose Phugoid frequency
equals ``u0`` times the catenary spatial frequency at the current
span-local position, and restarts at every tower.

Sign convention: with ``Z_u < 0`` and ``Z_q = u0 > 0`` the Phugoid
frequency is ``sqrt(g * -(Z_u + Z_u_sigma * sigma) / Z_q)``, the classical
``sqrt(-g Z_u / u0)`` at sigma = 0. ``convention="printed"`` takes the
absolute value of ``g (Z_u + Z_u_sigma sigma) / Z_q`` instead.
"""

import csv
import io
import math
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Optional

import numpy as np

from .aero import G, StabilityDerivatives
from .errors import DomainError, NonOscillatoryError
from .powerline import CatenarySpec, PowerlineProfile


def _zu_term(derivs, sigma, zu_sigma):
    slope = derivs.Z_u_sigma if zu_sigma is None else zu_sigma(sigma)
    return derivs.Z_u + slope * sigma


def phugoid_frequency(derivs: StabilityDerivatives, sigma=0.0, zu_sigma=None, g=G,
                      convention="classical"):
    """Phugoid temporal frequency [rad/s] at morphing ``sigma``."""
    if derivs.Z_q == 0:
        raise DomainError("Z_q must be non-zero")
    radicand = g * _zu_term(derivs, sigma, zu_sigma) / derivs.Z_q
    if convention == "classical":
        radicand = -radicand
    elif convention == "printed":
        radicand = abs(radicand)
    else:
        raise ValueError(f"unknown convention {convention!r}")
    if radicand < 0:
        raise NonOscillatoryError(f"mode not oscillatory under current sigma={sigma:g}")
    return math.sqrt(radicand)


@dataclass(frozen=True)
class MatchingContext:
    derivs: StabilityDerivatives
    u0: float
    catenary: CatenarySpec
    sigma_lo: float = -0.032
    sigma_hi: float = 0.055
    zu_sigma: Optional[Callable] = None
    g: float = G
    omega_floor: float = 0.0

    def __post_init__(self):
        if self.derivs.Z_q == 0:
            raise DomainError("Z_q must be non-zero")
        if not self.u0 > 0:
            raise DomainError("u0 must be positive")
        if not self.sigma_lo < self.sigma_hi:
            raise DomainError("sigma_lo must be below sigma_hi")

    def for_span(self, catenary):
        return replace(self, catenary=catenary)


class SigmaSolution(NamedTuple):
    sigma: float
    saturated: bool
    iterations: int = 0
    method: str = "newton"


def matching_requirement(ctx: MatchingContext, x):
    """Catenary spatial frequency and the Phugoid frequency that matches it."""
    omega_s = float(ctx.catenary.spatial_frequency(x))
    return omega_s, ctx.u0 * omega_s


def matching_residual(ctx: MatchingContext, x, sigma):
    """``Z_u + Z_u_sigma(sigma) sigma + Z_q u0^2 x^2 / (g y^2)`` in the classical convention."""
    omega_s, _ = matching_requirement(ctx, x)
    demand = ctx.derivs.Z_q * ctx.u0 ** 2 * omega_s ** 2 / ctx.g
    return _zu_term(ctx.derivs, sigma, ctx.zu_sigma) + demand


def required_sigma(ctx: MatchingContext, x, tol=1e-10, max_iter=50) -> SigmaSolution:
    """Solve the matching residual for sigma by Newton-Raphson.

    Falls back to bisection on ``[sigma_lo, sigma_hi]`` if Newton does not
    converge in ``max_iter`` steps. Roots outside the bounds are clamped and
    flagged as saturated.
    """
    lo, hi = ctx.sigma_lo, ctx.sigma_hi
    omega_s, _ = matching_requirement(ctx, x)
    demand = ctx.derivs.Z_q * ctx.u0 ** 2 * omega_s ** 2 / ctx.g
    f = lambda s: _zu_term(ctx.derivs, s, ctx.zu_sigma) + demand
    if ctx.zu_sigma is None:
        dfdx = lambda s: ctx.derivs.Z_u_sigma
    else:
        h = 1e-6
        dfdx = lambda s: (f(s + h) - f(s - h)) / (2 * h)

    s = 0.0
    try:
        for it in range(1, max_iter + 1):
            r = f(s)
            if abs(r) < tol:
                return _clamp(s, lo, hi, it - 1, "newton")
            d = dfdx(s)
            if d == 0 or not math.isfinite(d):
                break
            s = s - r / d
            if not math.isfinite(s) or abs(s) > 1e6:
                break
        else:
            if abs(f(s)) < tol:
                return _clamp(s, lo, hi, max_iter, "newton")
    except DomainError:
        # a table-backed lookup left its grid; bisection stays inside the bounds
        pass

    f_lo, f_hi = f(lo), f(hi)
    if f_lo == 0:
        return SigmaSolution(lo, False, max_iter, "bisection")
    if f_hi == 0:
        return SigmaSolution(hi, False, max_iter, "bisection")
    if f_lo * f_hi > 0:
        # no root inside the authority; pick the bound with the smaller residual
        nearest = lo if abs(f_lo) < abs(f_hi) else hi
        return SigmaSolution(nearest, True, max_iter, "bisection")
    a, b, fa = lo, hi, f_lo
    n = 0
    while b - a > 1e-15 * max(1.0, abs(a)) and n < 200:
        m = 0.5 * (a + b)
        fm = f(m)
        if abs(fm) < tol:
            a = b = m
            break
        if (fm < 0) == (fa < 0):
            a, fa = m, fm
        else:
            b = m
        n += 1
    return SigmaSolution(0.5 * (a + b), False, max_iter + n, "bisection")


def _clamp(s, lo, hi, iterations, method):
    if s < lo:
        return SigmaSolution(lo, True, iterations, method)
    if s > hi:
        return SigmaSolution(hi, True, iterations, method)
    return SigmaSolution(float(s), False, iterations, method)


@dataclass(frozen=True)
class SpanSchedule:
    span: int
    x_start: float  # global position of the upstream tower
    length: float
    x: np.ndarray  # span-local command positions
    sigma: np.ndarray
    saturated: np.ndarray


@dataclass(frozen=True)
class MorphSchedule:
    """Per-span command sequences; each span starts from a controller reset."""

    spans: tuple
    dx: float
    sigma_lo: float
    sigma_hi: float

    @property
    def saturation_count(self):
        return int(sum(int(np.count_nonzero(s.saturated)) for s in self.spans))

    @property
    def n_commands(self):
        return int(sum(s.x.size for s in self.spans))

    def command(self, span_index, x_local):
        """Zero-order-hold command at span-local position ``x_local``."""
        sp = self.spans[span_index]
        k = int(np.searchsorted(sp.x, x_local, side="right")) - 1
        if k < 0:
            return 0.0
        return float(sp.sigma[k])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["span", "x", "sigma", "saturated_flag", "reset_marker"])
        for sp in self.spans:
            for x, s, sat in zip(sp.x, sp.sigma, sp.saturated):
                w.writerow([sp.span, repr(float(x)), repr(float(s)), int(sat), 0])
            w.writerow([sp.span, repr(float(sp.length)), repr(0.0), 0, 1])
        return buf.getvalue()


def build_schedule(ctx: MatchingContext, profile: PowerlineProfile, dx=0.5) -> MorphSchedule:
    """Commands at ``x = dx, 2 dx, ...`` from each span's upstream tower.

    Samples whose demanded frequency does not exceed ``ctx.omega_floor`` hold
    sigma = 0 until the first well-posed solve.
    """
    if not dx > 0:
        raise DomainError("schedule spacing dx must be positive")
    cache = {}
    spans = []
    for i, spec in enumerate(profile.spans):
        if spec not in cache:
            span_ctx = ctx.for_span(spec)
            n = int(math.floor(spec.span_length / dx + 1e-9))
            xs = dx * np.arange(1, n + 1)
            sig = np.zeros(n)
            sat = np.zeros(n, dtype=bool)
            engaged = False
            for k, x in enumerate(xs):
                _, need = matching_requirement(span_ctx, x)
                if not engaged and need <= ctx.omega_floor:
                    continue
                engaged = True
                try:
                    sol = required_sigma(span_ctx, x)
                except Exception as exc:
                    raise type(exc)(f"span {i}, x={x:g} m: {exc}") from exc
                sig[k], sat[k] = sol.sigma, sol.saturated
            for a in (xs, sig, sat):
                a.setflags(write=False)
            cache[spec] = (xs, sig, sat)
        xs, sig, sat = cache[spec]
        spans.append(SpanSchedule(i, float(profile.tower_positions[i]), spec.span_length, xs, sig, sat))
    return MorphSchedule(tuple(spans), float(dx), ctx.sigma_lo, ctx.sigma_hi)
