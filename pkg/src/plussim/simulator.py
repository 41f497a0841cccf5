"""Time-varying linear simulation of the morphing aircraft over a powerline.

Integrates ``xdot = (A + B_sigma sigma(t)) x`` with fixed-step RK4 while the
along-track position advances at ``u0 + u``. The morphing command is read
from the schedule at the aircraft's span-local position, held over each
step, and optionally passed through the servo model. This is the
linearized plant only; no nonlinear equations of motion are integrated.
"""

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from . import actuator as act
from .aero import G, Plant, StabilityDerivatives
from .controller import MorphSchedule, phugoid_frequency
from .errors import DomainError, SimulationDiverged
from .powerline import PowerlineProfile

STATE_NAMES = ("u", "w", "q", "theta", "h")


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    actuator_mode: str = "ideal"  # "ideal" or "servo"
    servo: Optional[act.ServoModel] = None
    initial_state: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)
    divergence_bound: float = 1e3
    horizon: Optional[float] = None  # seconds; None runs to the end of the schedule

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        if self.actuator_mode not in ("ideal", "servo"):
            raise DomainError(f"actuator_mode must be 'ideal' or 'servo', got {self.actuator_mode!r}")
        if len(self.initial_state) != 5:
            raise DomainError("initial_state needs five components (u, w, q, theta, h)")


@dataclass
class SimState:
    """Everything needed to continue a run bit-for-bit."""

    step: int
    state: np.ndarray
    x: float
    servo: Optional[act.ActuatorState] = None


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    states: np.ndarray  # (N, 5)
    sigma_cmd: np.ndarray
    sigma_achieved: np.ndarray
    final: SimState = field(compare=False, repr=False)

    def __len__(self):
        return self.t.size

    def component(self, name):
        return self.states[:, STATE_NAMES.index(name)]

    def to_csv(self, profile: Optional[PowerlineProfile] = None, h_ref=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "x", *STATE_NAMES, "sigma_cmd", "sigma_achieved", "wire_height", "clearance"])
        if profile is not None:
            h_ref = profile.tower_height if h_ref is None else h_ref
            inside = self.x <= profile.total_length
            wire = np.full(self.x.size, np.nan)
            wire[inside] = profile.wire_height(self.x[inside])
            clear = h_ref + self.states[:, 4] - wire
        else:
            wire = clear = np.full(self.x.size, np.nan)
        for i in range(self.t.size):
            w.writerow([repr(float(v)) for v in (self.t[i], self.x[i], *self.states[i],
                                                 self.sigma_cmd[i], self.sigma_achieved[i],
                                                 wire[i], clear[i])])
        return buf.getvalue()


def rk4_step(f, y, t, dt):
    k1 = f(y, t)
    k2 = f(y + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = f(y + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = f(y + dt * k3, t + dt)
    return y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _augmented(M, u0):
    # z = (u, w, q, theta, h, x, 1); xdot = u0 + u
    Ma = np.zeros((7, 7))
    Ma[:5, :5] = M
    Ma[5, 0] = 1.0
    Ma[5, 6] = u0
    return Ma


def rk4_propagator(M, dt):
    """One RK4 step of ``zdot = M z`` as a matrix (the degree-4 Taylor polynomial)."""
    hM = dt * M
    hM2 = hM @ hM
    hM3 = hM2 @ hM
    return np.eye(M.shape[0]) + hM + hM2 / 2.0 + hM3 / 6.0 + (hM3 @ hM) / 24.0


def _tower_positions(schedule: MorphSchedule):
    sp = schedule.spans
    return np.array([s.x_start for s in sp] + [sp[-1].x_start + sp[-1].length])


def initial_sim_state(plant: Plant, cfg: SimConfig) -> SimState:
    servo = None
    if cfg.actuator_mode == "servo":
        model = cfg.servo or act.default_servo()
        servo = act.initial_state(model, cfg.dt)
    return SimState(step=0, state=np.array(cfg.initial_state, dtype=float), x=0.0, servo=servo)


def integrate(plant: Plant, schedule: MorphSchedule, cfg: SimConfig,
              start: Optional[SimState] = None, stop_x=None) -> Trajectory:
    """Fixed-step RK4 run from ``start`` until the aircraft passes ``stop_x``.

    ``stop_x`` defaults to the last tower of the schedule. Pass the returned
    ``trajectory.final`` back as ``start`` to continue the same run.
    """
    towers = _tower_positions(schedule)
    stop_x = towers[-1] if stop_x is None else float(stop_x)
    st = start if start is not None else initial_sim_state(plant, cfg)
    if cfg.actuator_mode == "servo" and st.servo is None:
        raise DomainError("servo mode needs an actuator state")
    model = (cfg.servo or act.default_servo()) if cfg.actuator_mode == "servo" else None

    dt, u0 = cfg.dt, plant.u0
    A, B = plant.A, plant.B_sigma
    z = np.concatenate([st.state, [st.x, 1.0]])
    servo = st.servo
    k = st.step
    bound = cfg.divergence_bound
    max_steps = None if cfg.horizon is None else int(round(cfg.horizon / dt))
    cache = {}

    ts, xs, rows, cmds, achs = [], [], [], [], []
    n_spans = len(schedule.spans)
    while True:
        x = z[5]
        span = min(int(np.searchsorted(towers, x, side="right")) - 1, n_spans - 1)
        span = max(span, 0)
        local = x - towers[span]
        sigma_cmd = schedule.command(span, local)
        if servo is None:
            sigma = sigma_cmd
        else:
            sigma = servo.output
        ts.append(k * dt)
        xs.append(x)
        rows.append(z[:5].copy())
        cmds.append(sigma_cmd)
        achs.append(sigma)
        if x >= stop_x or (max_steps is not None and k >= max_steps):
            break

        if servo is not None:
            act.step(model, servo, sigma_cmd / model.gain)
        P = cache.get(sigma)
        if P is None:
            P = rk4_propagator(_augmented(A + B * sigma, u0), dt)
            if servo is None:
                cache[sigma] = P
        z = P @ z
        k += 1
        if not np.all(np.abs(z[:5]) <= bound):
            raise SimulationDiverged(
                f"state exceeded divergence bound {bound:g} at t={k * dt:.3f} s, x={z[5]:.2f} m: "
                + ", ".join(f"{n}={v:.3g}" for n, v in zip(STATE_NAMES, z[:5])),
                step=k, time=k * dt, state=z[:5].copy())

    final = SimState(step=k, state=z[:5].copy(), x=float(z[5]), servo=servo)
    return Trajectory(np.array(ts), np.array(xs), np.array(rows), np.array(cmds), np.array(achs), final)


@dataclass(frozen=True)
class TrackingMetrics:
    x: np.ndarray
    clearance: np.ndarray
    length_under: float
    length_over: float
    threshold: float
    min_clearance: float
    max_clearance: float
    span_fraction_under: tuple
    span_min_abs_clearance: tuple
    velocity_deviation: np.ndarray
    saturation_count: int = 0

    @property
    def length_total(self):
        return self.length_under + self.length_over

    @property
    def fraction_under(self):
        return self.length_under / self.length_total if self.length_total > 0 else 0.0

    @property
    def alternates(self):
        """True when per-span tracking quality alternates good/poor span to span."""
        d = np.diff(self.span_fraction_under)
        return d.size >= 2 and bool(np.all(d != 0)) and bool(np.all(np.sign(d[1:]) == -np.sign(d[:-1])))

    def summary(self):
        return {
            "threshold_m": self.threshold,
            "length_under_m": self.length_under,
            "length_total_m": self.length_total,
            "fraction_under": self.fraction_under,
            "min_clearance_m": self.min_clearance,
            "max_clearance_m": self.max_clearance,
            "span_fraction_under": list(self.span_fraction_under),
            "span_min_abs_clearance_m": list(self.span_min_abs_clearance),
            "alternating": self.alternates,
            "max_abs_velocity_deviation": float(np.max(np.abs(self.velocity_deviation))),
            "saturated_samples": self.saturation_count,
        }


def clearance_metrics(traj: Trajectory, profile: PowerlineProfile, h_ref=None, threshold=1.0,
                      saturation_count=0) -> TrackingMetrics:
    """Clearance between aircraft altitude ``h_ref + h`` and the wire.

    Each interval between consecutive samples counts toward the under-threshold
    length when the mean of its endpoint clearances is within ``threshold``.
    """
    h_ref = profile.tower_height if h_ref is None else h_ref
    x = traj.x
    if x.size < 2:
        raise DomainError("trajectory needs at least two samples")
    slack = 2.0 * np.max(np.abs(np.diff(x)))
    if x[0] < -1e-9 or x[-1] > profile.total_length + slack or x[-1] < profile.tower_positions[1] - slack:
        raise DomainError(
            f"trajectory x-range [{x[0]:.2f}, {x[-1]:.2f}] does not match profile [0, {profile.total_length:.2f}]")
    keep = x <= profile.total_length
    x = x[keep]
    clear = h_ref + traj.states[keep, 4] - profile.wire_height(x)
    dx = np.diff(x)
    mid = 0.5 * (clear[1:] + clear[:-1])
    under = np.abs(mid) < threshold
    length_under = float(np.sum(dx[under]))
    length_over = float(np.sum(dx[~under]))

    xm = 0.5 * (x[1:] + x[:-1])
    span_idx = np.clip(np.searchsorted(profile.tower_positions, xm, side="right") - 1, 0, len(profile.spans) - 1)
    frac, mins = [], []
    for i in range(len(profile.spans)):
        m = span_idx == i
        if not np.any(m):
            continue
        frac.append(float(np.sum(dx[m & under]) / np.sum(dx[m])))
        mins.append(float(np.min(np.abs(mid[m]))))
    return TrackingMetrics(
        x=x, clearance=clear, length_under=length_under, length_over=length_over, threshold=threshold,
        min_clearance=float(clear.min()), max_clearance=float(clear.max()),
        span_fraction_under=tuple(frac), span_min_abs_clearance=tuple(mins),
        velocity_deviation=traj.states[keep, 0], saturation_count=saturation_count,
    )


class VelocityDeviation(NamedTuple):
    series: np.ndarray
    max_abs: float
    rms: float


def velocity_deviation(traj: Trajectory) -> VelocityDeviation:
    u = traj.component("u")
    if u.size == 0:
        raise DomainError("empty trajectory")
    return VelocityDeviation(u, float(np.max(np.abs(u))), float(np.sqrt(np.mean(u * u))))


def phugoid_wavelength(derivs: StabilityDerivatives, sigma, u0, zu_sigma=None, g=G):
    """Distance flown per radian of Phugoid phase, ``u0 / omega_t``."""
    omega = phugoid_frequency(derivs, sigma, zu_sigma=zu_sigma, g=g)
    if omega <= 0:
        raise DomainError("Phugoid frequency is zero")
    return u0 / omega


def wavelength_surface(cal, wingspans, chords, sigma_max=0.14):
    """``(b, c, sigma, lambda)`` rows over the grid for sigma in {-max, 0, +max}."""
    from .aero import synthetic_plant

    rows = []
    for b in wingspans:
        for c in chords:
            plant, _, geom = synthetic_plant(cal, wingspan=b, chord=c)
            for s in (-sigma_max, 0.0, sigma_max):
                lam = phugoid_wavelength(plant.derivs, s, geom.u0, zu_sigma=plant.zu_sigma, g=plant.g)
                rows.append((float(b), float(c), float(s), lam))
    return rows


def phugoid_seed(plant: Plant, profile: PowerlineProfile, g=G):
    """Initial state at the top of a Phugoid whose height swing spans the first sag.

    Energy exchange ``u0 du = g dh`` with ``dh = sag / 2`` gives the airspeed
    deficit at the tower crossing.
    """
    du = -g * profile.spans[0].sag_depth / (2.0 * plant.u0)
    return (du, 0.0, 0.0, 0.0, 0.0)
