"""Morphing servo: second-order lag, transport delay and slew-rate limit.

The servo works in command units (degrees of servo travel). Its internal
position has unit DC gain and is slew-limited; the reported output is
``gain * position``, so a held command ``c`` settles at ``gain * c``. The
default gain of 0.01333 per degree doubles as the degree-to-sigma
conversion (3 degrees -> 0.04 thickness).
"""

import csv
import io
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import DomainError


@dataclass(frozen=True)
class ServoModel:
    gain: float
    damping: float
    natural_frequency: float  # rad/s
    delay: float  # s
    slew_limit: float  # command units per second

    def __post_init__(self):
        if not (self.damping > 0 and self.natural_frequency > 0 and self.delay >= 0 and self.slew_limit > 0):
            raise DomainError("servo needs damping > 0, natural_frequency > 0, delay >= 0, slew_limit > 0")

    def continuous(self):
        """State-space ``(A, B)`` of the unit-gain lag on (position, velocity)."""
        wn, z = self.natural_frequency, self.damping
        return np.array([[0.0, 1.0], [-wn * wn, -2.0 * z * wn]]), np.array([0.0, wn * wn])

    def overshoot(self):
        z = self.damping
        return math.exp(-math.pi * z / math.sqrt(1 - z * z)) if z < 1 else 0.0


def default_servo(gain=0.01333, damping=0.45, natural_frequency_hz=1.0, delay=0.05,
                  slew_seconds_per_60deg=0.11) -> ServoModel:
    """Second-order-with-delay servo identified for the thickness actuator."""
    return ServoModel(
        gain=gain,
        damping=damping,
        natural_frequency=2.0 * math.pi * natural_frequency_hz,
        delay=delay,
        slew_limit=60.0 / slew_seconds_per_60deg,
    )


def zoh_discretize(A, B, dt):
    """Exact zero-order-hold ``(Phi, Gamma)`` via the augmented exponential."""
    n = A.shape[0]
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = A
    M[:n, n] = B
    E = expm(M * dt)
    return E[:n, :n], E[:n, n]


def delay_steps(delay, dt):
    return int(math.ceil(delay / dt - 1e-9)) if delay > 0 else 0


@dataclass
class ActuatorState:
    position: float = 0.0
    velocity: float = 0.0
    output: float = 0.0
    pending: deque = field(default_factory=deque)
    dt: float = None
    _phi: np.ndarray = field(default=None, repr=False)
    _gamma: np.ndarray = field(default=None, repr=False)


def initial_state(model: ServoModel, dt, command=0.0) -> ActuatorState:
    """State at rest on ``command`` with the delay line pre-filled."""
    if not dt > 0:
        raise DomainError("dt must be positive")
    if model.delay > 0 and dt > model.delay:
        raise DomainError(f"dt={dt} cannot resolve the {model.delay} s transport delay")
    phi, gamma = zoh_discretize(*model.continuous(), dt)
    n = delay_steps(model.delay, dt)
    return ActuatorState(position=command, velocity=0.0, output=model.gain * command,
                         pending=deque([command] * n), dt=dt, _phi=phi, _gamma=gamma)


def apply_slew(prev_output, proposed, dt, limit):
    if not dt > 0:
        raise DomainError("dt must be positive")
    max_step = limit * dt
    delta = proposed - prev_output
    if -max_step <= delta <= max_step:
        return proposed
    out = prev_output + math.copysign(max_step, delta)
    # rounding of the sum may overshoot by an ulp; step back so the bound holds exactly
    while abs(out - prev_output) > max_step:
        out = float(np.nextafter(out, prev_output))
    return out


def step(model: ServoModel, state: ActuatorState, command, dt=None):
    """Advance one sample; returns ``(state, output)``. ``state`` is updated in place."""
    if state.dt is None:
        raise DomainError("actuator state not initialised; use initial_state()")
    if dt is not None and dt != state.dt:
        raise DomainError(f"state was discretised for dt={state.dt}, got dt={dt}")
    dt = state.dt
    if state.pending:
        state.pending.append(command)
        u = state.pending.popleft()
    else:
        u = command
    x = state._phi @ np.array([state.position, state.velocity]) + state._gamma * u
    pos = apply_slew(state.position, x[0], dt, model.slew_limit)
    if pos != x[0]:
        vel = (pos - state.position) / dt
    else:
        vel = x[1]
    state.position, state.velocity = float(pos), float(vel)
    state.output = model.gain * state.position
    return state, state.output


def simulate(model: ServoModel, commands, dt):
    """Output trace ``y[k]`` at ``t = k dt`` for a ZOH command sequence from rest."""
    st = initial_state(model, dt)
    out = np.empty(len(commands))
    for k, c in enumerate(commands):
        out[k] = st.output
        step(model, st, c)
    return out


def step_response_csv(t, command, output) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "command", "output"])
    for row in zip(t, command, output):
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def literal_transfer_function(s):
    """``0.01333 / (s^2 - 1.838 s + 1) * (1 - exp(-0.005 s))`` taken verbatim.

    The negative damping term makes it unstable and the bracketed factor
    gives it zero DC gain, so it is kept for comparison only; the servo
    model above uses the stable second-order form with a pure delay.
    """
    s = np.asarray(s, dtype=complex)
    return 0.01333 / (s * s - 1.838 * s + 1.0) * (1.0 - np.exp(-0.005 * s))
