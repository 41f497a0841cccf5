"""Time-domain identification of the morphing servo from multistep records.

Three structures are fitted by simulation-error least squares:

* ``first_order``         K / (tau s + 1)
* ``second_order``        K wn^2 / (s^2 + 2 zeta wn s + wn^2)
* ``second_order_delay``  the same with a transport delay ``exp(-Td s)``

Model responses are computed by exact zero-order-hold discretisation at the
record's sample rate. A delay that is not a whole number of samples is
handled by splitting the held input over the sample interval, so the delay
is continuous rather than quantised. Records are assumed to start at rest
with zero command history.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import lfilter, ss2tf

from . import actuator as act
from .errors import DomainError

STRUCTURES = ("first_order", "second_order", "second_order_delay")
DEFAULT_RATE = 120.0
MAX_DELAY = 0.5
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ResponseRecord:
    t: np.ndarray
    command: np.ndarray
    output: np.ndarray
    rate: float = DEFAULT_RATE

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        c = np.asarray(self.command, dtype=float)
        y = np.asarray(self.output, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise DomainError("a response record needs at least two samples")
        if c.shape != t.shape or y.shape != t.shape:
            raise DomainError("t, command and output must have the same length")
        if not np.all(np.diff(t) > 0):
            raise DomainError("record time must be strictly increasing")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(y))):
            raise DomainError("record contains non-finite values")
        if not self.rate > 0:
            raise DomainError("sample rate must be positive")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "command", c)
        object.__setattr__(self, "output", y)

    @property
    def dt(self):
        return 1.0 / self.rate

    @property
    def duration(self):
        return self.t.size / self.rate

    def to_csv(self) -> str:
        return act.step_response_csv(self.t, self.command, self.output)

    @classmethod
    def from_csv(cls, source, rate=None):
        text = Path(source).read_text() if isinstance(source, Path) or (
            isinstance(source, str) and "\n" not in source) else str(source)
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [h.strip() for h in rows[0]] != ["t", "command", "output"]:
            raise DomainError("line 1: expected header t,command,output")
        data = []
        for i, r in enumerate(rows[1:], start=2):
            if not r:
                continue
            try:
                data.append([float(v) for v in r])
            except ValueError:
                raise DomainError(f"line {i}: could not parse {r!r}") from None
            if len(r) != 3:
                raise DomainError(f"line {i}: expected 3 columns, got {len(r)}")
        arr = np.array(data, dtype=float)
        if arr.shape[0] < 2:
            raise DomainError("a response record needs at least two samples")
        if rate is None:
            rate = 1.0 / float(np.median(np.diff(arr[:, 0])))
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], rate)


@dataclass(frozen=True)
class FitReport:
    structure: str
    params: dict
    accuracy: float
    cost: float
    n_starts: int
    converged: bool = True
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = {"structure": self.structure, "accuracy_pct": self.accuracy, "cost": self.cost,
             "n_starts": self.n_starts, "converged": self.converged, **self.params}
        if "natural_frequency" in self.params:
            d["natural_frequency_hz"] = self.params["natural_frequency"] / (2 * math.pi)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def generate_multistep(amplitude_deg=3.0, steps=6, dwell=2.0, model=None, noise_std=0.0,
                       rate=DEFAULT_RATE, seed=0) -> ResponseRecord:
    """Servo response to a multistep command alternating +A, -A, +A, ...

    The record holds ``steps * dwell * rate`` samples.
    """
    if steps < 1:
        raise DomainError("steps must be >= 1")
    if not dwell > 0:
        raise DomainError("dwell must be positive")
    model = model or act.default_servo()
    per = int(round(dwell * rate))
    levels = amplitude_deg * np.where(np.arange(steps) % 2 == 0, 1.0, -1.0)
    command = np.repeat(levels, per)
    dt = 1.0 / rate
    y = act.simulate(model, command, dt)
    if noise_std > 0:
        y = y + np.random.default_rng(seed).normal(0.0, noise_std, y.size)
    t = dt * np.arange(command.size)
    return ResponseRecord(t, command, y, rate)


def accuracy(y, y_hat):
    """Normalised fit percentage ``100 (1 - |y - y_hat| / |y - mean(y)|)``."""
    y = np.asarray(y, dtype=float)
    denom = np.linalg.norm(y - y.mean())
    if denom == 0:
        raise DomainError("output is constant; fit accuracy undefined")
    return 100.0 * (1.0 - np.linalg.norm(y - np.asarray(y_hat, dtype=float)) / denom)


def _state_space(structure, p):
    if structure == "first_order":
        K, tau = p[0], p[1]
        return np.array([[-1.0 / tau]]), np.array([K / tau]), np.array([[1.0]])
    K, zeta, wn = p[0], p[1], p[2]
    A = np.array([[0.0, 1.0], [-wn * wn, -2.0 * zeta * wn]])
    return A, np.array([0.0, K * wn * wn]), np.array([[1.0, 0.0]])


def model_response(structure, params, command, dt, delay=0.0):
    """Sampled response of a fitted structure to a held command sequence."""
    A, B, C = _state_space(structure, params)
    u = np.asarray(command, dtype=float)
    m = int(math.floor(delay / dt + 1e-9))
    frac = max(delay - m * dt, 0.0)
    # over one interval the previous held sample acts for `frac`, the current one for the rest
    e_late, gamma_late = act.zoh_discretize(A, B, dt - frac)
    if frac > 0:
        gamma_early = e_late @ act.zoh_discretize(A, B, frac)[1]
    else:
        gamma_early = np.zeros_like(gamma_late)
    phi_full = act.zoh_discretize(A, B, dt)[0]
    # x[k+1] = Phi x[k] + gamma_early u[k-m-1] + gamma_late u[k-m];  y[k] = C x[k]
    num_l, den = ss2tf(phi_full, gamma_late.reshape(-1, 1), C, np.zeros((1, 1)))
    num_e, _ = ss2tf(phi_full, gamma_early.reshape(-1, 1), C, np.zeros((1, 1)))
    num = np.concatenate([num_l[0], [0.0]]) + np.concatenate([[0.0], num_e[0]])
    den = np.concatenate([den, [0.0]])
    if m > 0:
        u = np.concatenate([np.zeros(min(m, u.size)), u[:max(u.size - m, 0)]])
    return lfilter(num, den, u)


def _bounds(structure, gain_scale):
    g = 100.0 * gain_scale
    if structure == "first_order":
        return np.array([-g, 1e-4]), np.array([g, 100.0])
    return np.array([-g, 1e-3, 1e-2]), np.array([g, 50.0, 500.0])


def _starts(structure, record, n_starts, rng, warm=()):
    u, y = record.command, record.output
    k0 = float(np.dot(u, y) / np.dot(u, u)) if np.dot(u, u) > 0 else 1.0
    if k0 == 0:
        k0 = 1.0
    starts = [np.array(w, dtype=float) for w in warm]
    if structure == "first_order":
        starts.append(np.array([k0, 0.2]))
    else:
        starts.append(np.array([k0, 0.7, 2 * math.pi]))
    while len(starts) < n_starts + len(warm):
        kk = k0 * rng.uniform(0.7, 1.3)
        if structure == "first_order":
            starts.append(np.array([kk, math.exp(rng.uniform(math.log(0.01), math.log(5.0)))]))
        else:
            starts.append(np.array([kk, math.exp(rng.uniform(math.log(0.1), math.log(2.0))),
                                    math.exp(rng.uniform(math.log(0.5), math.log(50.0)))]))
    return starts


def _fit_fixed_delay(structure, record, delay, starts):
    base = "first_order" if structure == "first_order" else "second_order"
    u, y, dt = record.command, record.output, record.dt
    scale = max(np.max(np.abs(y - y.mean())), 1e-300)
    lo, hi = _bounds(base, max(abs(float(s[0])) for s in starts))

    def resid(p):
        return (model_response(base, p, u, dt, delay) - y) / scale

    best = None
    for s in starts:
        s = np.clip(s, lo + 1e-12 * (hi - lo), hi - 1e-12 * (hi - lo))
        try:
            r = least_squares(resid, s, bounds=(lo, hi), x_scale="jac", max_nfev=400)
        except (ValueError, np.linalg.LinAlgError):
            continue
        if not np.isfinite(r.cost):
            continue
        if best is None or r.cost < best.cost:
            best = r
    if best is None:
        raise DomainError(f"{structure}: no start produced a finite fit")
    return best


def _golden(f, a, b, tol):
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc < fd else (d, fd)


def fit(record: ResponseRecord, structure: str, n_starts=8, seed=0, max_delay=MAX_DELAY) -> FitReport:
    """Best-of-multistart simulation-error fit of ``structure`` to ``record``."""
    if structure not in STRUCTURES:
        raise ValueError(f"unknown structure {structure!r}; expected one of {STRUCTURES}")
    y = record.output
    if np.ptp(y) == 0:
        raise DomainError("output is constant; nothing to identify")
    rng = np.random.default_rng(seed)
    dt = record.dt

    if structure == "first_order":
        best = _fit_fixed_delay(structure, record, 0.0, _starts(structure, record, n_starts, rng))
        K, tau = best.x
        params = {"gain": float(K), "time_constant": float(tau), "delay": 0.0}
        delay = 0.0
    else:
        # the first-order optimum embedded as a heavily damped second-order start
        first = _fit_fixed_delay("first_order", record, 0.0,
                                 _starts("first_order", record, n_starts, np.random.default_rng(seed)))
        zeta_hi = 50.0
        embed = [first.x[0], zeta_hi * 0.999, 2 * zeta_hi * 0.999 / first.x[1]]
        starts = _starts("second_order", record, n_starts, rng, warm=[embed])
        best = _fit_fixed_delay("second_order", record, 0.0, starts)
        delay = 0.0
        if structure == "second_order_delay":
            max_delay = min(max_delay, record.duration / 2)
            warm = [best.x]
            cache = {}

            def cost_at(d):
                d = min(max(d, 0.0), max_delay)
                if d not in cache:
                    cache[d] = _fit_fixed_delay("second_order", record, d, warm)
                return cache[d].cost

            grid = dt * np.arange(0, int(max_delay / dt) + 1)
            costs = [cost_at(d) for d in grid]
            i = int(np.argmin(costs))
            d_star, _ = _golden(cost_at, grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)], 1e-6 * dt)
            d_star = min(max(d_star, 0.0), max_delay)
            # full multistart at the chosen delay, seeded with the same starts
            cand = _fit_fixed_delay("second_order", record, d_star, starts + [cache[d_star].x])
            if cand.cost <= best.cost:
                best, delay = cand, d_star
        K, zeta, wn = best.x
        params = {"gain": float(K), "damping": float(zeta), "natural_frequency": float(wn), "delay": float(delay)}

    base = "first_order" if structure == "first_order" else "second_order"
    y_hat = model_response(base, best.x, record.command, dt, delay)
    return FitReport(structure, params, float(accuracy(y, y_hat)), float(best.cost), n_starts,
                     converged=bool(best.status > 0))


def predict(report: FitReport, command, dt):
    p = report.params
    if report.structure == "first_order":
        return model_response("first_order", [p["gain"], p["time_constant"]], command, dt)
    return model_response("second_order", [p["gain"], p["damping"], p["natural_frequency"]],
                          command, dt, p.get("delay", 0.0))
