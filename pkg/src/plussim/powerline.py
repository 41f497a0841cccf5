"""Powerline geometry: catenary spans, multi-span profiles, voltage classes.

Coordinates
-----------
``x`` inside a span is measured from the upstream tower, ``0 <= x <= L``.
The raw catenary ordinate ``a*cosh((x - L/2)/a)`` is minimal (= a) at
midspan. Ground-referenced wire height puts both attachment points at the
tower height ``H`` with the sag hanging below::

    h_wire(x) = H - sag_depth + (y_raw(x) - a)
"""

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, SolverError

MU0 = 4.0e-7 * math.pi


def _sag_depth(a, L):
    # a*(cosh(z) - 1) written as 2a*sinh(z/2)^2 to keep precision for large a
    return 2.0 * a * np.sinh(L / (4.0 * a)) ** 2


@dataclass(frozen=True)
class CatenarySpec:
    """One powerline span.

    a : catenary parameter T0/(rho g A) [m]
    span_length : tower-to-tower distance L [m]
    tower_height : attachment height H above ground [m]
    sag_fraction : sag depth / span length
    """

    a: float
    span_length: float
    tower_height: float = 30.0
    sag_fraction: Optional[float] = None

    def __post_init__(self):
        if not (self.a > 0 and self.span_length > 0):
            raise DomainError(f"catenary needs a > 0 and L > 0, got a={self.a}, L={self.span_length}")
        depth = float(_sag_depth(self.a, self.span_length))
        if self.sag_fraction is None:
            object.__setattr__(self, "sag_fraction", depth / self.span_length)
        if not self.tower_height > depth:
            raise DomainError(
                f"tower height {self.tower_height} m does not clear sag depth {depth:.3f} m"
            )

    @property
    def sag_depth(self) -> float:
        return float(_sag_depth(self.a, self.span_length))

    def _check(self, x):
        if isinstance(x, float):
            if not 0.0 <= x <= self.span_length:
                raise DomainError(f"x outside [0, {self.span_length}]")
            return x
        x = np.asarray(x, dtype=float)
        if np.any(x < 0.0) or np.any(x > self.span_length):
            raise DomainError(f"x outside [0, {self.span_length}]")
        return x

    def raw_ordinate(self, x):
        x = self._check(x)
        return self.a * np.cosh((x - 0.5 * self.span_length) / self.a)

    def height(self, x):
        """Ground-referenced wire height at span-local ``x``."""
        x = self._check(x)
        z = (x - 0.5 * self.span_length) / self.a
        # y_raw - a == 2a sinh^2(z/2)
        return self.tower_height - self.sag_depth + 2.0 * self.a * np.sinh(0.5 * z) ** 2

    def curvature_radius(self, x):
        x = self._check(x)
        return self.a * np.cosh((x - 0.5 * self.span_length) / self.a) ** 2

    def spatial_frequency(self, x):
        """x / y(x); zero at the upstream tower by continuity convention."""
        x = self._check(x)
        return x / self.raw_ordinate(x)


def catenary_height(spec: CatenarySpec, x):
    return spec.height(x)


def catenary_raw_ordinate(spec: CatenarySpec, x):
    return spec.raw_ordinate(x)


def catenary_curvature_radius(spec: CatenarySpec, x):
    return spec.curvature_radius(x)


def local_spatial_frequency(spec: CatenarySpec, x):
    return spec.spatial_frequency(x)


def solve_catenary_from_sag(span_length, sag_fraction, tower_height=30.0, max_iter=100):
    """Catenary parameter giving ``sag_depth = sag_fraction * span_length``.

    Starts from the parabolic estimate ``a0 = L / (8 s)`` and refines with
    Newton iterations on ``a*(cosh(L/2a) - 1) - s*L``.
    """
    L = float(span_length)
    s = float(sag_fraction)
    if not L > 0:
        raise DomainError(f"span length must be positive, got {L}")
    if not 0.0 < s < 0.5:
        raise DomainError(f"sag fraction must lie in (0, 0.5), got {s}")

    target = s * L
    a = L / (8.0 * s)
    for _ in range(max_iter):
        z = L / (2.0 * a)
        f = _sag_depth(a, L) - target
        # d/da [a (cosh z - 1)] = cosh z - 1 - z sinh z
        df = 2.0 * math.sinh(0.5 * z) ** 2 - z * math.sinh(z)
        step = f / df
        a_next = a - step
        if a_next <= 0:
            a_next = 0.5 * a
        if abs(a_next - a) <= 1e-15 * a:
            a = a_next
            break
        a = a_next
    else:
        raise SolverError(f"sag solve did not converge for L={L}, sag={s}")
    if abs(_sag_depth(a, L) - target) > 1e-9 * L:
        raise SolverError(f"sag solve residual too large for L={L}, sag={s}")
    return CatenarySpec(a=a, span_length=L, tower_height=tower_height, sag_fraction=s)


def wire_magnetic_field(current, distance):
    """Field of a long straight wire, B = mu0 I / (2 pi R), in tesla."""
    if distance <= 0:
        raise DomainError(f"distance must be positive, got {distance}")
    if current < 0:
        raise DomainError(f"current must be non-negative, got {current}")
    return MU0 * current / (2.0 * math.pi * distance)


@dataclass(frozen=True)
class PowerlineClass:
    label: str
    name: str
    voltage_kv: tuple  # (lo, hi); hi None means open-ended
    height_m: tuple
    spacing_m: tuple


POWERLINE_CLASSES = {
    "LV": PowerlineClass("LV", "Low voltage", (0.0, 1.0), (10.0, 15.0), (30.0, 50.0)),
    "MV": PowerlineClass("MV", "Medium voltage", (1.0, 69.0), (15.0, 30.0), (50.0, 150.0)),
    "HV": PowerlineClass("HV", "High voltage", (69.0, 230.0), (30.0, 50.0), (150.0, 400.0)),
    "EHV": PowerlineClass("EHV", "Extra high voltage", (230.0, 500.0), (50.0, 80.0), (300.0, 500.0)),
    "UHV": PowerlineClass("UHV", "Ultra high voltage", (800.0, None), (80.0, None), (500.0, None)),
}


def class_lookup(label) -> PowerlineClass:
    try:
        return POWERLINE_CLASSES[str(label).upper()]
    except KeyError:
        raise KeyError(f"unknown powerline class {label!r}; expected one of {sorted(POWERLINE_CLASSES)}") from None


def classes_csv() -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "name", "voltage_kv_min", "voltage_kv_max", "height_m_min",
                "height_m_max", "spacing_m_min", "spacing_m_max"])
    fmt = lambda v: "" if v is None else f"{v:g}"
    for c in POWERLINE_CLASSES.values():
        w.writerow([c.label, c.name, *map(fmt, c.voltage_kv), *map(fmt, c.height_m), *map(fmt, c.spacing_m)])
    return buf.getvalue()


@dataclass(frozen=True)
class PowerlineProfile:
    """Consecutive spans sharing towers; tower 0 sits at global x = 0."""

    spans: tuple
    tower_positions: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        spans = tuple(self.spans)
        if not spans:
            raise DomainError("profile needs at least one span")
        for i in range(1, len(spans)):
            if spans[i].tower_height != spans[i - 1].tower_height:
                raise DomainError(
                    f"spans {i - 1} and {i} disagree on the shared tower height "
                    f"({spans[i - 1].tower_height} vs {spans[i].tower_height})"
                )
        object.__setattr__(self, "spans", spans)
        pos = np.concatenate([[0.0], np.cumsum([s.span_length for s in spans])])
        pos.setflags(write=False)
        object.__setattr__(self, "tower_positions", pos)

    @classmethod
    def uniform(cls, n_spans, span_length, sag_fraction, tower_height=30.0):
        spec = solve_catenary_from_sag(span_length, sag_fraction, tower_height)
        return cls(tuple([spec] * int(n_spans)))

    @classmethod
    def from_records(cls, records: Sequence[dict]):
        """Build from ``[{span_length, tower_height, sag_fraction | a}, ...]``."""
        spans = []
        for i, r in enumerate(records):
            L = float(r["span_length"])
            H = float(r.get("tower_height", 30.0))
            if r.get("a") is not None:
                spans.append(CatenarySpec(a=float(r["a"]), span_length=L, tower_height=H))
            elif "sag_fraction" in r:
                spans.append(solve_catenary_from_sag(L, float(r["sag_fraction"]), H))
            else:
                raise DomainError(f"span {i}: need either 'a' or 'sag_fraction'")
        return cls(tuple(spans))

    @property
    def total_length(self) -> float:
        return float(self.tower_positions[-1])

    @property
    def tower_height(self) -> float:
        return self.spans[0].tower_height

    def locate(self, x):
        """Span index and span-local coordinate for a global position."""
        x = float(x)
        if x < 0 or x > self.total_length:
            raise DomainError(f"x={x} outside profile [0, {self.total_length}]")
        i = int(np.searchsorted(self.tower_positions, x, side="right")) - 1
        i = min(i, len(self.spans) - 1)
        return i, min(x - self.tower_positions[i], self.spans[i].span_length)

    def wire_height(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any(x < 0) or np.any(x > self.total_length):
            raise DomainError(f"x outside profile [0, {self.total_length}]")
        idx = np.clip(np.searchsorted(self.tower_positions, x, side="right") - 1, 0, len(self.spans) - 1)
        out = np.empty_like(x)
        for i in np.unique(idx):
            m = idx == i
            span = self.spans[i]
            local = np.clip(x[m] - self.tower_positions[i], 0.0, span.span_length)
            out[m] = span.height(local)
        return out
