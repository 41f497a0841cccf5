"""Batch exploration over wingspan, chord, pylon span and sag.

Each (wingspan, chord, pylon span, sag) cell builds the synthetic plant for
that geometry, the frequency-matching schedule for that powerline, and then
runs ``trials_per_cell`` simulations that differ only in a seeded jitter of
the initial airspeed and altitude offsets. Cells are independent jobs.
"""

import csv
import io
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import least_squares

from . import simulator as sim
from .aero import AeroCoefficients, load_defaults, synthetic_plant
from .controller import MatchingContext, MorphSchedule, SpanSchedule, build_schedule
from .errors import DomainError
from .powerline import PowerlineProfile

CSV_HEADER = ("span_m", "chord_m", "pylon_span_m", "sag_pct", "trial",
              "delta_CL_m", "clearance_frac", "lambda_ph_m", "saturated_samples")


@dataclass(frozen=True)
class SweepGrid:
    wingspans: tuple = (1.0, 1.4, 1.8)
    chords: tuple = (0.203, 0.254, 0.305)
    pylon_spans: tuple = (40.0, 100.0, 300.0, 500.0)
    sag_fractions: tuple = (0.01, 0.02, 0.03, 0.04, 0.05)
    trials_per_cell: int = 25

    def __post_init__(self):
        for name in ("wingspans", "chords", "pylon_spans", "sag_fractions"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals:
                raise DomainError(f"{name} must not be empty")
            if any(not v > 0 for v in vals):
                raise DomainError(f"{name} must be positive")
            object.__setattr__(self, name, vals)
        if int(self.trials_per_cell) < 1:
            raise DomainError("trials_per_cell must be >= 1")
        object.__setattr__(self, "trials_per_cell", int(self.trials_per_cell))

    def cells(self):
        """Cell keys ``(b, c, L, sag)`` in canonical order."""
        return [(b, c, L, s) for b in self.wingspans for c in self.chords
                for L in self.pylon_spans for s in self.sag_fractions]

    @property
    def n_rows(self):
        return len(self.cells()) * self.trials_per_cell


@dataclass(frozen=True)
class SweepSettings:
    n_spans: int = 1
    dt: float = 0.01
    dx: float = 0.5
    sigma_lo: float = -0.14
    sigma_hi: float = 0.14
    jitter_speed_fraction: float = 0.05
    jitter_height: float = 0.5
    tower_height: float = 30.0
    divergence_bound: float = 1e3


@dataclass(frozen=True)
class SweepResult:
    cell: tuple  # (wingspan, chord, pylon span, sag fraction)
    delta_CL: tuple
    clearance_frac: tuple
    lambda_ph: float
    saturated_samples: int
    errors: tuple = ()  # (trial, message) for runs that failed

    @property
    def max_abs_delta_CL(self):
        v = np.abs(np.array(self.delta_CL, dtype=float))
        return float(np.nanmax(v)) if np.any(np.isfinite(v)) else math.nan

    @property
    def mean_delta_CL(self):
        v = np.array(self.delta_CL, dtype=float)
        return float(np.nanmean(v)) if np.any(np.isfinite(v)) else math.nan

    def rows(self):
        b, c, L, s = self.cell
        for k, (d, f) in enumerate(zip(self.delta_CL, self.clearance_frac)):
            yield (b, c, L, sag_pct(s), k, d, f, self.lambda_ph, self.saturated_samples)


def sag_pct(fraction):
    return round(100.0 * fraction, 10)


def delta_CL_max(sigma_trace, alpha_trace, coeffs: AeroCoefficients, alpha0):
    """Lift change between trim and the instant of largest morphing command.

    ``t_m`` is the first sample where sigma attains its maximum.
    """
    s = np.asarray(sigma_trace, dtype=float)
    a = np.asarray(alpha_trace, dtype=float)
    if s.size == 0:
        raise DomainError("empty sigma trace")
    if a.shape != s.shape:
        raise DomainError("sigma and alpha traces must be aligned")
    m = int(np.argmax(s))
    return float(coeffs.lift(a[m], 0.0, s[m]) - coeffs.lift(alpha0, 0.0, 0.0))


def trial_jitter(seed, cell_index, trial, u0, settings: SweepSettings):
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(cell_index), int(trial)]))
    du = rng.uniform(-1.0, 1.0) * settings.jitter_speed_fraction * u0
    dh = rng.uniform(-1.0, 1.0) * settings.jitter_height
    return du, dh


def run_cell(cell, cell_index, trials, seed=0, settings: SweepSettings = SweepSettings(), cal=None):
    """All trials of one cell. Failures are recorded, not raised."""
    b, c, L, s = cell
    cal = cal if cal is not None else load_defaults()["aero"]
    plant, coeffs, geom = synthetic_plant(cal, wingspan=b, chord=c)
    lam = sim.phugoid_wavelength(plant.derivs, 0.0, plant.u0, zu_sigma=plant.zu_sigma, g=plant.g)
    profile = PowerlineProfile.uniform(settings.n_spans, L, s, settings.tower_height)
    ctx = MatchingContext(plant.derivs, plant.u0, profile.spans[0], settings.sigma_lo, settings.sigma_hi,
                          zu_sigma=plant.zu_sigma, g=plant.g)
    schedule = build_schedule(ctx, profile, settings.dx)
    seed_u = sim.phugoid_seed(plant, profile, g=plant.g)[0]

    dcl, frac, errors = [], [], []
    for k in range(trials):
        du, dh = trial_jitter(seed, cell_index, k, plant.u0, settings)
        cfg = sim.SimConfig(dt=settings.dt, initial_state=(seed_u + du, 0.0, 0.0, 0.0, dh),
                            divergence_bound=settings.divergence_bound)
        try:
            tr = sim.integrate(plant, schedule, cfg)
            alpha = geom.alpha0 + tr.component("w") / plant.u0
            dcl.append(delta_CL_max(tr.sigma_achieved, alpha, coeffs, geom.alpha0))
            frac.append(sim.clearance_metrics(tr, profile).fraction_under)
        except Exception as exc:  # one bad run must not sink the cell
            dcl.append(math.nan)
            frac.append(math.nan)
            errors.append((k, f"{type(exc).__name__}: {exc}"))
    return SweepResult(tuple(float(v) for v in cell), tuple(dcl), tuple(frac), float(lam),
                       schedule.saturation_count, tuple(errors))


def _cell_job(args):
    return args[1], run_cell(*args)


def results_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in results:
        for row in r.rows():
            w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def read_results_csv(path, trials_per_cell):
    """Complete cells from a (possibly partial) results file, keyed by cell."""
    path = Path(path)
    if not path.exists():
        return {}
    rows = list(csv.reader(io.StringIO(path.read_text())))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise DomainError(f"{path}: line 1: unexpected header for a sweep results file")
    groups = {}
    for r in rows[1:]:
        if len(r) != len(CSV_HEADER):
            continue  # torn final line of an interrupted write
        b, c, L, sp = (float(v) for v in r[:4])
        groups.setdefault((b, c, L, sp), []).append(r)
    done = {}
    for key, rs in groups.items():
        if len(rs) != trials_per_cell:
            continue
        rs.sort(key=lambda r: int(r[4]))
        if [int(r[4]) for r in rs] != list(range(trials_per_cell)):
            continue
        done[key] = SweepResult((key[0], key[1], key[2], key[3] / 100.0),
                                tuple(float(r[5]) for r in rs), tuple(float(r[6]) for r in rs),
                                float(rs[0][7]), int(rs[0][8]))
    return done


def run_sweep(grid: SweepGrid, settings: SweepSettings = SweepSettings(), seed=0, jobs=1, cal=None,
              out_path=None, resume=False, progress=None):
    """Run every (cell, trial) and return results sorted by cell key.

    With ``out_path`` rows are appended as cells finish, and the file is
    rewritten in sorted order at the end. ``resume`` keeps complete cells
    already present in ``out_path``.
    """
    cells = grid.cells()
    results = {}
    if resume and out_path is not None:
        done = read_results_csv(out_path, grid.trials_per_cell)
        for i, cell in enumerate(cells):
            key = (cell[0], cell[1], cell[2], sag_pct(cell[3]))
            if key in done:
                results[i] = replace(done[key], cell=cell)
    todo = [(cell, i, grid.trials_per_cell, seed, settings, cal) for i, cell in enumerate(cells) if i not in results]

    sink = None
    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        if not (resume and out_path.exists()):
            out_path.write_text(",".join(CSV_HEADER) + "\n")
        sink = out_path.open("a")
    report = progress if progress is not None else (lambda n, tot: None)
    total = len(cells)

    def record(i, res):
        results[i] = res
        if sink is not None:
            sink.write(results_csv([res]).split("\n", 1)[1])
            sink.flush()
        report(len(results), total)

    try:
        if jobs <= 1 or len(todo) <= 1:
            for args in todo:
                record(*_cell_job(args))
        else:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                futures = [pool.submit(_cell_job, args) for args in todo]
                for fut in as_completed(futures):
                    record(*fut.result())
    finally:
        if sink is not None:
            sink.close()

    ordered = [results[i] for i in range(len(cells))]
    if out_path is not None:
        out_path.write_text(results_csv(ordered))
    return ordered


def stderr_progress(done, total):
    print(f"sweep: {done}/{total} cells", file=sys.stderr, flush=True)


# --------------------------------------------------------------------------
# least-squares trend search

@dataclass(frozen=True)
class TrendResult:
    knots: np.ndarray  # (n_spans, knots_per_span)
    schedule: MorphSchedule
    residual: float  # sum of squared altitude errors
    initial_residual: float
    converged: bool
    nfev: int


def knot_schedule(knots, profile: PowerlineProfile, sigma_lo, sigma_hi):
    """Piecewise-constant schedule with equal-length knots per span."""
    knots = np.atleast_2d(np.asarray(knots, dtype=float))
    if knots.shape[0] != len(profile.spans):
        raise DomainError("need one knot row per span")
    n = knots.shape[1]
    spans = []
    for i, spec in enumerate(profile.spans):
        xs = spec.span_length * np.arange(n) / n
        spans.append(SpanSchedule(i, float(profile.tower_positions[i]), spec.span_length, xs,
                                  knots[i].copy(), np.zeros(n, dtype=bool)))
    return MorphSchedule(tuple(spans), profile.spans[0].span_length / n, sigma_lo, sigma_hi)


def _knots_from_schedule(schedule: MorphSchedule, profile, n):
    out = np.zeros((len(profile.spans), n))
    for i, spec in enumerate(profile.spans):
        edges = spec.span_length * np.arange(n + 1) / n
        for j in range(n):
            xs = np.linspace(edges[j], edges[j + 1], 9)[:-1]
            out[i, j] = np.mean([schedule.command(i, x) for x in xs])
    return out


def trend_search(profile: PowerlineProfile, plant, initial: MorphSchedule, cfg: sim.SimConfig,
                 knots_per_span=20, horizon=None, s_ref=None, h_ref=None, eval_dx=1.0, max_nfev=30):
    """Least-squares fit of a knot schedule to a reference altitude path.

    ``s_ref(x)`` defaults to the wire height; the aircraft altitude is
    ``h_ref + h``. Errors are sampled every ``eval_dx`` metres of track up to
    ``horizon`` (default: the whole profile). The optimiser starts from
    ``initial`` (typically the frequency-matching schedule) and never returns
    a worse residual than that start.
    """
    horizon = profile.total_length if horizon is None else float(horizon)
    if not horizon > 0:
        raise DomainError("trend search horizon must be positive")
    if knots_per_span < 1:
        raise DomainError("knots_per_span must be >= 1")
    h_ref = profile.tower_height if h_ref is None else h_ref
    s_ref = profile.wire_height if s_ref is None else s_ref
    lo, hi = initial.sigma_lo, initial.sigma_hi
    n_sp = len(profile.spans)
    x_eval = np.arange(eval_dx, horizon + 1e-9, eval_dx)
    if x_eval.size == 0:
        x_eval = np.array([horizon])
    target = np.asarray(s_ref(x_eval), dtype=float)
    cfg = replace(cfg, actuator_mode="ideal", horizon=None)

    def residual(p):
        sched = knot_schedule(p.reshape(n_sp, knots_per_span), profile, lo, hi)
        try:
            tr = sim.integrate(plant, sched, cfg, stop_x=horizon)
        except Exception:
            return np.full(x_eval.size, 1e3)
        return h_ref + np.interp(x_eval, tr.x, tr.states[:, 4]) - target

    p0 = np.clip(_knots_from_schedule(initial, profile, knots_per_span).ravel(), lo, hi)
    r0 = residual(p0)
    c0 = float(r0 @ r0)
    sol = least_squares(residual, p0, bounds=(np.full(p0.size, lo), np.full(p0.size, hi)),
                        diff_step=1e-4, max_nfev=max_nfev, x_scale=hi - lo)
    c1 = float(sol.fun @ sol.fun)
    p, cost = (sol.x, c1) if c1 <= c0 else (p0, c0)
    knots = p.reshape(n_sp, knots_per_span)
    return TrendResult(knots, knot_schedule(knots, profile, lo, hi), cost, c0, bool(sol.status > 0), int(sol.nfev))


# --------------------------------------------------------------------------
# aggregation

@dataclass(frozen=True)
class TrendTable:
    pylon_span: float
    sag_pcts: tuple
    rows: tuple  # (wingspan, chord, wing_area, {sag_pct: max |dCL|})
    area_trend: str  # "decreasing", "increasing" or "mixed"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["span_m", "chord_m", "wing_area_m2"] + [f"sag_{p:g}pct" for p in self.sag_pcts])
        for b, c, area, vals in self.rows:
            w.writerow([repr(b), repr(c), repr(area)] + [repr(vals.get(p, math.nan)) for p in self.sag_pcts])
        return buf.getvalue()


def aggregate_trends(results):
    """Per-pylon-span tables of max |dCL_m| against (wingspan, chord, sag).

    ``area_trend`` describes how the cell-averaged max |dCL_m| moves as wing
    area grows.
    """
    if not results:
        raise DomainError("no results to aggregate")
    by_span = {}
    for r in results:
        by_span.setdefault(r.cell[2], []).append(r)
    tables = {}
    for L, rs in sorted(by_span.items()):
        sags = tuple(sorted({sag_pct(r.cell[3]) for r in rs}))
        geo = {}
        for r in rs:
            b, c = r.cell[0], r.cell[1]
            geo.setdefault((b, c), {})[sag_pct(r.cell[3])] = r.max_abs_delta_CL
        rows = tuple((b, c, b * c, vals) for (b, c), vals in sorted(geo.items()))
        by_area = {}
        for _, _, area, vals in rows:
            by_area.setdefault(area, []).extend(v for v in vals.values() if np.isfinite(v))
        areas = sorted(a for a in by_area if by_area[a])
        means = np.array([np.mean(by_area[a]) for a in areas])
        d = np.diff(means)
        if d.size and np.all(d < 0):
            trend = "decreasing"
        elif d.size and np.all(d > 0):
            trend = "increasing"
        else:
            trend = "mixed"
        tables[L] = TrendTable(L, sags, rows, trend)
    return tables
