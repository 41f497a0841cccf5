"""``plussim`` command line.

Exit codes: 0 success, 2 usage or configuration error, 3 simulation
divergence. Every command writes a ``manifest.json`` into its output
directory, including on failure.
"""

import argparse
import json
import os
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DomainError, NonOscillatoryError, PolarTableError, SimulationDiverged

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 2, 3


class _Run:
    """Collects outputs and writes the run manifest."""

    def __init__(self, args, command, argv):
        self.args = args
        self.argv = list(argv)
        self.command = command
        self.out_dir = Path(args.out_dir)
        self.outputs = []
        self.config = None
        self.seed = None
        self.start = time.perf_counter()

    def path(self, name):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        p = self.out_dir / name
        if p not in self.outputs:
            self.outputs.append(p)
        return p

    def write(self, name, text):
        p = self.path(name)
        p.write_text(text)
        return p

    def manifest(self, status, exit_code, error=None):
        import matplotlib
        import scipy

        self.out_dir.mkdir(parents=True, exist_ok=True)
        m = {
            "command": self.command,
            "argv": self.argv,
            "status": status,
            "exit_code": exit_code,
            "error": error,
            "seed": self.seed,
            "config": self.config,
            "versions": {"plussim": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__,
                         "matplotlib": matplotlib.__version__},
            "outputs": [str(p) for p in self.outputs if p.exists()],
            "wall_clock_s": time.perf_counter() - self.start,
        }
        (self.out_dir / "manifest.json").write_text(json.dumps(m, indent=2, default=str))


def _jobs(args):
    if args.jobs is not None:
        return args.jobs
    env = os.environ.get("PLUS_SIM_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"PLUS_SIM_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError("PLUS_SIM_THREADS must be >= 1")
        return n
    return 1


def _load(run):
    from .config import load_config

    cfg = load_config(run.args.config)
    if run.args.seed is not None:
        cfg["seed"] = run.args.seed
    run.config = cfg
    run.seed = cfg["seed"]
    return cfg


# --------------------------------------------------------------------------
# commands

def cmd_simulate(run):
    from . import simulator as sim
    from .config import build_scenario

    cfg = _load(run)
    sc = build_scenario(cfg)
    run.write("schedule.csv", sc.schedule.to_csv())
    traj = sim.integrate(sc.plant, sc.schedule, sc.sim_config)
    metrics = sim.clearance_metrics(traj, sc.profile, sc.h_ref, saturation_count=sc.schedule.saturation_count)
    run.write("trajectory.csv", traj.to_csv(sc.profile, sc.h_ref))
    summary = metrics.summary()
    summary["phugoid_wavelength_m"] = sim.phugoid_wavelength(sc.plant.derivs, 0.0, sc.plant.u0,
                                                             zu_sigma=sc.plant.zu_sigma, g=sc.plant.g)
    summary["linear_model"] = True
    summary["actuator_mode"] = sc.sim_config.actuator_mode
    # the other actuator mode, for comparison
    other = "servo" if sc.sim_config.actuator_mode == "ideal" else "ideal"
    try:
        alt = sim.integrate(sc.plant, sc.schedule, replace(sc.sim_config, actuator_mode=other))
        am = sim.clearance_metrics(alt, sc.profile, sc.h_ref)
        summary["alternate_mode"] = {"actuator_mode": other, "fraction_under": am.fraction_under,
                                     "span_fraction_under": list(am.span_fraction_under)}
    except SimulationDiverged as exc:
        summary["alternate_mode"] = {"actuator_mode": other, "error": str(exc)}
    run.write("metrics.json", json.dumps(summary, indent=2))
    if not run.args.no_figures:
        from . import plotting

        plotting.plot_tracking(traj, sc.profile, metrics, run.path("tracking.png"), sc.h_ref)
        plotting.plot_velocity(traj, run.path("velocity.png"))
    print(f"fraction under {metrics.threshold:g} m: {metrics.fraction_under:.3f} "
          f"({metrics.length_under:.1f} of {metrics.length_total:.1f} m); "
          f"per span {', '.join(f'{f:.2f}' for f in metrics.span_fraction_under)}")
    return EXIT_OK


def cmd_sweep(run):
    from . import sweep
    from .config import sweep_from_config

    cfg = _load(run)
    grid, settings = sweep_from_config(cfg)
    if run.args.trials is not None:
        grid = sweep.SweepGrid(grid.wingspans, grid.chords, grid.pylon_spans, grid.sag_fractions, run.args.trials)
    jobs = _jobs(run.args)
    out = run.path("sweep.csv")
    results = sweep.run_sweep(grid, settings, seed=cfg["seed"], jobs=jobs, cal=cfg["aero"], out_path=out,
                              resume=run.args.resume, progress=sweep.stderr_progress)
    tables = sweep.aggregate_trends(results)
    for L, tab in tables.items():
        run.write(f"trends_pylon_{L:g}m.csv", tab.to_csv())
    failures = [(r.cell, t, msg) for r in results for t, msg in r.errors]
    run.write("sweep_summary.json", json.dumps({
        "rows": sum(len(r.delta_CL) for r in results),
        "cells": len(results),
        "failed_runs": len(failures),
        "failures": [{"cell": list(c), "trial": t, "error": m} for c, t, m in failures[:100]],
        "area_trend": {f"{L:g}": tab.area_trend for L, tab in tables.items()},
        "lambda_over_pylon_span": {f"{r.cell[0]:g},{r.cell[1]:g},{r.cell[2]:g}": r.lambda_ph / r.cell[2]
                                   for r in results},
    }, indent=2))
    if not run.args.no_figures:
        from . import plotting

        plotting.plot_trends(tables, run.path("trends.png"))
    print(f"{sum(len(r.delta_CL) for r in results)} rows, {len(failures)} failed runs -> {out}")
    return EXIT_OK


def cmd_sysid(run):
    from . import sysid
    from .config import servo_from_config

    cfg = _load(run)
    sc = cfg["sysid"]
    if run.args.input:
        record = sysid.ResponseRecord.from_csv(Path(run.args.input))
    else:
        record = sysid.generate_multistep(sc["amplitude_deg"], sc["steps"], sc["dwell"], servo_from_config(cfg),
                                          sc["noise_std"], sc["rate_hz"], seed=cfg["seed"])
        run.write("response.csv", record.to_csv())
    structures = sysid.STRUCTURES if run.args.structure == "all" else (run.args.structure,)
    fits = [sysid.fit(record, s, n_starts=sc["n_starts"], seed=cfg["seed"]) for s in structures]
    run.write("fits.json", json.dumps([f.to_dict() for f in fits], indent=2))
    if not run.args.no_figures:
        from . import plotting

        preds = [sysid.predict(f, record.command, record.dt) for f in fits]
        plotting.plot_sysid(record, fits, preds, run.path("sysid.png"))
    for f in fits:
        print(f"{f.structure:20s} accuracy {f.accuracy:7.3f}%  " +
              "  ".join(f"{k}={v:.5g}" for k, v in f.params.items()))
    return EXIT_OK


def cmd_env(run):
    from . import powerline as pw

    a = run.args
    run.config = {"env": {k: v for k, v in vars(a).items() if k in ("query", "span", "sag", "tower_height",
                                                                     "current", "distance", "label")}}
    if a.query == "catenary":
        spec = pw.solve_catenary_from_sag(a.span, a.sag / 100.0, a.tower_height)
        mid = 0.5 * spec.span_length
        omega_mid = float(spec.spatial_frequency(mid))
        info = {"span_m": spec.span_length, "sag_pct": a.sag, "a_m": spec.a, "sag_depth_m": spec.sag_depth,
                "midspan_spatial_frequency": omega_mid, "tower_height_m": spec.tower_height}
        xs = np.linspace(0.0, spec.span_length, 141)
        rows = ["x,wire_height,raw_ordinate,curvature_radius,spatial_frequency"]
        for x, h, y, r, w in zip(xs, spec.height(xs), spec.raw_ordinate(xs), spec.curvature_radius(xs),
                                 spec.spatial_frequency(xs)):
            rows.append(",".join(repr(float(v)) for v in (x, h, y, r, w)))
        run.write("catenary.csv", "\n".join(rows) + "\n")
        run.write("catenary.json", json.dumps(info, indent=2))
        print(f"a = {spec.a:.6f} m")
        print(f"sag depth = {spec.sag_depth:.6f} m")
        print(f"midspan spatial frequency = {omega_mid:.6f}")
    elif a.query == "classes":
        text = pw.classes_csv()
        run.write("classes.csv", text)
        if a.label:
            c = pw.class_lookup(a.label)
            print(f"{c.label}: {c.name}, voltage {c.voltage_kv} kV, height {c.height_m} m, spacing {c.spacing_m} m")
        else:
            sys.stdout.write(text)
    else:
        b = pw.wire_magnetic_field(a.current, a.distance)
        run.write("field.json", json.dumps({"current_A": a.current, "distance_m": a.distance, "field_T": b}))
        print(f"B = {b * 1e6:.4f} uT")
    return EXIT_OK


def cmd_wavelength_map(run):
    from .simulator import wavelength_surface

    cfg = _load(run)
    smax = run.args.sigma_max if run.args.sigma_max is not None else cfg["wavelength_map"]["sigma_max"]
    rows = wavelength_surface(cfg["aero"], cfg["sweep"]["wingspans"], cfg["sweep"]["chords"], smax)
    lines = ["span_m,chord_m,sigma,lambda_ph_m"] + [",".join(repr(float(v)) for v in r) for r in rows]
    run.write("wavelength_map.csv", "\n".join(lines) + "\n")
    if not run.args.no_figures:
        from . import plotting

        plotting.plot_wavelength_map(rows, run.path("wavelength_map.png"))
    print(f"{len(rows)} rows")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "sysid": cmd_sysid, "env": cmd_env,
            "wavelength-map": cmd_wavelength_map}


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON config merged over the reference")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
    common.add_argument("--out-dir", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--jobs", type=_positive_int, default=argparse.SUPPRESS,
                        help="worker processes (fallback: PLUS_SIM_THREADS)")
    common.add_argument("--no-figures", action="store_true", default=argparse.SUPPRESS,
                        help="skip PNG figures")

    p = argparse.ArgumentParser(prog="plussim", parents=[common],
                                description="Morphing-aircraft powerline tracking simulator")
    p.add_argument("--version", action="version", version=f"plussim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common], help="one multi-span tracking run")

    sp = sub.add_parser("sweep", parents=[common], help="wingspan x chord x pylon span x sag sweep")
    sp.add_argument("--resume", action="store_true", help="keep complete cells already in sweep.csv")
    sp.add_argument("--trials", type=_positive_int, help="override trials per cell")

    sp = sub.add_parser("sysid", parents=[common], help="fit servo models to a multistep record")
    sp.add_argument("--input", help="record CSV (t,command,output); default: generate from config")
    sp.add_argument("--structure", default="all", choices=("all", "first_order", "second_order",
                                                            "second_order_delay"))

    sp = sub.add_parser("env", parents=[common], help="powerline environment queries")
    env = sp.add_subparsers(dest="query", required=True)
    q = env.add_parser("catenary", parents=[common], help="catenary for a span and sag")
    q.add_argument("--span", type=float, required=True, help="span length [m]")
    q.add_argument("--sag", type=float, required=True, help="sag [%% of span]")
    q.add_argument("--tower-height", type=float, default=30.0)
    q = env.add_parser("classes", parents=[common], help="powerline class table")
    q.add_argument("--label", help="one class label (LV, MV, HV, EHV, UHV)")
    q = env.add_parser("field", parents=[common], help="magnetic field near a conductor")
    q.add_argument("--current", type=float, required=True, help="current [A]")
    q.add_argument("--distance", type=float, required=True, help="distance [m]")

    sp = sub.add_parser("wavelength-map", parents=[common], help="Phugoid wavelength over (b, c, sigma)")
    sp.add_argument("--sigma-max", type=float)
    return p


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    for name, default in (("config", None), ("seed", None), ("out_dir", "plussim-out"), ("jobs", None),
                          ("no_figures", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    run = _Run(args, args.command, argv)
    try:
        code = COMMANDS[args.command](run)
        run.manifest("ok", code)
        return code
    except SimulationDiverged as exc:
        print(f"plussim: simulation diverged: {exc}", file=sys.stderr)
        run.manifest("diverged", EXIT_DIVERGED, str(exc))
        return EXIT_DIVERGED
    except (ConfigError, DomainError, NonOscillatoryError, PolarTableError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        print(f"plussim: error: {msg}", file=sys.stderr)
        run.manifest("error", EXIT_USAGE, str(msg))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
