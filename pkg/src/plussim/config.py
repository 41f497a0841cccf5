"""Run configuration: JSON document merged over the bundled reference.

Sections mirror the modules (``powerline``, ``plant``, ``aero``,
``controller``, ``actuator``, ``simulation``, ``sweep``, ``sysid``,
``wavelength_map``). A user file only needs the keys it changes. Errors
name the offending field and, when the value came from a file, its line.
"""

import copy
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import actuator as act
from . import simulator as sim
from .aero import Plant, build_plant, geometry_from_config, ingest_polar_table, load_defaults, \
    load_reference_plant, synthetic_plant
from .controller import MatchingContext, MorphSchedule, build_schedule
from .errors import ConfigError, DomainError, PolarTableError
from .powerline import PowerlineProfile
from .sweep import SweepGrid, SweepSettings


def deep_merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


class _Locator:
    """Best-effort map from a dotted field path to a line in the source text."""

    def __init__(self, text):
        self.text = text

    def line(self, path):
        if self.text is None:
            return None
        pos = 0
        for part in path.split("."):
            m = re.compile(r'"%s"\s*:' % re.escape(part)).search(self.text, pos)
            if m is None:
                return None
            pos = m.start()
        return self.text.count("\n", 0, pos) + 1


def _unknown_keys(user, ref, prefix, loc):
    for k, v in user.items():
        path = f"{prefix}{k}"
        if k not in ref:
            raise ConfigError("unknown key", field=path, line=loc.line(path))
        if isinstance(v, dict) and isinstance(ref[k], dict) and k != "modes":
            _unknown_keys(v, ref[k], path + ".", loc)


def _get(cfg, path):
    node = cfg
    for p in path.split("."):
        node = node[p]
    return node


def validate(cfg, loc: Optional[_Locator] = None):
    loc = loc or _Locator(None)

    def fail(path, msg):
        raise ConfigError(msg, field=path, line=loc.line(path))

    def number(path, positive=False, nonneg=False, allow_none=False):
        v = _get(cfg, path)
        if v is None and allow_none:
            return
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            fail(path, f"expected a number, got {v!r}")
        if positive and not v > 0:
            fail(path, f"must be > 0, got {v!r}")
        if nonneg and not v >= 0:
            fail(path, f"must be >= 0, got {v!r}")

    def choice(path, options):
        v = _get(cfg, path)
        if v not in options:
            fail(path, f"expected one of {sorted(options)}, got {v!r}")

    def number_list(path, positive=True):
        v = _get(cfg, path)
        if not isinstance(v, list) or not v:
            fail(path, "expected a non-empty list of numbers")
        for x in v:
            if isinstance(x, bool) or not isinstance(x, (int, float)) or (positive and not x > 0):
                fail(path, f"entries must be positive numbers, got {x!r}")

    if isinstance(cfg.get("seed"), bool) or not isinstance(cfg.get("seed"), int) or cfg["seed"] < 0:
        fail("seed", f"expected a non-negative integer, got {cfg.get('seed')!r}")

    for p in ("powerline.span_length", "powerline.tower_height", "powerline.sag_fraction"):
        number(p, positive=True)
    if not 0 < cfg["powerline"]["sag_fraction"] < 0.5:
        fail("powerline.sag_fraction", "must lie in (0, 0.5)")
    n = cfg["powerline"]["n_spans"]
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        fail("powerline.n_spans", f"expected an integer >= 1, got {n!r}")
    spans = cfg["powerline"]["spans"]
    if spans is not None and (not isinstance(spans, list) or not spans or
                              not all(isinstance(s, dict) and "span_length" in s for s in spans)):
        fail("powerline.spans", "expected null or a list of {span_length, sag_fraction|a, tower_height}")

    choice("plant.source", {"reference", "synthetic", "file", "polar"})
    choice("plant.h_row", {"climb_rate", "printed"})
    if cfg["plant"]["source"] in ("file", "polar") and not cfg["plant"]["path"]:
        fail("plant.path", f"required when plant.source is {cfg['plant']['source']!r}")
    choice("aero.sigma_mode", set(cfg["aero"]["modes"]))
    choice("aero.fd_scheme", {"central", "lsq"})
    for p in ("wingspan", "chord", "mass", "Iyy", "u0", "rho"):
        number(f"aero.geometry.{p}", positive=True)

    number("controller.sigma_lo")
    number("controller.sigma_hi")
    if not cfg["controller"]["sigma_lo"] < cfg["controller"]["sigma_hi"]:
        fail("controller.sigma_hi", "must exceed controller.sigma_lo")
    number("controller.dx", positive=True)
    number("controller.omega_floor", nonneg=True)

    choice("actuator.mode", {"ideal", "servo"})
    for p in ("gain", "damping", "natural_frequency_hz", "slew_seconds_per_60deg"):
        number(f"actuator.{p}", positive=True)
    number("actuator.delay", nonneg=True)

    number("simulation.dt", positive=True)
    number("simulation.divergence_bound", positive=True)
    number("simulation.horizon", positive=True, allow_none=True)
    init = cfg["simulation"]["initial_state"]
    if not (init in ("phugoid_seed", "zero") or (isinstance(init, list) and len(init) == 5
                                                  and all(isinstance(v, (int, float)) for v in init))):
        fail("simulation.initial_state", "expected 'phugoid_seed', 'zero' or five numbers")
    if cfg["actuator"]["mode"] == "servo" and cfg["simulation"]["dt"] > cfg["actuator"]["delay"] > 0:
        fail("simulation.dt", "must not exceed actuator.delay in servo mode")

    for p in ("wingspans", "chords", "pylon_spans", "sag_fractions"):
        number_list(f"sweep.{p}")
    for p in ("trials_per_cell", "n_spans"):
        v = cfg["sweep"][p]
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            fail(f"sweep.{p}", f"expected an integer >= 1, got {v!r}")
    for p in ("dt", "dx", "tower_height"):
        number(f"sweep.{p}", positive=True)
    for p in ("jitter_speed_fraction", "jitter_height"):
        number(f"sweep.{p}", nonneg=True)
    if not cfg["sweep"]["sigma_lo"] < cfg["sweep"]["sigma_hi"]:
        fail("sweep.sigma_hi", "must exceed sweep.sigma_lo")

    for p in ("amplitude_deg", "dwell", "rate_hz"):
        number(f"sysid.{p}", positive=True)
    number("sysid.noise_std", nonneg=True)
    for p in ("steps", "n_starts"):
        v = cfg["sysid"][p]
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            fail(f"sysid.{p}", f"expected an integer >= 1, got {v!r}")
    number("wavelength_map.sigma_max", positive=True)
    return cfg


def load_config(path=None, overrides=None):
    """Reference config, merged with ``path`` (JSON) and then ``overrides``."""
    ref = load_defaults()
    text = None
    user = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {p}: {exc.strerror or exc}") from None
        try:
            user = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", line=exc.lineno) from None
        if not isinstance(user, dict):
            raise ConfigError("top level must be an object", line=1)
    loc = _Locator(text)
    _unknown_keys(user, ref, "", loc)
    cfg = deep_merge(ref, user)
    if overrides:
        cfg = deep_merge(cfg, overrides)
    try:
        return validate(cfg, loc)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed section: {exc}") from None


# --------------------------------------------------------------------------
# assembling a run from a config

@dataclass(frozen=True)
class Scenario:
    plant: Plant
    profile: PowerlineProfile
    context: MatchingContext
    schedule: MorphSchedule
    sim_config: sim.SimConfig
    h_ref: float


def servo_from_config(cfg):
    a = cfg["actuator"]
    return act.default_servo(gain=a["gain"], damping=a["damping"],
                             natural_frequency_hz=a["natural_frequency_hz"], delay=a["delay"],
                             slew_seconds_per_60deg=a["slew_seconds_per_60deg"])


def profile_from_config(cfg) -> PowerlineProfile:
    pl = cfg["powerline"]
    try:
        if pl["spans"]:
            return PowerlineProfile.from_records(pl["spans"])
        return PowerlineProfile.uniform(pl["n_spans"], pl["span_length"], pl["sag_fraction"], pl["tower_height"])
    except (DomainError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc), field="powerline") from None


def plant_from_config(cfg) -> Plant:
    pc = cfg["plant"]
    try:
        if pc["source"] == "reference":
            return load_reference_plant(h_row=pc["h_row"])
        if pc["source"] == "file":
            return load_reference_plant(pc["path"], h_row=pc["h_row"])
        if pc["source"] == "synthetic":
            return synthetic_plant(cfg["aero"], h_row=pc["h_row"])[0]
        table = ingest_polar_table(pc["path"], family=cfg["aero"]["family"])
        return build_plant(table, geometry_from_config(cfg["aero"]), scheme=cfg["aero"]["fd_scheme"],
                           h_row=pc["h_row"])
    except OSError as exc:
        raise ConfigError(f"cannot read {pc['path']}: {exc.strerror or exc}", field="plant.path") from None
    except (PolarTableError, KeyError, ValueError) as exc:
        raise ConfigError(str(exc), field="plant") from None


def build_scenario(cfg) -> Scenario:
    plant = plant_from_config(cfg)
    profile = profile_from_config(cfg)
    cc = cfg["controller"]
    ctx = MatchingContext(plant.derivs, plant.u0, profile.spans[0], cc["sigma_lo"], cc["sigma_hi"],
                          zu_sigma=plant.zu_sigma, g=plant.g, omega_floor=cc["omega_floor"])
    schedule = build_schedule(ctx, profile, cc["dx"])
    sc = cfg["simulation"]
    init = sc["initial_state"]
    if init == "phugoid_seed":
        init = sim.phugoid_seed(plant, profile, g=plant.g)
    elif init == "zero":
        init = (0.0,) * 5
    sim_cfg = sim.SimConfig(
        dt=sc["dt"], actuator_mode=cfg["actuator"]["mode"], servo=servo_from_config(cfg),
        initial_state=tuple(float(v) for v in init), divergence_bound=sc["divergence_bound"],
        horizon=sc["horizon"],
    )
    return Scenario(plant, profile, ctx, schedule, sim_cfg, profile.tower_height)


def sweep_from_config(cfg):
    s = cfg["sweep"]
    grid = SweepGrid(tuple(s["wingspans"]), tuple(s["chords"]), tuple(s["pylon_spans"]),
                     tuple(s["sag_fractions"]), s["trials_per_cell"])
    settings = SweepSettings(n_spans=s["n_spans"], dt=s["dt"], dx=s["dx"], sigma_lo=s["sigma_lo"],
                             sigma_hi=s["sigma_hi"], jitter_speed_fraction=s["jitter_speed_fraction"],
                             jitter_height=s["jitter_height"], tower_height=s["tower_height"],
                             divergence_bound=cfg["simulation"]["divergence_bound"])
    return grid, settings
