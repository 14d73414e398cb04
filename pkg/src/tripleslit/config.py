"""Scenario files, presets and validation.

A scenario is a TOML document::

    name = "my-run"
    law = "born"                # or "power:<p>"
    error_method = "allan"      # or "standard"

    [geometry]                  # lengths in meters
    slit_centers = [-1e-4, 0.0, 1e-4]
    propagator = "fresnel"

    [plan]
    mode = "attenuated-apd"     # power-meter | attenuated-apd | heralded
    n_runs = 100
    integration_time = 1.0      # seconds per setting (timed modes)
    trigger_quota = 30000000    # triggers per setting (heralded mode)
    positions = []              # empty: central maximum
    master_seed = 0
    noise = true

    [source]                    # peak_power, peak_rate, background_*, pair_rate, ...
    [power_meter]               # full_scale, nonlinearity_fraction, noise_sigma
    [apd]                       # dead_time, dark_rate, efficiency
    [drift]                     # kind, slope, amplitude, period, step_sigma

    [[faults]]
    combination = "BC"
    slit = "B"
    multiplier = 0.97           # or shift = 8e-6 (meters, near-field gap model)

    [output]
    dir = "out"

Every key is optional; unset keys take the defaults below.  Unknown keys are
rejected with their dotted path.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, fields
from typing import Any

import tomli

from tripleslit.detection_laws import DetectionLaw
from tripleslit.hierarchy import SlitCombination
from tripleslit.instruments import (
    ApdModel,
    DriftModel,
    HeraldedSource,
    Instruments,
    LaserSource,
    PowerMeterModel,
    TransmittanceFault,
    misalignment_fault,
)
from tripleslit.optics import SlitGeometry
from tripleslit.protocol import RunPlan


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


def _dataclass_defaults(cls) -> dict:
    obj = cls()
    out = {}
    for f in fields(cls):
        val = getattr(obj, f.name)
        out[f.name] = list(val) if isinstance(val, tuple) else val
    return out


_geometry = _dataclass_defaults(SlitGeometry)
_laser = _dataclass_defaults(LaserSource)
_heralded = _dataclass_defaults(HeraldedSource)
del _heralded["trigger_quota"]

DEFAULTS: dict[str, Any] = {
    "name": "default",
    "law": "born",
    "error_method": "allan",
    "geometry": _geometry,
    "plan": {
        "mode": "attenuated-apd",
        "n_runs": 100,
        "integration_time": 1.0,
        "trigger_quota": 30_000_000,
        "positions": [],
        "master_seed": 0,
        "dead_interval": 1.0,
        "randomize_order": True,
        "noise": True,
    },
    "source": {**_laser, **_heralded},
    "power_meter": _dataclass_defaults(PowerMeterModel),
    "apd": _dataclass_defaults(ApdModel),
    "drift": _dataclass_defaults(DriftModel),
    "faults": [],
    "output": {"dir": "out"},
}

FAULT_KEYS = {"combination", "slit", "multiplier", "shift"}

_IDEAL_OVERRIDES = {
    "plan": {"noise": False},
    "source": {"background_power": 0.0, "background_rate": 0.0},
    "power_meter": {"nonlinearity_fraction": 0.0, "noise_sigma": 0.0},
    "apd": {"dead_time": 0.0, "dark_rate": 0.0, "efficiency": 1.0},
}

PRESETS: dict[str, dict] = {
    "born-ideal": {"name": "born-ideal", **_IDEAL_OVERRIDES},
    "power-meter": {"name": "power-meter", "plan": {"mode": "power-meter"}},
    "attenuated-apd": {"name": "attenuated-apd", "plan": {"mode": "attenuated-apd"}},
    "heralded": {
        "name": "heralded",
        "plan": {"mode": "heralded", "trigger_quota": 30_000_000},
    },
    "mask-fault": {
        "name": "mask-fault",
        **_IDEAL_OVERRIDES,
        "faults": [{"combination": "BC", "slit": "B", "multiplier": 0.97}],
    },
}


def merge(base: dict, update: dict, path: str = "") -> dict:
    """Recursive merge of ``update`` into a copy of ``base``; unknown keys raise."""
    out = copy.deepcopy(base)
    for key, val in update.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(where, "unknown key")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(where, "expected a table")
            out[key] = merge(base[key], val, where)
        else:
            out[key] = copy.deepcopy(val)
    return out


def parse_assignment(text: str) -> dict:
    """``"plan.n_runs=20"`` -> ``{"plan": {"n_runs": 20}}`` (value parsed as TOML)."""
    if "=" not in text:
        raise ConfigError(text, "override must look like section.key=value")
    path, raw = text.split("=", 1)
    try:
        value = tomli.loads(f"v = {raw.strip()}")["v"]
    except tomli.TOMLDecodeError:
        value = raw.strip()
    keys = path.strip().split(".")
    out: dict = {}
    node = out
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value
    return out


def load_file(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError("config", f"cannot parse {path}: {exc}") from None


def resolve(config_path: str | None = None, preset: str | None = None,
            overrides: list[dict] | None = None) -> dict:
    """Defaults, then the preset, then the file, then each override, in that order."""
    cfg = copy.deepcopy(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError("preset", f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        cfg = merge(cfg, PRESETS[preset])
    if config_path is not None:
        cfg = merge(cfg, load_file(config_path))
    for upd in overrides or []:
        cfg = merge(cfg, upd)
    return cfg


@dataclass(frozen=True)
class Scenario:
    name: str
    geometry: SlitGeometry
    law: DetectionLaw
    instruments: Instruments
    plan: RunPlan
    error_method: str
    output_dir: str
    resolved: dict

    @property
    def seed(self) -> int:
        return self.plan.master_seed

    def resolved_json(self) -> str:
        return json.dumps(self.resolved, sort_keys=True)


def _build(section: str, cls, kwargs: dict):
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(section, str(exc)) from None


def _check_types(cfg: dict, ref: dict, path: str = "") -> None:
    for key, val in cfg.items():
        where = f"{path}.{key}" if path else key
        want = ref.get(key)
        if val is None and key in ("integration_time", "trigger_quota"):
            raise ConfigError(where, "must be set")
        if isinstance(want, dict):
            _check_types(val, want, where)
        elif isinstance(want, bool):
            if not isinstance(val, bool):
                raise ConfigError(where, f"expected true/false, got {val!r}")
        elif isinstance(want, (int, float)) and not isinstance(want, bool):
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(where, f"expected a number, got {val!r}")
        elif isinstance(want, str):
            if not isinstance(val, str):
                raise ConfigError(where, f"expected a string, got {val!r}")
        elif isinstance(want, list) and key != "faults":
            if not isinstance(val, list) or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in val):
                raise ConfigError(where, f"expected a list of numbers, got {val!r}")


def build_scenario(cfg: dict) -> Scenario:
    """Validate a resolved configuration and construct the model objects."""
    _check_types(cfg, DEFAULTS)
    try:
        law = DetectionLaw.parse(cfg["law"])
    except ValueError as exc:
        raise ConfigError("law", str(exc)) from None
    if cfg["error_method"] not in ("standard", "allan"):
        raise ConfigError("error_method", f"must be 'standard' or 'allan', got {cfg['error_method']!r}")

    g = dict(cfg["geometry"])
    for key in ("slit_centers", "slit_widths", "transmittance"):
        g[key] = tuple(g[key])
    geometry = _build("geometry", SlitGeometry, g)

    p = dict(cfg["plan"])
    noise = p.pop("noise")
    p["positions"] = tuple(p["positions"])
    # only the stopping rule of the selected mode is kept
    if p["mode"] == "heralded":
        p["integration_time"] = None
        p["trigger_quota"] = int(p["trigger_quota"])
    else:
        p["trigger_quota"] = None
    plan = _build("plan", RunPlan, p)

    src = cfg["source"]
    laser = _build("source", LaserSource, {k: src[k] for k in _laser})
    heralded_kw = {k: src[k] for k in _heralded}
    if plan.trigger_quota is not None:
        heralded_kw["trigger_quota"] = plan.trigger_quota
    heralded = _build("source", HeraldedSource, heralded_kw)

    faults = []
    if not isinstance(cfg["faults"], list):
        raise ConfigError("faults", "expected an array of tables")
    for i, f in enumerate(cfg["faults"]):
        where = f"faults[{i}]"
        if not isinstance(f, dict):
            raise ConfigError(where, "expected a table")
        unknown = set(f) - FAULT_KEYS
        if unknown:
            raise ConfigError(f"{where}.{sorted(unknown)[0]}", "unknown key")
        if ("multiplier" in f) == ("shift" in f):
            raise ConfigError(where, "give exactly one of multiplier or shift")
        try:
            comb = SlitCombination.parse(str(f["combination"]))
            if "shift" in f:
                faults.append(misalignment_fault(geometry, comb, str(f["slit"]), float(f["shift"])))
            else:
                faults.append(TransmittanceFault(comb, str(f["slit"]), float(f["multiplier"])))
        except KeyError as exc:
            raise ConfigError(f"{where}.{exc.args[0]}", "missing") from None
        except ValueError as exc:
            raise ConfigError(where, str(exc)) from None

    instruments = Instruments(
        power_meter=_build("power_meter", PowerMeterModel, cfg["power_meter"]),
        apd=_build("apd", ApdModel, cfg["apd"]),
        laser=laser,
        heralded=heralded,
        drift=_build("drift", DriftModel, cfg["drift"]),
        faults=tuple(faults),
        noise=noise,
    )
    return Scenario(str(cfg["name"]), geometry, law, instruments, plan,
                    cfg["error_method"], str(cfg["output"]["dir"]), cfg)


def load_scenario(config_path: str | None = None, preset: str | None = None,
                  overrides: list[dict] | None = None) -> Scenario:
    return build_scenario(resolve(config_path, preset, overrides))


def dump_toml(cfg: dict) -> str:
    """Serialize a resolved configuration back to scenario-file TOML."""
    def value(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return json.dumps(v)
        if isinstance(v, float):
            return repr(v)
        if isinstance(v, list):
            return "[" + ", ".join(value(x) for x in v) + "]"
        return str(v)

    lines = []
    for key, val in cfg.items():
        if not isinstance(val, (dict, list)) or (isinstance(val, list) and key != "faults"):
            if val is not None:
                lines.append(f"{key} = {value(val)}")
    for key, val in cfg.items():
        if isinstance(val, dict):
            lines.append(f"\n[{key}]")
            lines.extend(f"{k} = {value(v)}" for k, v in val.items() if v is not None)
    for fault in cfg.get("faults", []):
        lines.append("\n[[faults]]")
        lines.extend(f"{k} = {value(v)}" for k, v in fault.items())
    return "\n".join(lines) + "\n"
