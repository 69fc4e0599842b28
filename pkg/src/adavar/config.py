"""Experiment configuration: dotted-key JSON files, built-in presets and validation."""

import copy
import json
import math

from .errors import ConfigError

__all__ = ["PRESETS", "DEFAULTS", "flatten", "load_config", "resolve", "require", "dump_config"]

# Keys every run understands; presets and files override these.
DEFAULTS = {
    "potential.kind": "double_well_1d",
    "potential.c": None,
    "potential.A": 1.0,
    "potential.amplitude": 2.0,
    "potential.shift": 0.1,
    "potential.coeffs": None,
    "potential.dim": 1,
    "potential.period": None,
    "potential.grid_file": None,
    "dynamics.kind": "langevin",
    "eps": None,
    "n_particles": 1000,
    "dt": 1e-3,
    "t_final": 1.0,
    "snapshots.times": None,
    "snapshots.every": None,
    "snapshots.write": True,
    "snapshots.single_file": True,
    "init.kind": "uniform",
    "init.mean": None,
    "init.std": 0.0,
    "mesh.resolution": None,
    "seed": 0,
    "threads": None,
    "out": "out",
    "preset": None,
    "exit.eps_values": None,
    "exit.a": -math.pi,
    "exit.b": math.pi,
    "exit.x0": 0.0,
    "exit.hit_tolerance": 1e-2,
    "exit.n_runs": 1000,
    "exit.dt": "auto",
    "exit.max_dt": 1e-2,
    "exit.step_fraction": 0.1,
    "exit.t_cap": None,
    "exit.quad_points": 4000,
    "exit.kinds": ["langevin", "derivative_free"],
    "rates.C_PI": None,
    "rates.C_LSI": None,
    "rates.fit": False,
    "rates.fit_t_final": 10.0,
    "rates.fit_floor": None,
}

PRESETS = {
    "dw1d": {
        "description": (
            "One-dimensional double wells (x^2 - c)^2 / 80 on [-pi, pi) for c in {1, 5, 9}. "
            "eps = 0.25 is an implementer choice; the source experiment does not state it."
        ),
        "potential.kind": "double_well_1d",
        "potential.c": [1, 5, 9],
        "dynamics.kind": ["langevin", "derivative_free"],
        "eps": 0.25,
        "n_particles": 2000,
        "dt": 1e-3,
        "t_final": 10.0,
        "snapshots.every": 0.1,
        "snapshots.write": False,
        "init.kind": "gaussian",
        "init.mean": [-math.pi / 2],
        "init.std": 0.01,
        "mesh.resolution": 256,
        "rates.fit": True,
        "paper_scale": {"n_particles": 10000, "dt": 1e-4, "t_final": 20.0},
    },
    "multimodal2d": {
        "description": "Sixteen-mode separable sine potential on [-1, 1)^2 at eps = 0.05.",
        "potential.kind": "sine_modes_2d",
        "dynamics.kind": ["langevin", "derivative_free"],
        "eps": 0.05,
        "n_particles": 20000,
        "dt": 1e-3,
        "t_final": 10.0,
        "snapshots.times": [10.0],
        "snapshots.write": False,
        "init.kind": "gaussian",
        "init.mean": [-0.2, -0.2],
        "init.std": 0.01,
        "mesh.resolution": 128,
        "paper_scale": {"n_particles": 100000, "dt": 1e-4},
    },
    "exit_fig6": {
        "description": (
            "Exit from (-pi, pi) started at the interior minimum 0 of (A/2)(1 - cos 2x), "
            "whose other minima sit at the endpoints and whose saddles are at +-pi/2."
        ),
        "potential.kind": "cosine_well_1d",
        "potential.A": 1.0,
        "exit.eps_values": [0.1, 0.15, 0.2, 0.3, 0.5],
        "exit.n_runs": 1000,
        "exit.dt": "auto",
        "exit.max_dt": 1e-2,
        "paper_scale": {"exit.max_dt": 1e-4},
    },
}


def flatten(d, prefix=""):
    """Nested dicts to dotted keys; already dotted keys pass through."""
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and k != "paper_scale":
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}", key="config") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}", key="config") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object", key="config")
    return flatten(raw)


def resolve(file_cfg=None, preset=None, overrides=None, paper_scale=False):
    """Defaults < preset < file < overrides; returns a flat dict with every key present."""
    cfg = dict(DEFAULTS)
    file_cfg = dict(file_cfg or {})
    preset = preset or file_cfg.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}", key="preset")
        bundle = copy.deepcopy(PRESETS[preset])
        scale = bundle.pop("paper_scale", {})
        cfg.update(bundle)
        if paper_scale:
            cfg.update(scale)
        cfg["preset"] = preset
    cfg.update(file_cfg)
    cfg.update({k: v for k, v in (overrides or {}).items() if v is not None})
    cfg["paper_scale"] = bool(paper_scale or cfg.get("paper_scale", False))
    unknown = sorted(set(cfg) - set(DEFAULTS) - {"description", "paper_scale"})
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}", key=unknown[0])
    return cfg


def require(cfg, key, kind=None, positive=False, integer=False):
    """Fetch and check one key, raising ConfigError that names it."""
    v = cfg.get(key)
    if v is None:
        raise ConfigError(f"missing required config key {key!r}", key=key)
    if kind is not None and not isinstance(v, kind):
        raise ConfigError(f"config key {key!r} has the wrong type ({type(v).__name__})", key=key)
    if integer and (isinstance(v, bool) or not isinstance(v, int)):
        raise ConfigError(f"config key {key!r} must be an integer", key=key)
    if positive:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0 or not math.isfinite(v):
            raise ConfigError(f"config key {key!r} must be a positive number, got {v!r}", key=key)
    return v


def dump_config(cfg, path):
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
