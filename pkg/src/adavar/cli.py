"""Command-line runner: ``adavar {sample,exit,rates,fpe}``.

Exit codes: 0 success, 2 configuration error, 3 numerical or estimation error.
"""

import argparse
import itertools
import json
import math
import os
import sys
import warnings

import numpy as np
from scipy.stats import norm

from . import config as config_mod
from .domain import (
    cosine_well_1d,
    custom_polynomial,
    double_well_1d,
    load_grid_file,
    sine_modes_2d,
)
from .dynamics import InitSpec, WeightGenerator, build_dynamics, simulate, write_snapshots_csv
from .errors import AdavarError, ConfigError
from .exit_time import exit_sweep, sweep_slopes, write_sweep_csv
from .fpe import FpeState, fpe_solve
from .gibbs import (
    GridMesh,
    chi2_divergence,
    histogram_density,
    kl_divergence,
    tabulate_gibbs,
    tv_distance,
    write_grid_csv,
)
from .rates import chi2_noise_floor, fit_decay_rate, general_rate_bound

__all__ = ["main", "build_potential", "run_sample", "run_exit", "run_rates", "run_fpe"]


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def build_potential(cfg, c=None):
    kind = config_mod.require(cfg, "potential.kind", str)
    period = cfg.get("potential.period")
    if period is not None:
        config_mod.require(cfg, "potential.period", positive=True)
    if kind == "double_well_1d":
        if c is None:
            c = config_mod.require(cfg, "potential.c")
        if isinstance(c, bool) or not isinstance(c, (int, float)):
            raise ConfigError("potential.c must be a number", key="potential.c")
        return double_well_1d(c, **({"period": period} if period else {}))
    if kind == "sine_modes_2d":
        return sine_modes_2d(cfg["potential.amplitude"], cfg["potential.shift"],
                             **({"period": period} if period else {}))
    if kind == "cosine_well_1d":
        return cosine_well_1d(cfg["potential.A"], **({"period": period} if period else {}))
    if kind == "custom_polynomial":
        coeffs = config_mod.require(cfg, "potential.coeffs", (list, tuple, int, float))
        dim = config_mod.require(cfg, "potential.dim", integer=True)
        if dim < 1:
            raise ConfigError("potential.dim must be >= 1", key="potential.dim")
        return custom_polynomial(coeffs, dim, **({"period": period} if period else {}))
    if kind == "tabulated_grid":
        return load_grid_file(config_mod.require(cfg, "potential.grid_file", str))
    raise ConfigError(f"unknown potential kind {kind!r}", key="potential.kind")


def _potentials(cfg):
    """(label, PotentialSpec) pairs; a list-valued potential.c fans out."""
    if cfg["potential.kind"] == "double_well_1d":
        cs = _as_list(config_mod.require(cfg, "potential.c"))
        return [(f"c{c:g}", build_potential(cfg, c)) for c in cs]
    return [("", build_potential(cfg))]


def _kinds(cfg):
    kinds = _as_list(config_mod.require(cfg, "dynamics.kind"))
    for k in kinds:
        if k not in ("langevin", "derivative_free", "linear"):
            raise ConfigError(f"dynamics kind {k!r} is not available from a config file", key="dynamics.kind")
    return kinds


def _mesh(cfg, p):
    res = cfg.get("mesh.resolution")
    if res is None:
        res = 256 if p.dim == 1 else 128
    if isinstance(res, bool) or not isinstance(res, int):
        raise ConfigError("mesh.resolution must be an integer", key="mesh.resolution")
    return GridMesh(p.domain, res)


def _init(cfg, p):
    kind = cfg["init.kind"]
    mean = cfg.get("init.mean")
    if mean is not None:
        mean = tuple(float(v) for v in _as_list(mean))
        if len(mean) != p.dim:
            raise ConfigError(f"init.mean needs {p.dim} components", key="init.mean")
    return InitSpec(kind, mean, float(cfg.get("init.std") or 0.0))


def _snapshot_times(cfg, t_final):
    times = cfg.get("snapshots.times")
    every = cfg.get("snapshots.every")
    if times is not None and every is not None:
        raise ConfigError("give snapshots.times or snapshots.every, not both", key="snapshots.every")
    if every is not None:
        config_mod.require(cfg, "snapshots.every", positive=True)
        n = int(math.floor(t_final / every + 1e-9))
        return [k * every for k in range(n + 1)]
    if times is not None:
        return [float(t) for t in _as_list(times)]
    return [0.0, t_final]


def _eps(cfg):
    return float(config_mod.require(cfg, "eps", positive=True))


def _workers(cfg):
    t = cfg.get("threads")
    return os.cpu_count() or 1 if t is None else int(t)


def _validate_common(cfg):
    config_mod.require(cfg, "seed", integer=True)
    if not 0 <= cfg["seed"] < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer", key="seed")
    if cfg.get("threads") is not None:
        config_mod.require(cfg, "threads", integer=True, positive=True)


def _subdir(out, *parts):
    name = "-".join(p for p in parts if p)
    path = os.path.join(out, name) if name else out
    os.makedirs(path, exist_ok=True)
    return path


def _fmt(v):
    return f"{float(v):.17g}"


def _write_divergence(path, rows):
    with open(path, "w") as fh:
        fh.write("t,kl,chi2,tv\n")
        for r in rows:
            fh.write(",".join(_fmt(v) for v in r) + "\n")


def run_sample(cfg):
    _validate_common(cfg)
    eps = _eps(cfg)
    n = config_mod.require(cfg, "n_particles", integer=True, positive=True)
    dt = float(config_mod.require(cfg, "dt", positive=True))
    t_final = float(config_mod.require(cfg, "t_final"))
    potentials = _potentials(cfg)
    kinds = _kinds(cfg)
    times = _snapshot_times(cfg, t_final)
    inits = {label: _init(cfg, p) for label, p in potentials}
    meshes = {label: _mesh(cfg, p) for label, p in potentials}
    fanout = len(potentials) * len(kinds) > 1
    written = []
    for (label, p), kind in itertools.product(potentials, kinds):
        mesh = meshes[label]
        table = tabulate_gibbs(p, eps, mesh)
        dyn = build_dynamics(WeightGenerator(kind, eps), p, table)
        snaps = simulate(dyn, inits[label], n, t_final, dt, times, cfg["seed"], _workers(cfg))
        rows = []
        for s in snaps:
            q = histogram_density(s, mesh)
            rows.append((s.time, kl_divergence(q, table), chi2_divergence(q, table), tv_distance(q, table)))
        out = _subdir(cfg["out"], kind, label) if fanout else _subdir(cfg["out"])
        _write_divergence(os.path.join(out, "divergence.csv"), rows)
        write_grid_csv(os.path.join(out, "density.csv"), mesh, histogram_density(snaps[-1], mesh).masses
                       / mesh.cell_volume, t=snaps[-1].time)
        write_grid_csv(os.path.join(out, "target.csv"), mesh, table.density)
        if cfg["snapshots.write"]:
            write_snapshots_csv(os.path.join(out, "snapshots.csv" if cfg["snapshots.single_file"] else "snapshot"),
                                snaps, cfg["snapshots.single_file"])
        written.append(out)
    return written


def _initial_density(cfg, p, mesh):
    """Cell-averaged initial law for the FPE: gaussian product or uniform."""
    init = _init(cfg, p)
    if init.kind == "uniform":
        return np.full(mesh.n_cells, 1.0 / p.domain.volume)
    if init.kind == "point" or init.std == 0:
        rho = np.zeros(mesh.n_cells)
        rho[mesh.cell_index(p.domain.wrap(np.array(init.mean)))] = 1.0 / mesh.cell_volume
        return rho
    edges = p.domain.lo + mesh.h * np.arange(mesh.resolution + 1)
    per_axis = []
    for m in init.mean:
        # fold the gaussian onto the torus by summing shifted copies
        mass = sum(np.diff(norm.cdf(edges + k * p.domain.period, m, init.std)) for k in range(-3, 4))
        per_axis.append(mass)
    mass = per_axis[0]
    for extra in per_axis[1:]:
        mass = np.multiply.outer(mass, extra)
    mass = mass.reshape(-1)
    return mass / mass.sum() / mesh.cell_volume


def _fpe_series(dyn, table, rho0, mesh, t_final, times):
    snaps = fpe_solve(dyn, FpeState(mesh, rho0), t_final, times)
    rows = [(s.time, kl_divergence(s, table), chi2_divergence(s, table), tv_distance(s, table)) for s in snaps]
    return snaps, rows


def run_fpe(cfg):
    _validate_common(cfg)
    eps = _eps(cfg)
    t_final = float(config_mod.require(cfg, "t_final"))
    if t_final < 0:
        raise ConfigError("t_final must be non-negative", key="t_final")
    potentials = _potentials(cfg)
    kinds = _kinds(cfg)
    times = _snapshot_times(cfg, t_final)
    fanout = len(potentials) * len(kinds) > 1
    written = []
    for (label, p), kind in itertools.product(potentials, kinds):
        if p.dim > 2:
            raise ConfigError("the FPE solver supports one and two dimensions", key="potential.dim")
        mesh = _mesh(cfg, p)
        table = tabulate_gibbs(p, eps, mesh)
        dyn = build_dynamics(WeightGenerator(kind, eps), p, table)
        snaps, rows = _fpe_series(dyn, table, _initial_density(cfg, p, mesh), mesh, t_final, times)
        out = _subdir(cfg["out"], kind, label) if fanout else _subdir(cfg["out"])
        _write_divergence(os.path.join(out, "divergence.csv"), rows)
        with open(os.path.join(out, "fpe.csv"), "w") as fh:
            centers = mesh.centers()
            fh.write("t,cell_index," + ",".join(f"center_x{i + 1}" for i in range(p.dim)) + ",value\n")
            for s in snaps:
                for i, (c, v) in enumerate(zip(centers, s.rho)):
                    fh.write(f"{s.time:.17g},{i}," + ",".join(_fmt(x) for x in c) + f",{v:.17g}\n")
        with open(os.path.join(out, "fpe_diagnostics.json"), "w") as fh:
            json.dump({"clipped_cells": snaps[-1].clipped, "final_mass": snaps[-1].mass()}, fh, indent=2)
        written.append(out)
    return written


def run_rates(cfg):
    _validate_common(cfg)
    eps = _eps(cfg)
    potentials = _potentials(cfg)
    kinds = _kinds(cfg)
    for key in ("rates.C_PI", "rates.C_LSI"):
        if cfg.get(key) is not None:
            config_mod.require(cfg, key, positive=True)
    reports = []
    for (label, p), kind in itertools.product(potentials, kinds):
        mesh = _mesh(cfg, p)
        table = tabulate_gibbs(p, eps, mesh)
        rep = general_rate_bound(p, WeightGenerator(kind, eps), cfg["rates.C_PI"], cfg["rates.C_LSI"], table)
        entry = {"potential": p.kind, "label": label, "dynamics": kind}
        if p.kind == "double_well_1d":
            entry["c"] = float(p.params[0])
        entry.update(rep.to_dict())
        if cfg["rates.fit"]:
            entry.update(_fitted_rates(cfg, p, kind, eps, mesh, table))
        reports.append(entry)

    result = {"eps": eps, "reports": reports}
    by_c = sorted((r["c"], r["langevin_lambda"]) for r in reports if "c" in r)
    if len({c for c, _ in by_c}) >= 2:
        result["langevin_rate_decreases_with_c"] = bool(by_c[-1][1] < by_c[0][1])
    out = _subdir(cfg["out"])
    with open(os.path.join(out, "rates.json"), "w") as fh:
        json.dump(result, fh, indent=2, default=float)
        fh.write("\n")
    with open(os.path.join(out, "rates.csv"), "w") as fh:
        keys = list(reports[0])
        fh.write(",".join(keys) + "\n")
        for r in reports:
            fh.write(",".join(v if isinstance(v, str) else _fmt(v) for v in (r[k] for k in keys)) + "\n")
    return result


def _fitted_rates(cfg, p, kind, eps, mesh, table):
    t_final = float(cfg["rates.fit_t_final"])
    times = np.linspace(0.0, t_final, 201).tolist()
    dyn = build_dynamics(WeightGenerator(kind, eps), p, table)
    _, rows = _fpe_series(dyn, table, _initial_density(cfg, p, mesh), mesh, t_final, times)
    floor = cfg.get("rates.fit_floor")
    if floor is None:
        floor = 3 * chi2_noise_floor(mesh.n_cells, int(cfg["n_particles"]))
    chi2 = fit_decay_rate([(t, c2) for t, _, c2, _ in rows], floor=floor)
    kl = fit_decay_rate([(t, k) for t, k, _, _ in rows if t >= 1.0], floor=1e-12)
    return {"fitted_chi2_rate": chi2["rate"], "fitted_chi2_r_squared": chi2["r_squared"],
            "fitted_kl_rate": kl["rate"], "fitted_kl_r_squared": kl["r_squared"]}


def run_exit(cfg):
    _validate_common(cfg)
    p = build_potential(cfg)
    eps_values = cfg.get("exit.eps_values")
    if eps_values is None:
        eps_values = [_eps(cfg)]
    eps_values = [float(e) for e in _as_list(eps_values)]
    if any(not e > 0 for e in eps_values):
        raise ConfigError("exit.eps_values must be positive", key="exit.eps_values")
    n_runs = int(config_mod.require(cfg, "exit.n_runs", integer=True))
    dt = cfg["exit.dt"]
    if dt != "auto":
        config_mod.require(cfg, "exit.dt", positive=True)
    kinds = [k for k in _as_list(cfg["exit.kinds"])]
    for k in kinds:
        if k not in ("langevin", "derivative_free"):
            raise ConfigError(f"exit studies support langevin and derivative_free, not {k!r}", key="exit.kinds")
    rows = exit_sweep(p, eps_values, kinds, cfg["exit.a"], cfg["exit.b"], cfg["exit.x0"],
                      cfg["exit.hit_tolerance"], n_runs, dt, cfg["exit.t_cap"], cfg["seed"], _workers(cfg),
                      cfg["exit.quad_points"], cfg["exit.max_dt"], cfg["exit.step_fraction"])
    out = _subdir(cfg["out"])
    write_sweep_csv(os.path.join(out, "exit.csv"), rows)
    slopes = sweep_slopes(rows)
    with open(os.path.join(out, "slopes.json"), "w") as fh:
        json.dump(slopes, fh, indent=2)
        fh.write("\n")
    return rows, slopes


COMMANDS = {"sample": run_sample, "exit": run_exit, "rates": run_rates, "fpe": run_fpe}


def _parse_set(items):
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}", key=key)
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def build_parser():
    ap = argparse.ArgumentParser(prog="adavar", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON config file with dotted or nested keys")
    ap.add_argument("--preset", choices=sorted(config_mod.PRESETS))
    ap.add_argument("--seed", type=int)
    ap.add_argument("--threads", type=int)
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--paper-scale", action="store_true", help="use the full-size settings of the preset")
    ap.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (JSON value)")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        file_cfg = config_mod.load_config(args.config) if args.config else {}
        overrides = _parse_set(args.set)
        overrides.update({"seed": args.seed, "threads": args.threads, "out": args.out})
        cfg = config_mod.resolve(file_cfg, args.preset, overrides, args.paper_scale)
        os.makedirs(cfg["out"], exist_ok=True)
        config_mod.dump_config(cfg, os.path.join(cfg["out"], "resolved_config.json"))
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error [{exc.key}]: {exc}", file=sys.stderr)
        return 2
    except (AdavarError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
