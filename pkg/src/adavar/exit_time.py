"""Mean first-passage times out of an interval (a, b) in one dimension.

Three routes: nested Simpson quadrature of the closed-form solutions of the
backward equations, Laplace-type asymptotics, and direct Monte Carlo with the
compiled particle kernel.
"""

import functools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba as nb
import numpy as np
from scipy.integrate import cumulative_simpson, simpson

from . import rng
from .domain import _wrap1, raw_grad, raw_value
from .dynamics import CUSTOM, WeightGenerator, _noise, build_dynamics
from .errors import ConfigError, EstimationError, NumericalError, StructureError
from .gibbs import GridMesh, tabulate_gibbs

__all__ = [
    "ExitProblem",
    "QuadratureResult",
    "AsymptoticEstimate",
    "MonteCarloResult",
    "mfpt_langevin",
    "mfpt_derivfree",
    "mfpt_asymptotic",
    "mfpt_monte_carlo",
    "auto_dt",
    "exit_sweep",
    "sweep_slopes",
    "write_sweep_csv",
]


@dataclass(frozen=True)
class ExitProblem:
    potential: object
    a: float
    b: float
    x0: float
    eps: float
    hit_tolerance: float = 1e-2

    def __post_init__(self):
        if self.potential.dim != 1:
            raise ConfigError("exit problems are one-dimensional", key="potential.kind")
        if not self.a < self.x0 < self.b:
            raise ConfigError(f"need a < x0 < b, got {self.a}, {self.x0}, {self.b}", key="exit.x0")
        if not self.eps > 0:
            raise ConfigError("eps must be positive", key="eps")
        if not 0 < self.hit_tolerance < 0.1 * (self.b - self.a):
            raise ConfigError("hit_tolerance must be positive and well below b - a", key="exit.hit_tolerance")


@dataclass
class QuadratureResult:
    time: float
    rel_change: float
    converged: bool

    def __float__(self):
        return self.time


@dataclass
class AsymptoticEstimate:
    kind: str
    exponent: float
    prefactor: float
    estimate: float


@dataclass
class MonteCarloResult:
    mean: float
    standard_error: float
    censored_count: int
    n_runs: int
    dt: float
    t_cap: float


def _nodes(a, b, x0, n):
    """Simpson-compatible grid on [a, b] with x0 as a node; returns (x, index of x0)."""
    n1 = max(2, 2 * int(round(0.5 * n * (x0 - a) / (b - a))))
    n2 = max(2, 2 * int(round(0.5 * n * (b - x0) / (b - a))))
    left = np.linspace(a, x0, n1 + 1)
    right = np.linspace(x0, b, n2 + 1)
    return np.concatenate([left, right[1:]]), n1


def _langevin_log_time(prob, n):
    x, i0 = _nodes(prob.a, prob.b, prob.x0, n)
    F = prob.potential.value(x[:, None])
    eps = prob.eps
    fmax, fmin = F.max(), F.min()
    up = np.exp((F - fmax) / eps)
    inner = cumulative_simpson(np.exp(-(F - fmin) / eps), x=x, initial=0.0)
    K_b = simpson(up, x=x)
    J_b = simpson(up * inner, x=x)
    K_0 = simpson(up[: i0 + 1], x=x[: i0 + 1])
    J_0 = simpson((up * inner)[: i0 + 1], x=x[: i0 + 1])
    bracket = J_b / K_b * K_0 - J_0
    if not bracket > 0:
        return -math.inf
    return math.log(bracket) + (fmax - fmin) / eps - math.log(eps)


def _derivfree_log_time(prob, n, log_zg):
    x, i0 = _nodes(prob.a, prob.b, prob.x0, n)
    F = prob.potential.value(x[:, None])
    eps = prob.eps
    fmin = F.min()
    inner = cumulative_simpson(np.exp(-(F - fmin) / eps), x=x, initial=0.0)
    M_b = simpson(inner, x=x)
    M_0 = simpson(inner[: i0 + 1], x=x[: i0 + 1])
    bracket = (prob.x0 - prob.a) / (prob.b - prob.a) * M_b - M_0
    if not bracket > 0:
        return -math.inf
    vol = prob.potential.domain.volume
    return math.log(bracket) + math.log(vol) - math.log(eps) - fmin / eps - log_zg


def _converge(fn, quad_points):
    if quad_points < 1000:
        raise ConfigError(f"quad_points must be >= 1000, got {quad_points}", key="exit.quad_points")
    lt = fn(quad_points)
    lt2 = fn(2 * quad_points)
    t, t2 = math.exp(lt), math.exp(lt2)
    rel = abs(t2 - t) / abs(t2) if t2 != 0 else 0.0
    ok = rel <= 1e-4
    if not ok:
        warnings.warn(f"MFPT quadrature changed by {rel:.2e} relative on doubling the grid", stacklevel=3)
    return QuadratureResult(t, rel, ok)


def mfpt_langevin(prob, quad_points=4000):
    """Mean exit time of dX = -F'(X) dt + sqrt(2 eps) dW started at x0."""
    return _converge(lambda n: _langevin_log_time(prob, n), quad_points)


def _log_zg(prob, zg):
    if zg is None:
        return tabulate_gibbs(prob.potential, prob.eps, GridMesh(prob.potential.domain, 4096)).log_Z_G
    if hasattr(zg, "log_Z_G"):
        return zg.log_Z_G
    return math.log(zg)


def mfpt_derivfree(prob, quad_points=4000, zg=None):
    """Mean exit time of the zero-drift dynamics with D = eps Z_G |T|^-1 exp(F/eps)."""
    lz = _log_zg(prob, zg)
    return _converge(lambda n: _derivfree_log_time(prob, n, lz), quad_points)


def _interior_structure(prob):
    scan = prob.potential.scan()
    mins = scan.minimizers[:, 0]
    inside = (mins > prob.a) & (mins < prob.b)
    if not inside.any():
        raise StructureError("no interior minimum in (a, b)")
    k = np.flatnonzero(inside)[np.argmin(np.abs(mins[inside] - prob.x0))]
    m, alpha_m = mins[k], scan.alpha_min[k]
    maxs = scan.maximizers[:, 0]
    left = np.flatnonzero((maxs > prob.a) & (maxs < m))
    right = np.flatnonzero((maxs > m) & (maxs < prob.b))
    if left.size == 0 or right.size == 0:
        raise StructureError("the interior minimum is not flanked by saddles on both sides")
    s1 = left[np.argmax(maxs[left])]
    s2 = right[np.argmin(maxs[right])]
    return m, alpha_m, (maxs[s1], scan.alpha_max[s1]), (maxs[s2], scan.alpha_max[s2])


def mfpt_asymptotic(prob, kind):
    """Small-eps exit-time estimate up to its unknown constant.

    Reported as ``prefactor * exp(exponent / eps)``; compare exponents, not values.
    """
    if kind not in ("langevin", "derivative_free"):
        raise ConfigError(f"no asymptotic formula for {kind!r}", key="dynamics.kind")
    m, alpha_m, (s1, alpha_s1), (s2, alpha_s2) = _interior_structure(prob)
    p, eps = prob.potential, prob.eps
    F = lambda x: p.value([x])
    if kind == "langevin":
        # the lower barrier dominates; the formula assumes both are equal
        s, alpha_s = (s1, alpha_s1) if F(s1) <= F(s2) else (s2, alpha_s2)
        exponent = F(s) - F(m)
        prefactor = alpha_s * alpha_m
    else:
        exponent = min(0.0, F(prob.a) - F(m))
        prefactor = (prob.b - m) * (m - prob.a) / eps
    return AsymptoticEstimate(kind, exponent, prefactor, prefactor * math.exp(exponent / eps))


@functools.lru_cache(maxsize=None)
def _exit_kernel(pcode, wcode):
    @nb.njit(nogil=True, cache=True)
    def kernel(ids, k0, k1, x0, a, b, tol, dt, max_steps, pparams, pcoef, pres, lo, period, wparams, out, err):
        eps = wparams[0]
        log_pref = wparams[1]
        x = np.empty(1)
        buf = np.empty(1)
        g = np.zeros(1)
        spare = np.empty(2)
        lo_hit = a + tol
        hi_hit = b - tol
        for i in range(ids.shape[0]):
            x[0] = x0
            out[i] = -1
            spare[0] = -1.0
            for k in range(max_steps):
                # the walk itself is unwrapped; only F sees the periodic image
                buf[0] = _wrap1(x[0], lo, period)
                if wcode == 0:
                    D = eps
                    raw_grad(pcode, pparams, pcoef, pres, lo, period, buf, g)
                    drift = g[0]
                elif wcode == 1:
                    D = np.exp(log_pref + raw_value(pcode, pparams, pcoef, pres, lo, period, buf) / eps)
                    drift = 0.0
                else:
                    F = raw_value(pcode, pparams, pcoef, pres, lo, period, buf)
                    D = eps * F
                    raw_grad(pcode, pparams, pcoef, pres, lo, period, buf, g)
                    drift = (F - eps) * g[0]
                z = _noise(k0, k1, ids[i], k, 2, spare)
                y = x[0] - dt * drift + np.sqrt(2.0 * dt * D) * z
                if not np.isfinite(y):
                    err[0] = 1
                    err[1] = ids[i]
                    return
                x[0] = y
                if y <= lo_hit or y >= hi_hit:
                    out[i] = k + 1
                    break

    return kernel


def _exit_chunk(prob, dyn, ids, seed, dt, max_steps):
    out = np.empty(ids.size, dtype=np.int64)
    err = np.zeros(2, dtype=np.int64)
    k0, k1 = rng.split_seed(seed)
    pcode, *pargs = dyn.potential.kernel_args()
    _exit_kernel(pcode, dyn.code)(ids, k0, k1, float(prob.x0), float(prob.a), float(prob.b),
                                  float(prob.hit_tolerance), float(dt), np.int64(max_steps), *pargs,
                                  dyn.wparams, out, err)
    if err[0]:
        raise NumericalError(f"non-finite position in exit run {err[1]}", particle=int(err[1]))
    return out


def _exit_chunk_numpy(prob, dyn, ids, seed, dt, max_steps):
    x = np.full(ids.size, float(prob.x0))
    out = np.full(ids.size, -1, dtype=np.int64)
    alive = np.ones(ids.size, dtype=bool)
    for k in range(max_steps):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        xa = x[idx]
        z = rng.normals(seed, ids[idx], k, 1, purpose=rng.PURPOSE_EXIT)[:, 0]
        y = xa - dt * dyn.grad_h(xa[:, None])[:, 0] + np.sqrt(2 * dt * dyn.diffusion(xa[:, None])) * z
        if not np.all(np.isfinite(y)):
            raise NumericalError("non-finite position in exit run", particle=int(ids[idx][~np.isfinite(y)][0]))
        x[idx] = y
        hit = (y <= prob.a + prob.hit_tolerance) | (y >= prob.b - prob.hit_tolerance)
        out[idx[hit]] = k + 1
        alive[idx[hit]] = False
    return out


def mfpt_monte_carlo(prob, dyn, n_runs, dt, t_cap=None, seed=0, workers=1):
    """Mean time for independent runs from x0 to come within hit_tolerance of a or b.

    A step that jumps past an endpoint also counts as a hit. Runs still inside
    at ``t_cap`` are censored and excluded from the mean.
    """
    if n_runs < 100:
        raise ConfigError(f"n_runs must be >= 100, got {n_runs}", key="exit.n_runs")
    if not dt > 0:
        raise ConfigError("dt must be positive", key="dt")
    t_cap = 1e6 / prob.eps if t_cap is None else float(t_cap)
    if not math.isfinite(t_cap) or t_cap <= 0:
        raise ConfigError("t_cap must be finite and positive", key="exit.t_cap")
    max_steps = int(math.ceil(t_cap / dt))
    ids = np.arange(int(n_runs), dtype=np.int64)
    chunk = _exit_chunk if dyn.code != CUSTOM else _exit_chunk_numpy
    workers = max(1, min(int(workers), ids.size))
    if workers == 1:
        steps = chunk(prob, dyn, ids, seed, dt, max_steps)
    else:
        parts = np.array_split(ids, workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(chunk, prob, dyn, part, seed, dt, max_steps) for part in parts]
            steps = np.concatenate([f.result() for f in futs])
    done = steps >= 0
    censored = int((~done).sum())
    if censored == steps.size:
        raise EstimationError(f"all {steps.size} runs censored at t_cap={t_cap:g}; increase t_cap")
    times = steps[done] * dt
    se = float(times.std(ddof=1) / math.sqrt(times.size)) if times.size > 1 else math.nan
    return MonteCarloResult(float(times.mean()), se, censored, int(n_runs), float(dt), t_cap)


def auto_dt(dyn, prob, max_dt=1e-2, step_fraction=0.1):
    """Step with largest noise increment at most ``step_fraction`` of the saddle-to-minimum scale.

    Increment is sqrt(2 dt max D); the length scale is a quarter of (b - a).
    """
    x = np.linspace(prob.a, prob.b, 2049)[:, None]
    d_max = float(np.max(dyn.diffusion(x)))
    scale = step_fraction * 0.25 * (prob.b - prob.a)
    return min(max_dt, scale * scale / (2 * d_max))


def exit_sweep(potential, eps_values, kinds=("langevin", "derivative_free"), a=-math.pi, b=math.pi,
               x0=0.0, hit_tolerance=1e-2, n_runs=1000, dt="auto", t_cap=None, seed=0, workers=1,
               quad_points=4000, max_dt=1e-2, step_fraction=0.1):
    """Quadrature and (when n_runs > 0) Monte Carlo exit times over an eps grid.

    Returns rows ``{eps, dynamics, method, mean_exit_time, stderr, censored}``.
    A Monte Carlo batch with more than 10% censored runs is rerun once with
    a ten times longer cap.
    """
    rows = []
    for eps in eps_values:
        prob = ExitProblem(potential, a, b, x0, eps, hit_tolerance)
        table = tabulate_gibbs(potential, eps, GridMesh(potential.domain, 4096))
        for kind in kinds:
            if kind == "langevin":
                q = mfpt_langevin(prob, quad_points)
            else:
                q = mfpt_derivfree(prob, quad_points, zg=table)
            rows.append(dict(eps=eps, dynamics=kind, method="quadrature", mean_exit_time=q.time,
                             stderr=None, censored=None))
            if n_runs:
                dyn = build_dynamics(WeightGenerator(kind, eps), potential, table)
                step = auto_dt(dyn, prob, max_dt, step_fraction) if dt == "auto" else float(dt)
                cap = t_cap
                mc = mfpt_monte_carlo(prob, dyn, n_runs, step, cap, seed, workers)
                if mc.censored_count > 0.1 * n_runs:
                    mc = mfpt_monte_carlo(prob, dyn, n_runs, step, 10 * mc.t_cap, seed, workers)
                rows.append(dict(eps=eps, dynamics=kind, method="monte_carlo", mean_exit_time=mc.mean,
                                 stderr=mc.standard_error, censored=mc.censored_count, dt=step))
    return rows


def _linfit(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def sweep_slopes(rows):
    """Fits of log T against log(1/eps) and against 1/eps, per (dynamics, method)."""
    out = []
    keys = sorted({(r["dynamics"], r["method"]) for r in rows})
    for dyn, method in keys:
        sel = [r for r in rows if r["dynamics"] == dyn and r["method"] == method
               and r["mean_exit_time"] is not None and r["mean_exit_time"] > 0]
        if len(sel) < 2:
            continue
        inv = np.array([1.0 / r["eps"] for r in sel])
        logt = np.log([r["mean_exit_time"] for r in sel])
        s1, _, r1 = _linfit(np.log(inv), logt)
        s2, _, r2 = _linfit(inv, logt)
        out.append(dict(dynamics=dyn, method=method, slope_loglog=s1, r2_loglog=r1,
                        slope_inv_eps=s2, r2_inv_eps=r2))
    return out


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def write_sweep_csv(path, rows):
    with open(path, "w") as fh:
        fh.write("eps,dynamics,method,mean_exit_time,stderr,censored\n")
        for r in rows:
            fh.write(",".join([_fmt(r["eps"]), r["dynamics"], r["method"], _fmt(r["mean_exit_time"]),
                               _fmt(r["stderr"]), _fmt(r["censored"])]) + "\n")
