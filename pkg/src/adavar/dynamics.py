"""Adaptive-diffusion dynamics and their Euler-Maruyama simulation on the torus.

A weight generator g fixes the whole dynamics through

    D(x)     = eps * g(F(x))
    grad H   = (g(F) - eps * g'(F)) * grad F

Built-in weights run in a compiled per-particle kernel. Custom weights
(Python callables) fall back to a vectorised numpy loop using the same
random streams.
"""

import functools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numba as nb
import numpy as np

from . import rng
from .domain import raw_grad, raw_value, _wrap1
from .errors import ConfigError, NumericalError, ValidityError
from .gibbs import GridMesh, tabulate_gibbs

__all__ = [
    "WeightGenerator",
    "DynamicsSpec",
    "EnsembleState",
    "InitSpec",
    "build_dynamics",
    "em_step",
    "simulate",
    "draw_initial",
    "write_snapshots_csv",
]

LANGEVIN = 0
DERIVATIVE_FREE = 1
LINEAR = 2
CUSTOM = 3

WEIGHT_CODES = {"langevin": LANGEVIN, "derivative_free": DERIVATIVE_FREE, "linear": LINEAR, "custom": CUSTOM}


@dataclass(frozen=True)
class WeightGenerator:
    """Weight generator g acting on energy values.

    For ``custom`` pass ``g`` and its derivative ``dg`` as vectorised callables.
    """

    kind: str
    eps: float
    g: object = None
    dg: object = None

    def __post_init__(self):
        if self.kind not in WEIGHT_CODES:
            raise ConfigError(f"unknown dynamics kind {self.kind!r}", key="dynamics.kind")
        if not (self.eps > 0 and math.isfinite(self.eps)):
            raise ConfigError(f"eps must be positive, got {self.eps}", key="eps")
        if self.kind == "custom" and (self.g is None or self.dg is None):
            raise ConfigError("custom weights need both g and dg", key="dynamics.kind")


@dataclass(eq=False)
class DynamicsSpec:
    weight: WeightGenerator
    potential: object
    Z_G: float = None
    log_Z_G: float = None

    @property
    def kind(self):
        return self.weight.kind

    @property
    def eps(self):
        return self.weight.eps

    @property
    def code(self):
        return WEIGHT_CODES[self.weight.kind]

    @property
    def wparams(self):
        """[eps, log(eps * Z_G / |T|)]; the second entry is only used by derivative_free."""
        log_pref = 0.0
        if self.kind == "derivative_free":
            log_pref = math.log(self.eps) + self.log_Z_G - math.log(self.potential.domain.volume)
        return np.array([self.eps, log_pref])

    def g(self, y):
        y = np.asarray(y, dtype=float)
        k = self.kind
        if k == "langevin":
            return np.ones_like(y)
        if k == "derivative_free":
            return np.exp(self.log_Z_G - math.log(self.potential.domain.volume) + y / self.eps)
        if k == "linear":
            return y.copy()
        return np.asarray(self.weight.g(y), dtype=float)

    def log_g(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "derivative_free":
            return self.log_Z_G - math.log(self.potential.domain.volume) + y / self.eps
        with np.errstate(divide="ignore"):
            return np.log(self.g(y))

    def dg(self, y):
        y = np.asarray(y, dtype=float)
        k = self.kind
        if k == "langevin":
            return np.zeros_like(y)
        if k == "derivative_free":
            return self.g(y) / self.eps
        if k == "linear":
            return np.ones_like(y)
        return np.asarray(self.weight.dg(y), dtype=float)

    def diffusion(self, x):
        """D(x) = eps * g(F(x)) at points of shape (n, dim)."""
        F = np.atleast_1d(self.potential.value(x))
        if self.kind == "langevin":
            return np.full(F.shape, self.eps)
        if self.kind == "derivative_free":
            return np.exp(self.wparams[1] + F / self.eps)
        return self.eps * self.g(F)

    def grad_h(self, x):
        """Drift field grad H(x); identically zero for derivative_free by construction."""
        X = np.asarray(x, dtype=float).reshape(-1, self.potential.dim)
        if self.kind == "derivative_free":
            return np.zeros_like(X)
        G = self.potential.grad(X)
        if self.kind == "langevin":
            return G
        F = self.potential.value(X)
        return (self.g(F) - self.eps * self.dg(F))[:, None] * G

    def diffusion_range(self):
        """(D_min, D_max) over the energy range, assuming g is monotone or constant there."""
        ends = np.array([self.potential.F_min, self.potential.F_max])
        if self.kind == "derivative_free":
            vals = np.exp(self.wparams[1] + ends / self.eps)
        else:
            ys = np.linspace(ends[0], ends[1], 257)
            vals = self.eps * self.g(ys)
        return float(np.min(vals)), float(np.max(vals))


def build_dynamics(w, p, zg=None):
    """Assemble D and grad H for weight ``w`` on potential ``p``.

    ``zg`` is the Gibbs normalisation at ``w.eps``; it may be a float or a
    GibbsTable and is required for derivative_free (computed on a 4096-cell
    mesh in 1D, 512 per axis otherwise, when omitted).
    """
    log_zg = None
    if zg is not None:
        if hasattr(zg, "log_Z_G"):
            if not np.isclose(zg.eps, w.eps, rtol=1e-12):
                raise ConfigError("Gibbs table eps does not match the weight eps", key="eps")
            log_zg = zg.log_Z_G
        else:
            if not zg > 0:
                raise ConfigError(f"Z_G must be positive, got {zg}", key="Z_G")
            log_zg = math.log(zg)
    elif w.kind == "derivative_free":
        res = 4096 if p.dim == 1 else 512
        log_zg = tabulate_gibbs(p, w.eps, GridMesh(p.domain, res)).log_Z_G
    dyn = DynamicsSpec(w, p, None if log_zg is None else math.exp(log_zg), log_zg)

    if w.kind in ("linear", "custom"):
        ys = np.linspace(p.F_min, p.F_max, 1025)
        gv = dyn.g(ys)
        if not np.all(np.isfinite(gv)) or np.any(gv <= 0):
            raise ValidityError(f"{w.kind} weight g must be positive on [F_min, F_max]")
        _check_normalisation(dyn)
    return dyn


def _check_normalisation(dyn):
    p = dyn.potential
    mesh = GridMesh(p.domain, 256 if p.dim == 1 else 64)
    f = dyn.g(p.value(mesh.centers()))
    integral = np.sum(1.0 / f) * mesh.cell_volume
    vol = p.domain.volume
    if abs(integral - vol) > 1e-3 * vol:
        warnings.warn(
            f"weight violates the time-scale normalisation: int 1/f = {integral:.6g}, |T| = {vol:.6g}",
            stacklevel=3,
        )


@dataclass
class EnsembleState:
    positions: np.ndarray
    time: float
    step: int
    master_seed: int
    particle_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        if self.particle_ids is None:
            self.particle_ids = np.arange(self.positions.shape[0], dtype=np.int64)

    @property
    def n_particles(self):
        return self.positions.shape[0]


@dataclass(frozen=True)
class InitSpec:
    """Initial law: ``gaussian`` (mean, std), ``uniform`` or ``point`` (mean)."""

    kind: str = "uniform"
    mean: tuple = None
    std: float = 0.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform", "point"):
            raise ConfigError(f"unknown init kind {self.kind!r}", key="init.kind")
        if self.kind in ("gaussian", "point") and self.mean is None:
            raise ConfigError(f"init kind {self.kind} needs a mean", key="init.mean")
        if self.kind == "gaussian" and not self.std >= 0:
            raise ConfigError("init std must be non-negative", key="init.std")


def draw_initial(init, domain, particle_ids, seed):
    ids = np.asarray(particle_ids, dtype=np.int64)
    d = domain.dim
    if init.kind == "uniform":
        u = rng.uniforms(seed, ids, 0, d, purpose=rng.PURPOSE_INIT)
        return domain.wrap(domain.lo + domain.period * u)
    mean = np.broadcast_to(np.asarray(init.mean, dtype=float), (d,))
    if init.kind == "point":
        return domain.wrap(np.tile(mean, (ids.size, 1)))
    z = rng.normals(seed, ids, 0, d, purpose=rng.PURPOSE_INIT)
    return domain.wrap(mean + init.std * z)


@nb.njit(nogil=True, cache=True)
def _noise(k0, k1, stream, q, purpose, spare):
    """Normal number ``q`` of a stream; ``spare`` holds (q + 1, z) for the unused half of a pair."""
    if q % 2 == 1 and spare[0] == q:
        return spare[1]
    z0, z1 = rng._normal_pair(k0, k1, stream, q // 2, purpose, 0)
    if q % 2 == 1:
        return z1
    spare[0] = q + 1
    spare[1] = z1
    return z0


@functools.lru_cache(maxsize=None)
def _em_kernel(pcode, wcode):
    """Euler-Maruyama kernel compiled for one potential kind and one weight kind."""

    @nb.njit(nogil=True, cache=True)
    def kernel(pos, ids, k0, k1, step0, n_steps, dt, pparams, pcoef, pres, lo, period, wparams,
               snap_steps, snaps, err):
        n, d = pos.shape
        eps = wparams[0]
        log_pref = wparams[1]
        S = snap_steps.shape[0]
        x = np.empty(d)
        grad = np.zeros(d)
        spare = np.empty(2)
        for i in range(n):
            for a in range(d):
                x[a] = pos[i, a]
            spare[0] = -1.0
            q = step0 * d
            j = 0
            while j < S and snap_steps[j] == 0:
                for a in range(d):
                    snaps[j, i, a] = x[a]
                j += 1
            for k in range(n_steps):
                if wcode == 0:
                    D = eps
                    raw_grad(pcode, pparams, pcoef, pres, lo, period, x, grad)
                elif wcode == 1:
                    D = np.exp(log_pref + raw_value(pcode, pparams, pcoef, pres, lo, period, x) / eps)
                else:
                    F = raw_value(pcode, pparams, pcoef, pres, lo, period, x)
                    D = eps * F
                    raw_grad(pcode, pparams, pcoef, pres, lo, period, x, grad)
                    for a in range(d):
                        grad[a] *= F - eps
                scale = np.sqrt(2.0 * dt * D)
                for a in range(d):
                    z = _noise(k0, k1, ids[i], q, 0, spare)
                    q += 1
                    if wcode == 1:
                        y = x[a] + scale * z
                    else:
                        y = x[a] - dt * grad[a] + scale * z
                    if not np.isfinite(y):
                        err[0] = 1
                        err[1] = ids[i]
                        err[2] = step0 + k
                        return
                    x[a] = _wrap1(y, lo, period)
                while j < S and snap_steps[j] == k + 1:
                    for a in range(d):
                        snaps[j, i, a] = x[a]
                    j += 1
            for a in range(d):
                pos[i, a] = x[a]

    return kernel


def _run_chunk(dyn, X, ids, seed, step0, n_steps, dt, snap_steps):
    """Advance one particle range; returns (final, snapshots)."""
    p = dyn.potential
    X = np.ascontiguousarray(X, dtype=float).copy()
    snaps = np.empty((snap_steps.size, X.shape[0], p.dim))
    if dyn.code != CUSTOM:
        k0, k1 = rng.split_seed(seed)
        err = np.zeros(3, dtype=np.int64)
        pcode, *pargs = p.kernel_args()
        _em_kernel(pcode, dyn.code)(X, ids, k0, k1, np.int64(step0), np.int64(n_steps), float(dt), *pargs,
                                    dyn.wparams, snap_steps, snaps, err)
        if err[0]:
            raise NumericalError(f"non-finite position for particle {err[1]} at step {err[2]}",
                                 particle=int(err[1]))
        return X, snaps

    dom = p.domain
    j = 0
    while j < snap_steps.size and snap_steps[j] == 0:
        snaps[j] = X
        j += 1
    for k in range(n_steps):
        z = rng.normals(seed, ids, step0 + k, p.dim, purpose=rng.PURPOSE_NOISE)
        with np.errstate(over="ignore", invalid="ignore"):
            Y = X - dt * dyn.grad_h(X) + np.sqrt(2 * dt * dyn.diffusion(X))[:, None] * z
        bad = ~np.all(np.isfinite(Y), axis=1)
        if bad.any():
            pid = int(ids[np.argmax(bad)])
            raise NumericalError(f"non-finite position for particle {pid} at step {step0 + k}", particle=pid)
        X = dom.wrap(Y)
        while j < snap_steps.size and snap_steps[j] == k + 1:
            snaps[j] = X
            j += 1
    return X, snaps


def _partition(n, workers):
    workers = max(1, min(int(workers), max(n, 1)))
    bounds = np.linspace(0, n, workers + 1).astype(int)
    return [(bounds[i], bounds[i + 1]) for i in range(workers) if bounds[i + 1] > bounds[i]]


def _advance(dyn, X, ids, seed, step0, n_steps, dt, snap_steps, workers):
    parts = _partition(X.shape[0], workers)
    if len(parts) <= 1:
        return _run_chunk(dyn, X, ids, seed, step0, n_steps, dt, snap_steps)
    with ThreadPoolExecutor(max_workers=len(parts)) as pool:
        futs = [pool.submit(_run_chunk, dyn, X[a:b], ids[a:b], seed, step0, n_steps, dt, snap_steps)
                for a, b in parts]
        results = [f.result() for f in futs]
    return (np.concatenate([r[0] for r in results]),
            np.concatenate([r[1] for r in results], axis=1))


def em_step(dyn, s, dt, workers=1):
    """One Euler-Maruyama step of every particle."""
    if not dt >= 0:
        raise ConfigError(f"dt must be positive, got {dt}", key="dt")
    if dt == 0:
        return replace(s, positions=s.positions.copy())
    X, _ = _advance(dyn, s.positions, s.particle_ids, s.master_seed, s.step, 1, dt,
                    np.empty(0, dtype=np.int64), workers)
    return EnsembleState(X, s.time + dt, s.step + 1, s.master_seed, s.particle_ids.copy())


def _check_step_size(dyn, dt):
    _, d_max = dyn.diffusion_range()
    period = dyn.potential.domain.period
    if math.sqrt(2 * dt * d_max) > 0.1 * period:
        warnings.warn(
            f"largest EM noise increment sqrt(2 dt D_max) = {math.sqrt(2 * dt * d_max):.3g} "
            f"exceeds a tenth of the period; consider a smaller dt",
            stacklevel=3,
        )


def simulate(dyn, init, n_particles, t_final, dt, snapshot_times=(), seed=0, workers=1):
    """Simulate ``n_particles`` independent particles and return snapshots.

    A requested time maps to the last step not after it. The final time is
    always included. Results do not depend on ``workers``.
    """
    if not (dt > 0 and math.isfinite(dt)):
        raise ConfigError(f"dt must be positive, got {dt}", key="dt")
    if not t_final >= 0:
        raise ConfigError(f"t_final must be non-negative, got {t_final}", key="t_final")
    if t_final > 0 and dt > t_final:
        raise ConfigError(f"dt={dt} exceeds t_final={t_final}", key="dt")
    if int(n_particles) < 1:
        raise ConfigError("n_particles must be >= 1", key="n_particles")
    times = [float(t) for t in snapshot_times]
    if any(t < 0 or t > t_final * (1 + 1e-12) for t in times):
        raise ConfigError("snapshot times must lie in [0, t_final]", key="snapshot_times")
    n_steps = int(math.floor(t_final / dt + 1e-9))
    snap_steps = sorted({int(math.floor(t / dt + 1e-9)) for t in times} | {n_steps})
    snap_steps = np.array([min(s, n_steps) for s in snap_steps], dtype=np.int64)
    _check_step_size(dyn, dt)

    ids = np.arange(int(n_particles), dtype=np.int64)
    X0 = draw_initial(init, dyn.potential.domain, ids, seed)
    _, snaps = _advance(dyn, X0, ids, seed, 0, n_steps, dt, snap_steps, workers)
    return [EnsembleState(snaps[j], float(s * dt), int(s), int(seed), ids.copy())
            for j, s in enumerate(snap_steps)]


def write_snapshots_csv(path, states, single_file=True):
    """Write ``t,particle_id,x1[,x2...]`` rows; one file, or one per snapshot (``path`` as a prefix)."""
    def rows(fh, s):
        for pid, x in zip(s.particle_ids, s.positions):
            fh.write(f"{s.time:.17g},{pid}," + ",".join(f"{v:.17g}" for v in x) + "\n")

    dim = states[0].positions.shape[1]
    header = "t,particle_id," + ",".join(f"x{i + 1}" for i in range(dim)) + "\n"
    if single_file:
        with open(path, "w") as fh:
            fh.write(header)
            for s in states:
                rows(fh, s)
        return [path]
    paths = []
    for j, s in enumerate(states):
        name = f"{path}_{j:04d}.csv"
        with open(name, "w") as fh:
            fh.write(header)
            rows(fh, s)
        paths.append(name)
    return paths
