"""Periodic domains and Gibbs potentials.

Potentials are stored as an integer kind code plus a parameter vector so the
same formulas are used by the vectorised evaluators here and by the compiled
particle kernels in :mod:`adavar.dynamics` and :mod:`adavar.exit_time`.
"""

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy import ndimage, optimize

from .errors import ConfigError, DomainError

__all__ = [
    "TorusDomain",
    "PotentialSpec",
    "ExtremaScan",
    "double_well_1d",
    "sine_modes_2d",
    "cosine_well_1d",
    "custom_polynomial",
    "tabulated_grid",
    "load_grid_file",
    "eval_potential",
    "eval_grad",
    "scan_extrema_curvature",
]

DOUBLE_WELL = 0
SINE_MODES = 1
POLYNOMIAL = 2
COSINE_WELL = 3
TABULATED = 4

KIND_CODES = {
    "double_well_1d": DOUBLE_WELL,
    "sine_modes_2d": SINE_MODES,
    "custom_polynomial": POLYNOMIAL,
    "cosine_well_1d": COSINE_WELL,
    "tabulated_grid": TABULATED,
}

_TAB_FD_DIVISIONS = 4096


@dataclass(frozen=True)
class TorusDomain:
    """Box ``[lo, lo + period)^dim`` with opposite faces identified."""

    dim: int
    period: float
    lo: float = None
    diam: float = None

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ConfigError(f"dim must be a positive integer, got {self.dim}", key="domain.dim")
        if not (self.period > 0 and math.isfinite(self.period)):
            raise ConfigError(f"period must be positive, got {self.period}", key="domain.period")
        object.__setattr__(self, "dim", int(self.dim))
        object.__setattr__(self, "period", float(self.period))
        if self.lo is None:
            object.__setattr__(self, "lo", -self.period / 2.0)
        if self.diam is None:
            object.__setattr__(self, "diam", math.sqrt(self.dim) * self.period / 2.0)

    @property
    def hi(self):
        return self.lo + self.period

    @property
    def volume(self):
        return self.period ** self.dim

    def wrap(self, x):
        """Map points into the canonical cell. Points already inside are returned unchanged."""
        arr = np.array(x, dtype=float)
        flat = np.ascontiguousarray(arr.reshape(-1))
        _wrap_inplace(flat, self.lo, self.period)
        return flat.reshape(arr.shape)


@nb.njit(nogil=True, cache=True)
def _wrap1(v, lo, period):
    hi = lo + period
    if v >= lo and v < hi:
        return v
    r = (v - lo) - period * np.floor((v - lo) / period)
    if r < 0.0:
        r += period
    y = lo + r
    if y >= hi or y < lo:
        y = lo
    return y


@nb.njit(nogil=True, cache=True)
def _wrap_inplace(a, lo, period):
    for i in range(a.shape[0]):
        a[i] = _wrap1(a[i], lo, period)


@nb.njit(nogil=True, cache=True)
def _bspline3(t):
    t = abs(t)
    if t < 1.0:
        return 2.0 / 3.0 - t * t + 0.5 * t * t * t
    if t < 2.0:
        s = 2.0 - t
        return s * s * s / 6.0
    return 0.0


@nb.njit(nogil=True, cache=True)
def _tab_value(coef, res, lo, period, x):
    h = period / res
    d = x.shape[0]
    if d == 1:
        u = (x[0] - lo) / h
        j0 = int(np.floor(u))
        s = 0.0
        for j in range(j0 - 1, j0 + 3):
            s += coef[j % res] * _bspline3(u - j)
        return s
    u = (x[0] - lo) / h
    v = (x[1] - lo) / h
    i0 = int(np.floor(u))
    j0 = int(np.floor(v))
    s = 0.0
    for i in range(i0 - 1, i0 + 3):
        wi = _bspline3(u - i)
        ii = i % res
        for j in range(j0 - 1, j0 + 3):
            s += wi * _bspline3(v - j) * coef[ii * res + (j % res)]
    return s


@nb.njit(nogil=True, cache=True)
def raw_value(code, params, coef, res, lo, period, x):
    """Potential at ``x`` without wrapping (tabulated kinds are periodic anyway)."""
    d = x.shape[0]
    s = 0.0
    if code == DOUBLE_WELL:
        c = params[0]
        for i in range(d):
            t = x[i] * x[i] - c
            s += t * t / 80.0
    elif code == SINE_MODES:
        amp, freq, shift = params[0], params[1], params[2]
        for i in range(d):
            t = np.sin(freq * (x[i] - shift))
            s += amp * t * t
    elif code == POLYNOMIAL:
        for i in range(d):
            acc = 0.0
            for k in range(params.shape[0] - 1, -1, -1):
                acc = acc * x[i] + params[k]
            s += acc
    elif code == COSINE_WELL:
        amp, freq = params[0], params[1]
        for i in range(d):
            s += 0.5 * amp * (1.0 - np.cos(freq * x[i]))
    else:
        s = _tab_value(coef, res, lo, period, x)
    return s


@nb.njit(nogil=True, cache=True)
def raw_grad(code, params, coef, res, lo, period, x, out):
    d = x.shape[0]
    if code == DOUBLE_WELL:
        c = params[0]
        for i in range(d):
            out[i] = 4.0 * x[i] * (x[i] * x[i] - c) / 80.0
    elif code == SINE_MODES:
        amp, freq, shift = params[0], params[1], params[2]
        for i in range(d):
            out[i] = amp * freq * np.sin(2.0 * freq * (x[i] - shift))
    elif code == POLYNOMIAL:
        n = params.shape[0]
        for i in range(d):
            acc = 0.0
            for k in range(n - 1, 0, -1):
                acc = acc * x[i] + k * params[k]
            out[i] = acc
    elif code == COSINE_WELL:
        amp, freq = params[0], params[1]
        for i in range(d):
            out[i] = 0.5 * amp * freq * np.sin(freq * x[i])
    else:
        h = period / _TAB_FD_DIVISIONS
        y = x.copy()
        for i in range(d):
            xi = x[i]
            y[i] = xi + 2 * h
            f2p = _tab_value(coef, res, lo, period, y)
            y[i] = xi + h
            f1p = _tab_value(coef, res, lo, period, y)
            y[i] = xi - h
            f1m = _tab_value(coef, res, lo, period, y)
            y[i] = xi - 2 * h
            f2m = _tab_value(coef, res, lo, period, y)
            y[i] = xi
            out[i] = (-f2p + 8.0 * f1p - 8.0 * f1m + f2m) / (12.0 * h)


@nb.njit(nogil=True, cache=True)
def wrapped_value(code, params, coef, res, lo, period, x, buf):
    for i in range(x.shape[0]):
        buf[i] = _wrap1(x[i], lo, period)
    return raw_value(code, params, coef, res, lo, period, buf)


@nb.njit(nogil=True, cache=True)
def wrapped_grad(code, params, coef, res, lo, period, x, buf, out):
    for i in range(x.shape[0]):
        buf[i] = _wrap1(x[i], lo, period)
    raw_grad(code, params, coef, res, lo, period, buf, out)


@nb.njit(nogil=True, cache=True)
def _values_many(code, params, coef, res, lo, period, X, wrap, out):
    buf = np.empty(X.shape[1])
    for n in range(X.shape[0]):
        if wrap:
            out[n] = wrapped_value(code, params, coef, res, lo, period, X[n], buf)
        else:
            out[n] = raw_value(code, params, coef, res, lo, period, X[n])


@nb.njit(nogil=True, cache=True)
def _grads_many(code, params, coef, res, lo, period, X, out):
    buf = np.empty(X.shape[1])
    for n in range(X.shape[0]):
        wrapped_grad(code, params, coef, res, lo, period, X[n], buf, out[n])


@nb.njit(nogil=True, cache=True)
def _min_hessian_eig(code, params, coef, res, lo, period, X, h, out):
    d = X.shape[1]
    y = np.empty(d)
    H = np.empty((d, d))
    for n in range(X.shape[0]):
        for i in range(d):
            y[i] = X[n, i]
        f0 = raw_value(code, params, coef, res, lo, period, y)
        for i in range(d):
            y[i] += h
            fp = raw_value(code, params, coef, res, lo, period, y)
            y[i] -= 2 * h
            fm = raw_value(code, params, coef, res, lo, period, y)
            y[i] += h
            H[i, i] = (fp - 2.0 * f0 + fm) / (h * h)
            for j in range(i + 1, d):
                y[i] += h
                y[j] += h
                fpp = raw_value(code, params, coef, res, lo, period, y)
                y[j] -= 2 * h
                fpm = raw_value(code, params, coef, res, lo, period, y)
                y[i] -= 2 * h
                fmm = raw_value(code, params, coef, res, lo, period, y)
                y[j] += 2 * h
                fmp = raw_value(code, params, coef, res, lo, period, y)
                y[i] += h
                y[j] -= h
                H[i, j] = (fpp - fpm - fmp + fmm) / (4.0 * h * h)
                H[j, i] = H[i, j]
        if d == 1:
            out[n] = H[0, 0]
        elif d == 2:
            a, b, c = H[0, 0], H[0, 1], H[1, 1]
            out[n] = 0.5 * (a + c) - np.sqrt(0.25 * (a - c) ** 2 + b * b)
        else:
            out[n] = np.linalg.eigvalsh(H)[0]


@dataclass
class ExtremaScan:
    F_min: float
    F_max: float
    kappa: float
    minimizers: np.ndarray
    maximizers: np.ndarray
    # 1D only: alpha = 1/sqrt(|F''|) at each entry of minimizers / maximizers, nan on cusps
    alpha_min: np.ndarray
    alpha_max: np.ndarray
    resolution: int


@dataclass(eq=False)
class PotentialSpec:
    """A Gibbs potential on a torus.

    Use the module-level constructors (:func:`double_well_1d`, ...) rather than
    building one directly.
    """

    kind: str
    domain: TorusDomain
    params: np.ndarray
    coef: np.ndarray = field(default_factory=lambda: np.zeros(1))
    res: int = 1
    _scans: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in KIND_CODES:
            raise ConfigError(f"unknown potential kind {self.kind!r}", key="potential.kind")
        self.params = np.ascontiguousarray(self.params, dtype=float)
        self.coef = np.ascontiguousarray(self.coef, dtype=float)

    @property
    def code(self):
        return KIND_CODES[self.kind]

    @property
    def dim(self):
        return self.domain.dim

    def kernel_args(self):
        """Positional arguments shared by every compiled potential routine."""
        return (self.code, self.params, self.coef, self.res, self.domain.lo, self.domain.period)

    def _points(self, x):
        X = np.array(x, dtype=float)
        single = X.ndim <= 1 and X.size == self.dim
        X = np.ascontiguousarray(X.reshape(-1, self.dim))
        if not np.all(np.isfinite(X)):
            raise DomainError("potential evaluated at a non-finite point")
        return X, single

    def value(self, x):
        """F(wrap(x)) for a point of shape (dim,) or points of shape (n, dim)."""
        X, single = self._points(x)
        out = np.empty(X.shape[0])
        _values_many(*self.kernel_args(), X, True, out)
        return float(out[0]) if single else out

    def raw(self, x):
        """F(x) without wrapping; the smooth interior extension of analytic kinds."""
        X, single = self._points(x)
        out = np.empty(X.shape[0])
        _values_many(*self.kernel_args(), X, False, out)
        return float(out[0]) if single else out

    def grad(self, x):
        X, single = self._points(x)
        out = np.empty_like(X)
        _grads_many(*self.kernel_args(), X, out)
        return out[0] if single else out

    def scan(self, resolution=1024):
        if resolution not in self._scans:
            self._scans[resolution] = scan_extrema_curvature(self, resolution)
        return self._scans[resolution]

    @property
    def F_min(self):
        return self.scan().F_min

    @property
    def F_max(self):
        return self.scan().F_max

    @property
    def kappa(self):
        return self.scan().kappa

    def describe(self):
        d = {"kind": self.kind, "dim": self.dim, "period": self.domain.period, "lo": self.domain.lo}
        if self.kind == "double_well_1d":
            d["c"] = float(self.params[0])
        elif self.kind == "custom_polynomial":
            d["coeffs"] = [float(v) for v in self.params]
        elif self.kind == "cosine_well_1d":
            d["A"] = float(self.params[0])
        elif self.kind == "sine_modes_2d":
            d["amplitude"], d["frequency"], d["shift"] = (float(v) for v in self.params)
        else:
            d["resolution"] = self.res
        return d


def double_well_1d(c, period=2 * np.pi):
    """F(x) = (x^2 - c)^2 / 80."""
    return PotentialSpec("double_well_1d", TorusDomain(1, period), np.array([float(c)]))


def sine_modes_2d(amplitude=2.0, shift=0.1, period=2.0, dim=2):
    """F(x) = amplitude * sum_i sin^2(2 pi (x_i - shift)); 16 wells on [-1, 1)^2."""
    return PotentialSpec(
        "sine_modes_2d", TorusDomain(dim, period), np.array([amplitude, 2 * np.pi, shift])
    )


def cosine_well_1d(A=1.0, period=2 * np.pi):
    """F(x) = (A/2)(1 - cos 2x): minima at 0 and +-pi, barriers of height A at +-pi/2."""
    return PotentialSpec("cosine_well_1d", TorusDomain(1, period), np.array([float(A), 2.0]))


def custom_polynomial(coeffs, dim=1, period=2 * np.pi):
    """F(x) = sum_i sum_k coeffs[k] * x_i**k (ascending powers, summed over axes)."""
    coeffs = np.atleast_1d(np.asarray(coeffs, dtype=float))
    if coeffs.size == 0 or not np.all(np.isfinite(coeffs)):
        raise ConfigError("polynomial coefficients must be finite and non-empty", key="potential.coeffs")
    return PotentialSpec("custom_polynomial", TorusDomain(dim, period), coeffs)


def tabulated_grid(values, period):
    """Periodic cubic-spline interpolant of F sampled at nodes ``lo + k * period / res``."""
    values = np.asarray(values, dtype=float)
    if values.ndim not in (1, 2) or (values.ndim == 2 and values.shape[0] != values.shape[1]):
        raise ConfigError("tabulated potentials must be 1D or square 2D grids", key="potential.grid_file")
    if not np.all(np.isfinite(values)):
        raise ConfigError("tabulated potential has non-finite values", key="potential.grid_file")
    res = values.shape[0]
    if res < 4:
        raise ConfigError("tabulated potential needs at least 4 nodes per axis", key="potential.grid_file")
    coef = ndimage.spline_filter(values, order=3, mode="grid-wrap")
    return PotentialSpec(
        "tabulated_grid", TorusDomain(values.ndim, period), np.zeros(1), coef.reshape(-1), res
    )


def load_grid_file(path):
    """Read a grid file: header line ``dim,resolution,period`` then row-major F values.

    The values are either text (comma or whitespace separated) or raw
    little-endian float64 bytes.
    """
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", errors="replace").strip()
        body = fh.read()
    try:
        dim_s, res_s, period_s = header.split(",")
        dim, res, period = int(dim_s), int(res_s), float(period_s)
    except ValueError as exc:
        raise ConfigError(f"bad grid header {header!r}", key="potential.grid_file") from exc
    n = res**dim
    try:
        values = np.array(body.decode("ascii").replace(",", " ").split(), dtype=float)
    except (UnicodeDecodeError, ValueError):
        values = None
    if (values is None or values.size != n) and len(body) == 8 * n:
        values = np.frombuffer(body, dtype="<f8").astype(float)
    if values is None or values.size != n:
        got = "unparseable" if values is None else values.size
        raise ConfigError(f"grid file has {got} values, expected {res}**{dim}", key="potential.grid_file")
    return tabulated_grid(values.reshape((res,) * dim), period)


def eval_potential(p, x):
    return p.value(x)


def eval_grad(p, x):
    return p.grad(x)


def _grid_nodes(domain, resolution):
    h = domain.period / resolution
    axis = domain.lo + h * np.arange(resolution)
    mesh = np.meshgrid(*([axis] * domain.dim), indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1), h


def _local_extrema(F, shape, sign):
    """Indices of periodic-grid local minima (sign=+1) or maxima (sign=-1)."""
    G = sign * F.reshape(shape)
    is_ext = np.ones(shape, dtype=bool)
    strict = np.zeros(shape, dtype=bool)
    for ax in range(len(shape)):
        for step in (1, -1):
            nb_ = np.roll(G, step, axis=ax)
            is_ext &= G <= nb_
            strict |= G < nb_
    return np.flatnonzero(is_ext & strict)


def _polish(p, x0, h, sign):
    """Refine a grid extremum of sign*F inside the canonical cell."""
    lo, hi = p.domain.lo, p.domain.hi
    bounds = [(max(lo, v - h), min(hi, v + h)) for v in x0]
    fun = lambda y: sign * p.raw(y)
    if p.dim == 1:
        r = optimize.minimize_scalar(lambda t: fun([t]), bounds=bounds[0], method="bounded",
                                     options={"xatol": 1e-12})
        return np.array([r.x]), sign * r.fun
    r = optimize.minimize(fun, x0, method="L-BFGS-B", bounds=bounds, options={"ftol": 1e-15, "gtol": 1e-12})
    return r.x, sign * r.fun


def scan_extrema_curvature(p, resolution=1024):
    """Dense grid scan for F_min, F_max, min Hessian eigenvalue and local extrema.

    Curvature uses central differences of the unwrapped potential, so the
    seam of a non-periodic analytic potential does not register as a kink.
    """
    if resolution < 64:
        raise ConfigError(f"scan resolution must be >= 64, got {resolution}", key="scan.resolution")
    if resolution**p.dim > 2**24:
        raise ConfigError("scan grid too large for this dimension", key="scan.resolution")
    X, h = _grid_nodes(p.domain, resolution)
    F = p.raw(X)
    shape = (resolution,) * p.dim

    i_min, i_max = int(np.argmin(F)), int(np.argmax(F))
    F_min, F_max = float(F[i_min]), float(F[i_max])
    if F_max > F_min:
        _, f = _polish(p, X[i_min], h, +1)
        F_min = min(F_min, f)
        _, f = _polish(p, X[i_max], h, -1)
        F_max = max(F_max, f)

    curv = np.empty(X.shape[0])
    _min_hessian_eig(*p.kernel_args(), X, h, curv)
    kappa = float(curv.min())

    minimizers = _refine_all(p, X, _local_extrema(F, shape, +1), h, +1)
    maximizers = _refine_all(p, X, _local_extrema(F, shape, -1), h, -1)
    if p.dim == 1:
        alpha_min = _alphas(p, minimizers, +1)
        alpha_max = _alphas(p, maximizers, -1)
    else:
        alpha_min = alpha_max = np.empty(0)
    return ExtremaScan(F_min, F_max, kappa, minimizers, maximizers, alpha_min, alpha_max, resolution)


def _refine_all(p, X, idx, h, sign):
    pts = [_polish(p, X[i], h, sign)[0] for i in idx]
    return np.array(pts).reshape(-1, p.dim)


def _alphas(p, pts, sign):
    if pts.size == 0:
        return np.empty(0)
    step = 1e-4 * p.domain.period
    out = []
    for x in pts[:, 0]:
        f2 = (p.raw([x + step]) - 2 * p.raw([x]) + p.raw([x - step])) / step**2
        # a seam cusp can have the wrong curvature sign for its extremum type
        out.append(1.0 / math.sqrt(sign * f2) if sign * f2 > 0 else np.nan)
    return np.array(out)
