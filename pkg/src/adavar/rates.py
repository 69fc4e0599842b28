"""Theoretical convergence-rate bounds and empirical decay-rate fits.

All exponentials of F/eps are handled as logarithms until the very end, so
reports stay finite for small eps; fields that genuinely overflow come out
as ``inf`` with their ``log_`` counterparts still usable.
"""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .dynamics import DynamicsSpec, build_dynamics
from .errors import ConfigError, FitError, ValidityError

__all__ = [
    "RateReport",
    "general_rate_bound",
    "langevin_rate_bound",
    "langevin_branches",
    "fit_decay_rate",
    "chi2_noise_floor",
    "default_constants",
]


def _exp(v):
    return math.exp(v) if v < 709.0 else math.inf


def default_constants(domain):
    """(C_PI, C_LSI) placeholders: the flat-torus Poincare constant and twice it."""
    c_pi = (domain.period / (2 * math.pi)) ** 2
    return c_pi, 2.0 * c_pi


@dataclass
class RateReport:
    kind: str
    eps: float
    lambda_eps: float
    lambda1: float
    lambda2: float
    D_min: float
    D_max: float
    log_D_min: float
    log_D_max: float
    C_PI: float
    C_LSI: float
    A2_bound: float
    log_A2_bound: float
    langevin_lambda: float
    kappa: float
    L: float
    F_min: float
    F_max: float
    general_simplified: float
    derivative_free_laplace: float

    def to_dict(self):
        return asdict(self)

    def to_json(self, **extra):
        d = self.to_dict()
        d.update(extra)
        return json.dumps(d, indent=2, default=float)

    @staticmethod
    def csv_header():
        return ",".join(RateReport.__dataclass_fields__)

    def csv_row(self):
        return ",".join(v if isinstance(v, str) else f"{v:.17g}" for v in asdict(self).values())


def general_rate_bound(p, w, C_PI=None, C_LSI=None, zg=None, energy_points=4097):
    """Rates lambda_1 (chi^2) and lambda_2 (KL) for the dynamics with weight ``w``.

    ``w`` may be a WeightGenerator or an already built DynamicsSpec. The
    minimum of f * exp(-F/eps) is taken over the energy range [F_min, F_max],
    since f depends on x only through F.
    """
    dyn = w if isinstance(w, DynamicsSpec) else build_dynamics(w, p, zg)
    eps = dyn.eps
    c_pi_default, c_lsi_default = default_constants(p.domain)
    C_PI = c_pi_default if C_PI is None else float(C_PI)
    C_LSI = c_lsi_default if C_LSI is None else float(C_LSI)
    if not (C_PI > 0 and C_LSI > 0):
        raise ConfigError("C_PI and C_LSI must be positive", key="rates.C_PI")

    scan = p.scan()
    f_min, f_max = scan.F_min, scan.F_max
    log_dmin, log_dmax = f_min / eps, f_max / eps

    ys = np.unique(np.concatenate([np.linspace(f_min, f_max, energy_points), [f_min, f_max]]))
    if dyn.kind == "derivative_free":
        log_weight_min = dyn.log_Z_G - math.log(p.domain.volume)
    else:
        gv = dyn.g(ys)
        if not np.all(np.isfinite(gv)) or np.any(gv <= 0):
            raise ValidityError("weight g must be positive on [F_min, F_max]")
        log_weight_min = float(np.min(np.log(gv) - ys / eps))

    log_lam = math.log(eps) + 2 * log_dmin - log_dmax + log_weight_min
    lam = _exp(log_lam)
    d = p.dim
    return RateReport(
        kind=dyn.kind,
        eps=eps,
        lambda_eps=lam,
        lambda1=lam / C_PI,
        lambda2=lam / C_LSI,
        D_min=_exp(log_dmin),
        D_max=_exp(log_dmax),
        log_D_min=log_dmin,
        log_D_max=log_dmax,
        C_PI=C_PI,
        C_LSI=C_LSI,
        A2_bound=_exp(log_dmax - log_dmin),
        log_A2_bound=log_dmax - log_dmin,
        langevin_lambda=langevin_rate_bound(p, eps),
        kappa=scan.kappa,
        L=p.domain.diam,
        F_min=f_min,
        F_max=f_max,
        general_simplified=eps * _exp(2 * (f_min - f_max) / eps),
        derivative_free_laplace=eps ** (1 + d / 2) * _exp((f_min - f_max) / eps),
    )


def langevin_branches(kappa, L, eps):
    """Both branches of the curvature-based Langevin rate, evaluated as written."""
    first = kappa
    expo = 1.0 - kappa * L * L / eps
    second = 0.0 if expo > 709 else 2 * eps / (L * L + L * L * math.exp(expo))
    return first, second


def langevin_rate_bound(p, eps, kappa=None, L=None):
    if not eps > 0:
        raise ConfigError("eps must be positive", key="eps")
    kappa = p.scan().kappa if kappa is None else kappa
    L = p.domain.diam if L is None else L
    first, second = langevin_branches(kappa, L, eps)
    return first if kappa * L * L >= eps else second


def chi2_noise_floor(n_cells, n_particles):
    """Expected chi^2 of a histogram of exact samples: (m - 1) / n."""
    return (n_cells - 1) / n_particles


def fit_decay_rate(series, floor=0.0, min_points=5):
    """Least-squares fit of log(divergence) against t over points above ``floor``.

    Returns ``{"rate", "intercept", "r_squared", "n_points"}`` with the rate
    as a positive decay constant.
    """
    arr = np.asarray(series, dtype=float).reshape(-1, 2)
    t, v = arr[:, 0], arr[:, 1]
    keep = np.isfinite(v) & (v > max(floor, 0.0))
    t, v = t[keep], v[keep]
    if t.size < min_points:
        raise FitError(f"only {t.size} points above the noise floor {floor:.3g}; need {min_points}")
    y = np.log(v)
    y0 = y[0]
    dy = y - y0
    tc = t - t.mean()
    stt = float(np.sum(tc * tc))
    if stt == 0:
        raise FitError("decay fit needs at least two distinct times")
    slope = float(np.sum(tc * dy)) / stt
    intercept = float(y0 + dy.mean() - slope * t.mean())
    resid = dy - (dy.mean() + slope * tc)
    ss_tot = float(np.sum((dy - dy.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return {"rate": 0.0 - slope, "intercept": intercept, "r_squared": r2, "n_points": int(t.size)}
