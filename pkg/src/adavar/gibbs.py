"""Grid tabulation of the Gibbs target, histogram densities and divergences."""

import math
from dataclasses import dataclass

import numpy as np

from .domain import TorusDomain
from .errors import ConfigError, DomainError, MeshMismatchError

__all__ = [
    "GridMesh",
    "GibbsTable",
    "GridDensity",
    "tabulate_gibbs",
    "histogram_density",
    "kl_divergence",
    "chi2_divergence",
    "tv_distance",
    "sample_gibbs",
    "write_grid_csv",
]


@dataclass(frozen=True)
class GridMesh:
    domain: TorusDomain
    resolution: int

    def __post_init__(self):
        if int(self.resolution) != self.resolution or self.resolution < 16:
            raise ConfigError(f"mesh resolution must be an integer >= 16, got {self.resolution}",
                              key="mesh.resolution")
        object.__setattr__(self, "resolution", int(self.resolution))

    @property
    def h(self):
        return self.domain.period / self.resolution

    @property
    def cell_volume(self):
        return self.h ** self.domain.dim

    @property
    def n_cells(self):
        return self.resolution ** self.domain.dim

    @property
    def shape(self):
        return (self.resolution,) * self.domain.dim

    def axis_centers(self):
        return self.domain.lo + self.h * (np.arange(self.resolution) + 0.5)

    def centers(self):
        """Cell centres, shape (n_cells, dim), in row-major cell order."""
        axes = np.meshgrid(*([self.axis_centers()] * self.domain.dim), indexing="ij")
        return np.stack([a.reshape(-1) for a in axes], axis=1)

    def cell_index(self, positions):
        X = np.asarray(positions, dtype=float).reshape(-1, self.domain.dim)
        idx = np.floor((X - self.domain.lo) / self.h).astype(np.int64)
        np.clip(idx, 0, self.resolution - 1, out=idx)
        return np.ravel_multi_index(tuple(idx.T), self.shape)


@dataclass
class GibbsTable:
    mesh: GridMesh
    density: np.ndarray
    Z_G: float
    log_Z_G: float
    eps: float
    F: np.ndarray

    @property
    def masses(self):
        return self.density * self.mesh.cell_volume


@dataclass
class GridDensity:
    mesh: GridMesh
    mass: np.ndarray
    n_particles: int

    @property
    def masses(self):
        return self.mass


def tabulate_gibbs(p, eps, mesh):
    """Midpoint-rule table of exp(-F/eps) on ``mesh``.

    Exponentials are shifted by the grid minimum of F, so ``log_Z_G`` stays
    finite even when ``Z_G`` itself under- or overflows.
    """
    if not eps > 0:
        raise ConfigError(f"eps must be positive, got {eps}", key="eps")
    if mesh.domain != p.domain:
        raise MeshMismatchError("mesh and potential live on different domains")
    F = p.value(mesh.centers())
    shift = F.min()
    w = np.exp(-(F - shift) / eps)
    z_shifted = w.sum() * mesh.cell_volume
    log_z = np.log(z_shifted) - shift / eps
    density = w / z_shifted
    with np.errstate(over="ignore", under="ignore"):
        z = float(np.exp(log_z))
    return GibbsTable(mesh, density, z, float(log_z), float(eps), F)


def histogram_density(positions, mesh):
    """Per-cell fraction of particles. Accepts an EnsembleState or an (n, dim) array."""
    X = getattr(positions, "positions", positions)
    X = np.asarray(X, dtype=float).reshape(-1, mesh.domain.dim)
    n = X.shape[0]
    if n == 0:
        raise DomainError("cannot estimate a density from an empty ensemble")
    lo, hi = mesh.domain.lo, mesh.domain.hi
    if np.any(X < lo) or np.any(X >= hi):
        raise DomainError("positions must lie in the canonical cell")
    counts = np.bincount(mesh.cell_index(X), minlength=mesh.n_cells)
    return GridDensity(mesh, counts / n, n)


def _pair(q, g):
    if q.mesh != g.mesh:
        raise MeshMismatchError("divergence arguments are on different meshes")
    return np.asarray(q.masses, dtype=float), np.asarray(g.masses, dtype=float)


def kl_divergence(q, g):
    """sum q log(q / p) over cells with q > 0."""
    qm, pm = _pair(q, g)
    pos = qm > 0
    if np.any(pm[pos] == 0):
        return math.inf
    return float(np.sum(qm[pos] * np.log(qm[pos] / pm[pos])))


def chi2_divergence(q, g):
    qm, pm = _pair(q, g)
    # cells the target never reaches: infinite if q puts mass there, otherwise no contribution
    empty = pm == 0
    if np.any(qm[empty] > 0):
        return math.inf
    return float(np.sum((qm[~empty] - pm[~empty]) ** 2 / pm[~empty]))


def tv_distance(q, g):
    qm, pm = _pair(q, g)
    return float(0.5 * np.sum(np.abs(qm - pm)))


def sample_gibbs(p, eps, n, seed=0, batch=1 << 16):
    """Exact draws from exp(-F/eps) on the torus by uniform-proposal rejection."""
    rng = np.random.default_rng(seed)
    dom = p.domain
    f_min = p.F_min
    out = []
    have = 0
    while have < n:
        x = dom.lo + dom.period * rng.random((batch, dom.dim))
        accept = rng.random(batch) < np.exp(-(p.value(x) - f_min) / eps)
        out.append(x[accept])
        have += int(accept.sum())
    return dom.wrap(np.concatenate(out)[:n])


def write_grid_csv(path, mesh, values, t=None):
    """Write ``[t,]cell_index,center_x1[,center_x2],value`` rows with 17 significant digits."""
    centers = mesh.centers()
    dim = mesh.domain.dim
    cols = ["cell_index"] + [f"center_x{i + 1}" for i in range(dim)] + ["value"]
    if t is not None:
        cols = ["t"] + cols
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for i, (c, v) in enumerate(zip(centers, np.asarray(values))):
            row = [str(i)] + [f"{x:.17g}" for x in c] + [f"{v:.17g}"]
            if t is not None:
                row = [f"{t:.17g}"] + row
            fh.write(",".join(row) + "\n")
