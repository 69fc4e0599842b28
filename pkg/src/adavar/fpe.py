"""Explicit conservative finite-volume solver for the Fokker-Planck equation

    d rho / dt = div( rho grad H + grad(D rho) )

on a periodic grid. The diffusion flux is the central difference of D*rho
between neighbouring cells, the drift flux is upwinded on the sign of grad H
at the face, and each update is a telescoping flux difference, so mass is
conserved to roundoff.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .gibbs import GridMesh

__all__ = ["FpeState", "FpeOperator", "fpe_step", "fpe_solve"]


@dataclass
class FpeState:
    mesh: GridMesh
    rho: np.ndarray
    time: float = 0.0
    clipped: int = 0

    @property
    def masses(self):
        return self.rho * self.mesh.cell_volume

    def mass(self):
        return float(np.sum(self.rho) * self.mesh.cell_volume)


class FpeOperator:
    """Cell/face coefficients of one dynamics on one mesh."""

    def __init__(self, dyn, mesh):
        if mesh.domain != dyn.potential.domain:
            raise ConfigError("mesh and dynamics live on different domains", key="mesh")
        if mesh.domain.dim > 2:
            raise ConfigError("the FPE oracle supports dimension 1 and 2 only", key="mesh")
        self.mesh = mesh
        self.dyn = dyn
        centers = mesh.centers()
        self.D = dyn.diffusion(centers).reshape(mesh.shape)
        self.velocity = []
        for ax in range(mesh.domain.dim):
            if dyn.kind == "derivative_free":
                self.velocity.append(None)
                continue
            faces = centers.copy()
            faces[:, ax] += 0.5 * mesh.h
            self.velocity.append(dyn.grad_h(faces)[:, ax].reshape(mesh.shape))

    def dt_max(self):
        """Largest admissible explicit step: 0.4 h^2 / (2 d max D) and 0.4 h / (d max |grad H|)."""
        h, d = self.mesh.h, self.mesh.domain.dim
        dt = 0.4 * h * h / (2.0 * d * float(np.max(self.D)))
        vmax = max((float(np.max(np.abs(v))) for v in self.velocity if v is not None), default=0.0)
        if vmax > 0:
            dt = min(dt, 0.4 * h / (d * vmax))
        return dt

    def rhs(self, rho):
        h = self.mesh.h
        Drho = self.D * rho
        out = np.zeros_like(rho)
        for ax, v in enumerate(self.velocity):
            G = (np.roll(Drho, -1, axis=ax) - Drho) / h
            if v is not None:
                up = np.where(v > 0, np.roll(rho, -1, axis=ax), rho)
                G += up * v
            out += (G - np.roll(G, 1, axis=ax)) / h
        return out


def _operator(dyn, mesh, cache={}):
    key = (id(dyn), mesh)
    op = cache.get(key)
    if op is None or op.dyn is not dyn:
        op = cache[key] = FpeOperator(dyn, mesh)
        if len(cache) > 32:
            cache.pop(next(iter(cache)))
    return op


def _advance(op, state, dt):
    rho = state.rho.reshape(op.mesh.shape) + dt * op.rhs(state.rho.reshape(op.mesh.shape))
    clipped = state.clipped
    if np.any(rho < 0):
        neg = rho < 0
        clipped += int(neg.sum())
        rho[neg] = 0.0
        rho /= rho.sum() * op.mesh.cell_volume
    return FpeState(op.mesh, rho.reshape(-1), state.time + dt, clipped)


def fpe_step(dyn, s, dt):
    """One explicit step. Raises ConfigError when dt exceeds the stability bound."""
    op = _operator(dyn, s.mesh)
    limit = op.dt_max()
    if dt < 0 or dt > limit * (1 + 1e-12):
        raise ConfigError(f"dt={dt:.6g} violates the explicit stability bound; admissible dt <= {limit:.6g}",
                          key="dt")
    if dt == 0:
        return FpeState(s.mesh, s.rho.copy(), s.time, s.clipped)
    return _advance(op, s, dt)


def fpe_solve(dyn, rho0, t_final, snapshot_times=(), dt=None, mesh=None, callback=None):
    """March from ``rho0`` to ``t_final`` and return states at the requested times.

    ``rho0`` is an FpeState or a per-cell density on ``mesh``. Sub-steps use
    the stability-limited dt (or ``dt`` if smaller) and are shortened to land
    exactly on each snapshot time. ``callback(state)`` runs after every step.
    """
    if isinstance(rho0, FpeState):
        state = rho0
    else:
        if mesh is None:
            raise ConfigError("a mesh is required when rho0 is an array", key="mesh")
        state = FpeState(mesh, np.asarray(rho0, dtype=float).reshape(-1).copy(), 0.0)
    if np.any(state.rho < 0) or abs(state.mass() - 1.0) > 1e-10:
        raise ConfigError("initial density must be non-negative and normalised", key="rho0")
    if not t_final >= 0:
        raise ConfigError("t_final must be non-negative", key="t_final")
    times = sorted({float(t) for t in snapshot_times if 0 <= t <= t_final} | {float(t_final)})
    op = _operator(dyn, state.mesh)
    step = op.dt_max() if dt is None else min(dt, op.dt_max())
    t0 = state.time
    out = []
    for target in times:
        while state.time - t0 < target - 1e-12 * max(1.0, target):
            h = min(step, target - (state.time - t0))
            state = _advance(op, state, h)
            if callback is not None:
                callback(state)
        state = FpeState(state.mesh, state.rho, t0 + target, state.clipped)
        out.append(state)
    return out
