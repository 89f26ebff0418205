"""Regularized Kacanov iteration for the p-Laplace problems, 1 < p <= 2.

The discrete energy

    E_delta(u) = sum_T |T| (|grad u|_eps^2 + delta^2)^(p/2)

is minimized over P1 fields equal to the interpolated datum at lateral
boundary vertices; top and bottom faces of the cylinder are left free.
Each outer step freezes the weights ``(|grad u|^2 + delta^2)^((p-2)/2)``
and solves the resulting weighted Laplace problem by preconditioned CG.
For p <= 2 this is a majorize-minimize step, the energy is additionally
safeguarded by step halving.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import (
    BoundaryData,
    NodalField,
    ScalingParams,
    energy_p,
    operators,
    scaled_gradient_matrix,
)

log = logging.getLogger(__name__)

KKT_TOL = 1e-7


@dataclass
class PSolveOptions:
    p: float = 1.5
    delta_schedule: tuple = (1e-2, 1e-3, 1e-4, 1e-5)
    max_outer: int = 200
    cg_tol: float = 1e-10
    energy_tol: float = 1e-10

    def __post_init__(self):
        check_p(self.p)
        d = np.asarray(self.delta_schedule, dtype=float)
        if d.size == 0 or np.any(d <= 0) or np.any(np.diff(d) >= 0):
            raise ValueError("delta_schedule must be positive and strictly decreasing")
        self.delta_schedule = tuple(float(x) for x in d)


@dataclass
class PSolution:
    u: NodalField
    energy: float
    kkt_residual: float
    outer_iters: int
    converged: bool
    p: float
    scaling: ScalingParams
    # regularized energy after every accepted outer step, one list per delta stage
    history: list = field(default_factory=list)
    stage_energies: list = field(default_factory=list)
    message: str = ""


def check_p(p):
    if not 1.0 < p <= 2.0:
        raise ValueError(f"p must lie in (1, 2], got {p}")


class _Problem:
    """Cached data of one (mesh, scaling, datum) triple."""

    def __init__(self, mesh, u0, scaling):
        scaling.check_dim(mesh.dim)
        self.mesh = mesh
        self.k = scaled_gradient_matrix(mesh, scaling).tocsr()
        self.kt = self.k.T.tocsr()
        self.d = mesh.dim
        self.measures = operators(mesh).measures
        n = mesh.n_vertices
        self.fixed = mesh.dirichlet_vertices
        mask = np.ones(n, dtype=bool)
        mask[self.fixed] = False
        self.free = np.flatnonzero(mask)
        self.u_fixed = u0(mesh.points[self.fixed])

    def sq_norms(self, u):
        g = (self.k @ u).reshape(-1, self.d)
        return np.einsum("ij,ij->i", g, g)

    def energy(self, u, p, delta):
        return math.fsum(self.measures * (self.sq_norms(u) + delta**2) ** (p / 2))

    def weights(self, u, p, delta):
        return (self.sq_norms(u) + delta**2) ** ((p - 2) / 2)

    def stiffness(self, w):
        return (self.kt @ sp.diags(np.repeat(self.measures * w, self.d)) @ self.k).tocsr()

    def residual(self, u, p, delta):
        w = self.weights(u, p, delta)
        return self.kt @ (np.repeat(self.measures * w, self.d) * (self.k @ u))

    def full(self, u_free):
        u = np.empty(self.mesh.n_vertices)
        u[self.fixed] = self.u_fixed
        u[self.free] = u_free
        return u


def _pcg(a, b, x0, tol):
    """Jacobi-preconditioned conjugate gradients (scipy) on the free block."""
    diag = a.diagonal()
    m = sp.diags(1.0 / diag)
    x, info = spla.cg(a, b, x0=x0, rtol=tol, atol=0.0, maxiter=20 * a.shape[0] + 100, M=m)
    if info != 0:
        log.warning("CG stopped without reaching rtol=%g (info=%d)", tol, info)
    return x


def _weighted_solve(prob, w, u, cg_tol):
    a = prob.stiffness(w)
    aff = a[prob.free][:, prob.free]
    afd = a[prob.free][:, prob.fixed]
    rhs = -(afd @ prob.u_fixed)
    return _pcg(aff, rhs, u[prob.free], cg_tol)


def harmonic_extension(mesh, u0: BoundaryData, scaling: ScalingParams, cg_tol=1e-12) -> NodalField:
    """Discrete (anisotropic) harmonic extension of the interpolated datum."""
    prob = _Problem(mesh, u0, scaling)
    u = prob.full(np.zeros(len(prob.free)))
    if len(prob.free):
        u[prob.free] = _weighted_solve(prob, np.ones(mesh.n_cells), u, cg_tol)
    return NodalField(mesh, u)


def kkt_residual(u: NodalField, u0: BoundaryData, p: float, scaling: ScalingParams,
                 delta: float = 1e-5) -> float:
    """Max-norm over free vertices of the weak-form residual of the regularized equation."""
    prob = _Problem(u.mesh, u0, scaling)
    if not len(prob.free):
        return 0.0
    r = prob.residual(u.values, p, delta)[prob.free]
    return float(np.abs(r).max())


def solve_p(mesh, u0: BoundaryData, p: float, scaling: ScalingParams,
            opts: PSolveOptions | None = None, initial: NodalField | None = None) -> PSolution:
    """Minimize the regularized p-energy by damped Kacanov steps with delta continuation."""
    check_p(p)
    opts = opts or PSolveOptions(p=p)
    prob = _Problem(mesh, u0, scaling)
    if initial is None:
        # the start is solved more tightly so that affine data (exact p-harmonic
        # for every p) is reproduced to round-off
        u = harmonic_extension(mesh, u0, scaling, min(opts.cg_tol, 1e-12)).values
    else:
        u = initial.values.copy()
        u[prob.fixed] = prob.u_fixed

    history, stage_energies = [], []
    iters = 0
    last_decrease = math.inf
    delta = opts.delta_schedule[-1]
    if not len(prob.free):
        last_decrease = 0.0
    for delta in opts.delta_schedule:
        if not len(prob.free):
            break
        e = prob.energy(u, p, delta)
        stage = [e]
        while iters < opts.max_outer:
            iters += 1
            w = prob.weights(u, p, delta)
            target = prob.full(_weighted_solve(prob, w, u, opts.cg_tol))
            step = target - u
            alpha, e_new = 1.0, prob.energy(target, p, delta)
            while e_new > e and alpha > 1e-8:
                alpha *= 0.5
                e_new = prob.energy(u + alpha * step, p, delta)
            if e_new > e:
                last_decrease = 0.0
                break
            u = u + alpha * step
            last_decrease = (e - e_new) / max(e, 1e-300)
            e = e_new
            stage.append(e)
            if last_decrease <= opts.energy_tol:
                if delta != opts.delta_schedule[-1]:
                    break
                if np.abs(prob.residual(u, p, delta)[prob.free]).max() <= KKT_TOL:
                    break
        history.append(stage)
        stage_energies.append(e)

    res = float(np.abs(prob.residual(u, p, delta)[prob.free]).max()) if len(prob.free) else 0.0
    converged = res <= KKT_TOL and last_decrease <= opts.energy_tol
    field_u = NodalField(mesh, u)
    msg = "" if converged else f"not converged: kkt={res:.3e}, last decrease={last_decrease:.3e}, iters={iters}"
    if msg:
        log.warning("solve_p(p=%g, %s): %s", p, scaling, msg)
    return PSolution(u=field_u, energy=energy_p(field_u, p, scaling, normalized=True),
                     kkt_residual=res, outer_iters=iters, converged=converged, p=p,
                     scaling=scaling, history=history, stage_energies=stage_energies, message=msg)


def comparison_check(u_low: PSolution, u_high: PSolution, tol: float = 1e-8) -> bool:
    """True iff ``u_low <= u_high + tol`` at every vertex."""
    if u_low.u.mesh is not u_high.u.mesh:
        raise ValueError("solutions live on different meshes")
    return bool(np.all(u_low.u.values <= u_high.u.values + tol))
