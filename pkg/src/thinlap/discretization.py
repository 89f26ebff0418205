"""P1 finite-element operators and energies on TriMesh / TetMesh.

All operators are built once per mesh and cached.  Gradients are constant
per cell.  The lateral boundary is split into facets: boundary edges in 2D,
and in 3D one rectangular panel per (boundary edge, layer) made of the two
lateral triangles of the prism, so that x3-independent fields see exactly
the planar boundary terms.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import TetMesh, TriMesh

# --------------------------------------------------------------------------
# field containers


@dataclass(eq=False)
class NodalField:
    """Piecewise-linear scalar field given by its vertex values."""

    mesh: TriMesh | TetMesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_vertices,):
            raise ValueError(f"expected {self.mesh.n_vertices} values, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite nodal value")

    @classmethod
    def interpolate(cls, mesh, func):
        """Nodal interpolant of ``func(points) -> values``."""
        return cls(mesh, func(mesh.points))


@dataclass(eq=False)
class CellVectorField:
    """One constant d-vector per cell."""

    mesh: TriMesh | TetMesh
    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=float)
        if self.vectors.ndim == 1:
            self.vectors = np.tile(self.vectors, (self.mesh.n_cells, 1))
        if self.vectors.shape != (self.mesh.n_cells, self.mesh.dim):
            raise ValueError(f"expected shape {(self.mesh.n_cells, self.mesh.dim)}, got {self.vectors.shape}")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("non-finite cell vector")


@dataclass(eq=False)
class BoundaryDual:
    """Outward boundary flux ``s_e`` (flux density times facet measure) per lateral facet."""

    mesh: TriMesh | TetMesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        n = len(lateral_facets(self.mesh).measures)
        if self.values.shape != (n,):
            raise ValueError(f"expected {n} facet values, got {self.values.shape}")

    @classmethod
    def from_flux(cls, mesh, sigma):
        """``s_e = |e| * sigma . nu_e`` for a constant vector ``sigma``."""
        fac = lateral_facets(mesh)
        return cls(mesh, fac.measures * (fac.normals @ np.asarray(sigma, dtype=float)))

    def project(self):
        """Clip every value to ``[-|e|, |e|]``."""
        m = lateral_facets(self.mesh).measures
        return BoundaryDual(self.mesh, np.clip(self.values, -m, m))


# --------------------------------------------------------------------------
# anisotropic scaling


@dataclass(frozen=True)
class ScalingParams:
    """Either the planar Euclidean norm or the thin-cylinder norm ``|(g1, g2, g3/eps)|``."""

    mode: str = "planar"
    eps: float = 1.0

    def __post_init__(self):
        if self.mode not in ("planar", "thin"):
            raise ValueError(f"unknown scaling mode {self.mode!r}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.mode == "thin" and self.eps > 1:
            raise ValueError("eps must lie in (0, 1]")

    @classmethod
    def planar(cls):
        return cls("planar", 1.0)

    @classmethod
    def thin(cls, eps):
        return cls("thin", float(eps))

    @property
    def dim(self):
        return 2 if self.mode == "planar" else 3

    @property
    def factors(self):
        """Diagonal of the map ``xi -> (xi_1, xi_2, xi_3/eps)``."""
        return np.ones(2) if self.mode == "planar" else np.array([1.0, 1.0, 1.0 / self.eps])

    def check_dim(self, d):
        if d != self.dim:
            raise ValueError(f"{self.mode} scaling needs {self.dim}-vectors, got dimension {d}")

    def __str__(self):
        return "planar" if self.mode == "planar" else f"thin(eps={self.eps:g})"


def scaled_norm(g, scaling: ScalingParams):
    """Anisotropic norm of one vector or of a stack of vectors (last axis)."""
    g = np.asarray(g, dtype=float)
    scaling.check_dim(g.shape[-1])
    out = np.linalg.norm(g * scaling.factors, axis=-1)
    return float(out) if out.ndim == 0 else out


def dual_norm(sigma, scaling: ScalingParams):
    """Dual of :func:`scaled_norm`: ``|(s1, s2, eps * s3)|``."""
    sigma = np.asarray(sigma, dtype=float)
    scaling.check_dim(sigma.shape[-1])
    out = np.linalg.norm(sigma / scaling.factors, axis=-1)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# boundary data

PROFILES = ("identity", "cubic", "ramp")


def profile_function(name, kappa=None):
    """Monotone profile ``g`` on [-1, 1]."""
    if name == "identity":
        return lambda t: np.asarray(t, dtype=float)
    if name == "cubic":
        return lambda t: np.asarray(t, dtype=float) ** 3
    if name == "ramp":
        if kappa is None or kappa <= 0:
            raise ValueError("ramp profile needs kappa > 0")
        return lambda t: np.clip(kappa * np.asarray(t, dtype=float), -1.0, 1.0)
    raise ValueError(f"unknown profile {name!r}")


@dataclass(frozen=True)
class BoundaryData:
    """Closed-form Dirichlet datum on the lateral boundary, independent of x3.

    ``kind`` is one of ``constant``, ``affine``, ``monotone_x1``, ``fourier``.
    """

    kind: str
    params: tuple

    @classmethod
    def constant(cls, c):
        return cls("constant", (float(c),))

    @classmethod
    def affine(cls, a, b, c):
        return cls("affine", (float(a), float(b), float(c)))

    @classmethod
    def monotone_x1(cls, profile, kappa=None):
        profile_function(profile, kappa)
        return cls("monotone_x1", (profile, None if kappa is None else float(kappa)))

    @classmethod
    def fourier(cls, a=(0.0,), b=()):
        """``a[0] + sum_k a[k] cos(k theta) + b[k-1] sin(k theta)``."""
        return cls("fourier", (tuple(float(x) for x in a), tuple(float(x) for x in b)))

    def __call__(self, points):
        x = np.asarray(points, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        if self.kind == "constant":
            return np.full(x1.shape, self.params[0])
        if self.kind == "affine":
            a, b, c = self.params
            return a + b * x1 + c * x2
        if self.kind == "monotone_x1":
            return profile_function(*self.params)(x1)
        if self.kind == "fourier":
            a, b = self.params
            theta = np.arctan2(x2, x1)
            out = np.full(x1.shape, a[0] if a else 0.0)
            for k, ak in enumerate(a[1:], start=1):
                out = out + ak * np.cos(k * theta)
            for k, bk in enumerate(b, start=1):
                out = out + bk * np.sin(k * theta)
            return out
        raise ValueError(f"unknown boundary data kind {self.kind!r}")

    @classmethod
    def parse(cls, text):
        """Parse ``const:c``, ``affine:a,b,c``, ``mono:identity|cubic|ramp:k``,
        ``fourier:a0,a1,...[;b1,b2,...]``."""
        head, _, rest = text.partition(":")
        try:
            if head in ("const", "constant"):
                return cls.constant(float(rest))
            if head == "affine":
                a, b, c = (float(v) for v in rest.split(","))
                return cls.affine(a, b, c)
            if head in ("mono", "monotone_x1"):
                name, _, kappa = rest.partition(":")
                return cls.monotone_x1(name, float(kappa) if kappa else None)
            if head == "fourier":
                a, _, b = rest.partition(";")
                return cls.fourier([float(v) for v in a.split(",") if v],
                                   [float(v) for v in b.split(",") if v])
        except ValueError as exc:
            raise ValueError(f"bad boundary data {text!r}: {exc}") from None
        raise ValueError(f"unknown boundary data {text!r}")

    def __str__(self):
        if self.kind == "constant":
            return f"const:{self.params[0]:g}"
        if self.kind == "affine":
            return "affine:" + ",".join(f"{v:g}" for v in self.params)
        if self.kind == "monotone_x1":
            name, kappa = self.params
            return f"mono:{name}" + (f":{kappa:g}" if kappa is not None else "")
        a, b = self.params
        return "fourier:" + ",".join(f"{v:g}" for v in a) + (";" + ",".join(f"{v:g}" for v in b) if b else "")


# --------------------------------------------------------------------------
# cached operators


@dataclass(frozen=True, eq=False)
class LateralFacets:
    trace: sp.csr_matrix     # (F, N): exact mean of a P1 field over each facet
    measures: np.ndarray
    normals: np.ndarray
    centroids: np.ndarray


@dataclass(frozen=True, eq=False)
class Operators:
    grad: sp.csr_matrix      # (C*d, N), row c*d + k is d/dx_k on cell c
    measures: np.ndarray
    facets: LateralFacets


_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _barycentric_gradients(points, cells):
    x = points[cells]
    jac = (x[:, 1:] - x[:, :1]).transpose(0, 2, 1)      # (C, d, d), columns x_k - x_0
    g = np.empty(x.shape)
    g[:, 1:] = np.linalg.inv(jac)                       # row k-1 is grad lambda_k
    g[:, 0] = -g[:, 1:].sum(axis=1)
    return g


def _lateral_facets(mesh):
    if isinstance(mesh, TriMesh):
        edges = mesh.boundary_edges
        f = len(edges)
        trace = sp.csr_matrix((np.full(2 * f, 0.5), (np.repeat(np.arange(f), 2), edges.ravel())),
                              shape=(f, mesh.n_vertices))
        return LateralFacets(trace, mesh.edge_lengths, mesh.edge_normals, mesh.lateral_centroids)
    tris = mesh.boundary_faces[mesh.face_tags == 0]
    areas = mesh.face_areas[mesh.face_tags == 0]
    normals = mesh.face_normals[mesh.face_tags == 0]
    f = len(tris) // 2
    # two consecutive lateral triangles form one panel
    w = np.repeat(areas / 3.0, 3)
    rows = np.repeat(np.arange(f), 6)
    panel_area = areas[0::2] + areas[1::2]
    trace = sp.csr_matrix((w / np.repeat(panel_area, 6), (rows, tris.ravel())),
                          shape=(f, mesh.n_vertices))
    trace.sum_duplicates()
    tri_centroids = mesh.vertices[tris].mean(axis=1)
    centroids = 0.5 * (tri_centroids[0::2] + tri_centroids[1::2])
    return LateralFacets(trace.tocsr(), panel_area, normals[0::2], centroids)


def operators(mesh) -> Operators:
    ops = _CACHE.get(mesh)
    if ops is None:
        g = _barycentric_gradients(mesh.points, mesh.cells)
        c, n1, d = g.shape
        rows = (np.arange(c)[:, None, None] * d + np.arange(d)[None, None, :]).repeat(n1, axis=1)
        cols = np.broadcast_to(mesh.cells[:, :, None], g.shape)
        grad = sp.csr_matrix((g.ravel(), (rows.ravel(), cols.ravel())), shape=(c * d, mesh.n_vertices))
        ops = Operators(grad, mesh.cell_measures, _lateral_facets(mesh))
        _CACHE[mesh] = ops
    return ops


def lateral_facets(mesh) -> LateralFacets:
    return operators(mesh).facets


def scaled_gradient_matrix(mesh, scaling: ScalingParams):
    """Sparse map from nodal values to per-cell scaled gradients, flattened."""
    scaling.check_dim(mesh.dim)
    fac = np.tile(scaling.factors, mesh.n_cells)
    return sp.diags(fac) @ operators(mesh).grad


def boundary_values(mesh, u0: BoundaryData):
    """``u0`` at lateral facet centroids (midpoint rule)."""
    return u0(lateral_facets(mesh).centroids)


def _sum(x):
    return math.fsum(np.asarray(x).ravel())


# --------------------------------------------------------------------------
# public operations


def cell_gradients(u: NodalField) -> CellVectorField:
    g = operators(u.mesh).grad @ u.values
    return CellVectorField(u.mesh, g.reshape(-1, u.mesh.dim))


def energy_p(u: NodalField, p: float, scaling: ScalingParams, normalized: bool = False) -> float:
    """``sum |T| |grad u|_eps^p``, or its ``1/p`` power when ``normalized``."""
    if not p > 1:
        raise ValueError("energy_p needs p > 1")
    norms = scaled_norm(cell_gradients(u).vectors, scaling)
    e = _sum(operators(u.mesh).measures * norms ** p)
    return e ** (1.0 / p) if normalized else e


def total_variation(u: NodalField, scaling: ScalingParams) -> float:
    norms = scaled_norm(cell_gradients(u).vectors, scaling)
    return _sum(operators(u.mesh).measures * norms)


def boundary_penalty(u: NodalField, u0: BoundaryData) -> float:
    fac = lateral_facets(u.mesh)
    return _sum(fac.measures * np.abs(fac.trace @ u.values - u0(fac.centroids)))


def energy_tv(u: NodalField, u0: BoundaryData, scaling: ScalingParams) -> float:
    """Relaxed total variation: anisotropic TV plus ``|u - u0|`` on the lateral boundary."""
    return total_variation(u, scaling) + boundary_penalty(u, u0)


def divergence_nodal(sigma: CellVectorField, s: BoundaryDual) -> np.ndarray:
    """Nodal vector ``G^T (|T| sigma) - B^T s``; zero iff sigma is discretely
    divergence-free with outward boundary flux ``s``."""
    ops = operators(sigma.mesh)
    weighted = (ops.measures[:, None] * sigma.vectors).ravel()
    return ops.grad.T @ weighted - ops.facets.trace.T @ s.values


def divergence_residual(sigma: CellVectorField, s: BoundaryDual, scaling: ScalingParams | None = None) -> float:
    """Max-norm of :func:`divergence_nodal`.

    ``sigma`` is the physical flux paired with the unscaled gradient, so the
    residual does not depend on ``scaling``; the argument only validates the
    dimension.
    """
    if scaling is not None:
        scaling.check_dim(sigma.mesh.dim)
    r = divergence_nodal(sigma, s)
    return float(np.abs(r).max()) if r.size else 0.0


def pairing_check(u: NodalField, sigma: CellVectorField, scaling: ScalingParams) -> float:
    """Extremality defect ``sum |T| (|grad u|_eps + sigma . grad u)``.

    Non-negative whenever ``dual_norm(sigma) <= 1`` cell-wise, and zero iff
    ``-sigma . Du = |Du|_eps`` on every cell.
    """
    g = cell_gradients(u).vectors
    local = scaled_norm(g, scaling) + np.einsum("ij,ij->i", sigma.vectors, g)
    return _sum(operators(u.mesh).measures * local)
