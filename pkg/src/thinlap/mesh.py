"""Simplicial meshes of the cross-section and of the rescaled cylinder.

Triangulations of the cross-section (unit disk or unit square) are built
from a coarse seed by uniform red refinement.  The cylinder
``omega x (-1/2, 1/2)`` is obtained by extruding a triangulation into
prisms and cutting every prism into three tetrahedra.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LATERAL, TOP, BOTTOM = 0, 1, 2
FACE_TAGS = {LATERAL: "lateral", TOP: "top", BOTTOM: "bottom"}


def _simplex_measures(points, cells):
    x0 = points[cells[:, 0]]
    jac = np.stack([points[cells[:, k]] - x0 for k in range(1, cells.shape[1])], axis=-1)
    dim = cells.shape[1] - 1
    return np.linalg.det(jac) / (1.0 if dim == 1 else 2.0 if dim == 2 else 6.0)


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Triangulation of a planar cross-section.

    ``boundary_edges`` is ordered as one counter-clockwise loop, so the
    outward normal of edge ``(a, b)`` is the tangent rotated clockwise.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    domain_tag: str
    dim: int = field(default=2, init=False)

    @property
    def points(self):
        return self.vertices

    @property
    def cells(self):
        return self.triangles

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_cells(self):
        return len(self.triangles)

    @property
    def cell_measures(self):
        return _simplex_measures(self.vertices, self.triangles)

    @property
    def area(self):
        return float(self.cell_measures.sum())

    @property
    def edge_lengths(self):
        a, b = self.vertices[self.boundary_edges[:, 0]], self.vertices[self.boundary_edges[:, 1]]
        return np.linalg.norm(b - a, axis=1)

    @property
    def edge_normals(self):
        a, b = self.vertices[self.boundary_edges[:, 0]], self.vertices[self.boundary_edges[:, 1]]
        t = b - a
        return np.column_stack([t[:, 1], -t[:, 0]]) / np.linalg.norm(t, axis=1)[:, None]

    @property
    def perimeter(self):
        return float(self.edge_lengths.sum())

    # Uniform facet interface shared with TetMesh: the lateral boundary.
    @property
    def lateral_facets(self):
        return self.boundary_edges

    @property
    def lateral_measures(self):
        return self.edge_lengths

    @property
    def lateral_normals(self):
        return self.edge_normals

    @property
    def lateral_centroids(self):
        return self.vertices[self.boundary_edges].mean(axis=1)

    @property
    def dirichlet_vertices(self):
        return np.unique(self.boundary_edges)

    def check(self):
        """Raise ``ValueError`` if any structural invariant is violated."""
        if np.any(self.cell_measures <= 0):
            raise ValueError("triangle with non-positive signed area")
        e = self.boundary_edges
        if np.any(e[1:, 0] != e[:-1, 1]) or e[-1, 1] != e[0, 0]:
            raise ValueError("boundary edges do not form a closed loop")
        t = self.vertices[e[:, 1]] - self.vertices[e[:, 0]]
        ang = np.arctan2(t[:, 1], t[:, 0])
        turn = np.angle(np.exp(1j * (np.roll(ang, -1) - ang))).sum()
        if abs(turn - 2 * np.pi) > 1e-9:
            raise ValueError(f"boundary turning is {turn}, expected 2*pi")
        mid = self.lateral_centroids - self.vertices.mean(axis=0)
        if np.any(np.einsum("ij,ij->i", self.edge_normals, mid) <= 0):
            raise ValueError("boundary normal not outward")


@dataclass(frozen=True, eq=False)
class TetMesh:
    """Tetrahedral mesh of ``omega x (-1/2, 1/2)`` with tagged boundary faces."""

    vertices: np.ndarray
    tets: np.ndarray
    boundary_faces: np.ndarray
    face_tags: np.ndarray
    face_normals: np.ndarray
    n_layers: int
    base: TriMesh
    dim: int = field(default=3, init=False)

    @property
    def points(self):
        return self.vertices

    @property
    def cells(self):
        return self.tets

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_cells(self):
        return len(self.tets)

    @property
    def cell_measures(self):
        return _simplex_measures(self.vertices, self.tets)

    @property
    def volume(self):
        return float(self.cell_measures.sum())

    @property
    def face_areas(self):
        x = self.vertices[self.boundary_faces]
        return 0.5 * np.linalg.norm(np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), axis=1)

    @property
    def _lateral(self):
        return self.face_tags == LATERAL

    @property
    def lateral_facets(self):
        return self.boundary_faces[self._lateral]

    @property
    def lateral_measures(self):
        return self.face_areas[self._lateral]

    @property
    def lateral_normals(self):
        return self.face_normals[self._lateral]

    @property
    def lateral_centroids(self):
        return self.vertices[self.lateral_facets].mean(axis=1)

    @property
    def dirichlet_vertices(self):
        return np.unique(self.lateral_facets)

    def check(self):
        if np.any(self.cell_measures <= 0):
            raise ValueError("tetrahedron with non-positive volume")
        z = self.vertices[:, 2]
        if z.min() < -0.5 or z.max() > 0.5:
            raise ValueError("x3 outside [-1/2, 1/2]")
        n = self.face_normals
        lat = self.face_tags == LATERAL
        if np.any(np.abs(n[lat, 2]) > 1e-12):
            raise ValueError("lateral face normal has a vertical component")
        if np.any(n[self.face_tags == TOP] != (0.0, 0.0, 1.0)):
            raise ValueError("top face normal is not +e3")
        if np.any(n[self.face_tags == BOTTOM] != (0.0, 0.0, -1.0)):
            raise ValueError("bottom face normal is not -e3")
        if not np.allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-12):
            raise ValueError("face normals are not unit length")


def _red_refine(vertices, triangles, boundary_edges):
    """Split each triangle into four; midpoints numbered in first-seen edge order."""
    nv = len(vertices)
    edge_id = {}
    new_pts = []

    def midpoint(a, b):
        key = (a, b) if a < b else (b, a)
        idx = edge_id.get(key)
        if idx is None:
            idx = nv + len(new_pts)
            edge_id[key] = idx
            new_pts.append(0.5 * (vertices[a] + vertices[b]))
        return idx

    tris = []
    for a, b, c in triangles.tolist():
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        tris += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
    bnd = []
    for a, b in boundary_edges.tolist():
        m = edge_id[(a, b) if a < b else (b, a)]
        bnd += [(a, m), (m, b)]
    pts = np.vstack([vertices, np.array(new_pts)])
    return pts, np.array(tris, dtype=np.int64), np.array(bnd, dtype=np.int64)


def refine(mesh: TriMesh) -> TriMesh:
    """Uniform red refinement; on the disk, new boundary vertices go to the unit circle."""
    pts, tris, bnd = _red_refine(mesh.vertices, mesh.triangles, mesh.boundary_edges)
    if mesh.domain_tag == "disk":
        new_bnd = bnd[0::2, 1]
        pts[new_bnd] /= np.linalg.norm(pts[new_bnd], axis=1)[:, None]
    return TriMesh(pts, tris, bnd, mesh.domain_tag)


def disk_mesh(n_refine: int = 0) -> TriMesh:
    """Triangulation of the regular ``6 * 2**n_refine``-gon inscribed in the unit circle."""
    if n_refine < 0:
        raise ValueError("n_refine must be >= 0")
    ang = np.arange(6) * np.pi / 3
    pts = np.vstack([[0.0, 0.0], np.column_stack([np.cos(ang), np.sin(ang)])])
    tris = np.array([(0, 1 + k, 1 + (k + 1) % 6) for k in range(6)], dtype=np.int64)
    bnd = np.array([(1 + k, 1 + (k + 1) % 6) for k in range(6)], dtype=np.int64)
    mesh = TriMesh(pts, tris, bnd, "disk")
    for _ in range(n_refine):
        mesh = refine(mesh)
    return mesh


def rect_mesh(nx: int, ny: int) -> TriMesh:
    """Unit square cut into ``nx * ny`` cells, each split along its lower-left diagonal."""
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be >= 1")
    x, y = np.meshgrid(np.linspace(0.0, 1.0, nx + 1), np.linspace(0.0, 1.0, ny + 1))
    pts = np.column_stack([x.ravel(), y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            tris += [(a, b, c), (a, c, d)]
    loop = (
        [vid(i, 0) for i in range(nx)]
        + [vid(nx, j) for j in range(ny)]
        + [vid(i, ny) for i in range(nx, 0, -1)]
        + [vid(0, j) for j in range(ny, 0, -1)]
    )
    bnd = np.column_stack([loop, np.roll(loop, -1)])
    return TriMesh(pts, np.array(tris, dtype=np.int64), bnd.astype(np.int64), "rect")


def extrude(base: TriMesh, n_layers: int) -> TetMesh:
    """Extrude ``base`` over ``x3 in [-1/2, 1/2]`` with ``n_layers`` prism layers.

    Each prism is cut into three tetrahedra along the diagonals running from
    the lower-indexed bottom vertex to the higher-indexed top vertex, which
    makes neighbouring prisms share the same quad-face diagonals.
    """
    if n_layers < 1:
        raise ValueError("n_layers must be >= 1")
    nv = base.n_vertices
    z = np.linspace(-0.5, 0.5, n_layers + 1)
    pts = np.vstack([np.column_stack([base.vertices, np.full(nv, zk)]) for zk in z])

    tets = []
    for k in range(n_layers):
        lo, hi = k * nv, (k + 1) * nv
        for tri in base.triangles:
            v0, v1, v2 = np.sort(tri)
            tets += [
                (lo + v0, lo + v1, lo + v2, hi + v2),
                (lo + v0, lo + v1, hi + v1, hi + v2),
                (lo + v0, hi + v0, hi + v1, hi + v2),
            ]
    tets = np.array(tets, dtype=np.int64)
    neg = _simplex_measures(pts, tets) < 0
    tets[neg, 2], tets[neg, 3] = tets[neg, 3], tets[neg, 2].copy()

    faces, tags, normals = [], [], []
    for a, b in base.boundary_edges:
        lo_v, hi_v = min(a, b), max(a, b)
        for k in range(n_layers):
            lo, hi = k * nv, (k + 1) * nv
            # diagonal from bottom lo_v to top hi_v
            faces += [(lo + a, lo + b, hi + hi_v), (lo + lo_v, hi + a, hi + b)]
    lat_normals = np.repeat(np.column_stack([base.edge_normals, np.zeros(len(base.boundary_edges))]),
                            2 * n_layers, axis=0)
    normals.append(lat_normals)
    tags += [LATERAL] * len(faces)
    for tri in base.triangles:
        faces.append(tuple(n_layers * nv + tri))
        tags.append(TOP)
    for tri in base.triangles:
        faces.append(tuple(tri[::-1]))
        tags.append(BOTTOM)
    nt = base.n_cells
    normals.append(np.tile([0.0, 0.0, 1.0], (nt, 1)))
    normals.append(np.tile([0.0, 0.0, -1.0], (nt, 1)))
    return TetMesh(
        vertices=pts,
        tets=tets,
        boundary_faces=np.array(faces, dtype=np.int64),
        face_tags=np.array(tags, dtype=np.int8),
        face_normals=np.vstack(normals),
        n_layers=n_layers,
        base=base,
    )


def lumped_masses(mesh) -> np.ndarray:
    """Vertex masses: each cell's measure shared equally among its vertices."""
    m = np.repeat(mesh.cell_measures / (mesh.dim + 1), mesh.dim + 1)
    return np.bincount(mesh.cells.ravel(), weights=m, minlength=mesh.n_vertices)


def min_max_angles(mesh: TriMesh):
    """Smallest and largest interior angle (radians) over all triangles."""
    x = mesh.vertices[mesh.triangles]
    angles = []
    for i in range(3):
        u = x[:, (i + 1) % 3] - x[:, i]
        v = x[:, (i + 2) % 3] - x[:, i]
        cos = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        angles.append(np.arccos(np.clip(cos, -1, 1)))
    angles = np.concatenate(angles)
    return float(angles.min()), float(angles.max())
