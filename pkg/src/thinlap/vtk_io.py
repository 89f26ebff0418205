"""Legacy ASCII VTK output for P1 fields and per-cell vectors."""

from __future__ import annotations

import numpy as np

from .mesh import TetMesh

_TRIANGLE, _TETRA = 5, 10


def _fmt(a):
    return "\n".join(" ".join(repr(float(v)) for v in row) for row in np.atleast_2d(a))


def write_vtk(path, mesh, point_data=None, cell_data=None, title="thinlap"):
    """Write an unstructured grid.

    ``point_data`` maps names to vertex arrays, ``cell_data`` maps names to
    per-cell scalars ``(n_cells,)`` or vectors ``(n_cells, dim)``; 2D vectors
    are padded with a zero third component.
    """
    pts = np.asarray(mesh.points, dtype=float)
    if pts.shape[1] == 2:
        pts = np.column_stack([pts, np.zeros(len(pts))])
    cells = np.asarray(mesh.cells)
    ctype = _TETRA if isinstance(mesh, TetMesh) else _TRIANGLE
    k = cells.shape[1]
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {len(pts)} double", _fmt(pts),
             f"CELLS {len(cells)} {len(cells) * (k + 1)}",
             "\n".join(f"{k} " + " ".join(map(str, c)) for c in cells),
             f"CELL_TYPES {len(cells)}", "\n".join([str(ctype)] * len(cells))]
    if point_data:
        lines.append(f"POINT_DATA {len(pts)}")
        for name, vals in point_data.items():
            lines += _array(name, vals)
    if cell_data:
        lines.append(f"CELL_DATA {len(cells)}")
        for name, vals in cell_data.items():
            lines += _array(name, vals)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _array(name, vals):
    vals = np.asarray(vals, dtype=float)
    if vals.ndim == 1:
        return [f"SCALARS {name} double 1", "LOOKUP_TABLE default", "\n".join(repr(float(v)) for v in vals)]
    if vals.shape[1] == 2:
        vals = np.column_stack([vals, np.zeros(len(vals))])
    return [f"VECTORS {name} double", _fmt(vals)]
