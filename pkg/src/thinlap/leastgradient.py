"""Least-gradient reference solutions on the unit disk.

For boundary data ``u0 = g(x1)`` with ``g`` non-decreasing, the boundary
points sharing a value are joined by vertical chords, and ``u* = g(x1)`` is
the function of least gradient.  The constant field ``sigma* = -e1`` is a
calibration: it is divergence free, has unit norm and satisfies
``-sigma* . grad u* = |grad u*|``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .discretization import (
    BoundaryData,
    BoundaryDual,
    CellVectorField,
    NodalField,
    ScalingParams,
    energy_tv,
    profile_function,
)
from .mesh import TetMesh, lumped_masses
from .onelaplace import certificate_check, dual_objective
from .plaplace import PSolveOptions, solve_p

log = logging.getLogger(__name__)


def strip_area(a):
    """Area of ``{|x1| < a}`` inside the unit disk, ``0 <= a <= 1``."""
    return 2.0 * (a * math.sqrt(1.0 - a * a) + math.asin(a))


@dataclass(frozen=True)
class LGReference:
    profile: str
    kappa: float | None
    tv_value: float

    @property
    def boundary_data(self):
        return BoundaryData.monotone_x1(self.profile, self.kappa)

    def __call__(self, points):
        return profile_function(self.profile, self.kappa)(np.asarray(points)[..., 0])

    def calibration(self, dim):
        sigma = np.zeros(dim)
        sigma[0] = -1.0
        return sigma


def lg_reference(profile: str, kappa: float | None = None) -> LGReference:
    """Closed-form reference ``u* = g(x1)`` and its total variation on the unit disk."""
    if profile == "identity":
        tv = math.pi
    elif profile == "cubic":
        # integral of 3 x1^2 over the disk
        tv = 3.0 * math.pi / 4.0
    elif profile == "ramp":
        if kappa is None or kappa <= 0:
            raise ValueError("ramp profile needs kappa > 0")
        tv = kappa * strip_area(min(1.0, 1.0 / kappa))
    else:
        raise ValueError(f"unknown profile {profile!r}")
    return LGReference(profile, None if kappa is None else float(kappa), tv)


def _is_disk(mesh):
    base = mesh.base if isinstance(mesh, TetMesh) else mesh
    return base.domain_tag == "disk"


def lg_interpolant(mesh, ref: LGReference) -> NodalField:
    return NodalField.interpolate(mesh, ref)


def lg_certificate(mesh, ref: LGReference, scaling: ScalingParams, tol: float):
    """Certificate report and ``(primal, dual)`` for the interpolant and constant calibration."""
    u = lg_interpolant(mesh, ref)
    sigma_vec = ref.calibration(mesh.dim)
    sigma = CellVectorField(mesh, sigma_vec)
    s = BoundaryDual.from_flux(mesh, sigma_vec)
    u0 = ref.boundary_data
    report = certificate_check(u, sigma, s, u0, scaling, tol)
    return report, energy_tv(u, u0, scaling), dual_objective(s, u0)


def lg_errors(u_h: NodalField, ref: LGReference):
    """``(sup_error, l1_error)`` of ``u_h`` against the interpolant of the reference.

    The L1 error uses lumped vertex masses, so it is an absolute integral over
    the (cross-section or cylinder) domain.
    """
    if not _is_disk(u_h.mesh):
        raise ValueError("least-gradient references are only available on disk meshes")
    diff = np.abs(u_h.values - ref(u_h.mesh.points))
    return float(diff.max()), float(lumped_masses(u_h.mesh) @ diff)


@dataclass
class StudyRow:
    p: float
    sup_error: float
    l1_error: float
    energy: float
    converged: bool = True
    error: str = ""


def p_to_1_study(mesh, profile, p_list, scaling: ScalingParams, kappa=None,
                 opts: PSolveOptions | None = None):
    """Solve the p-problem for each ``p`` (strictly decreasing in (1, 2)) and measure
    the distance to the least-gradient reference.  Solver failures are recorded per row."""
    p_list = [float(p) for p in p_list]
    if any(not 1 < p < 2 for p in p_list) or any(b >= a for a, b in zip(p_list, p_list[1:])):
        raise ValueError("p_list must be strictly decreasing inside (1, 2)")
    ref = lg_reference(profile, kappa)
    rows = []
    warm = None
    for p in p_list:
        o = replace(opts, p=p) if opts else PSolveOptions(p=p)
        try:
            sol = solve_p(mesh, ref.boundary_data, p, scaling, o, initial=warm)
        except Exception as exc:  # recorded, the study goes on
            log.exception("p=%g failed", p)
            rows.append(StudyRow(p, math.nan, math.nan, math.nan, False, str(exc)))
            continue
        warm = sol.u
        sup, l1 = lg_errors(sol.u, ref)
        rows.append(StudyRow(p, sup, l1, sol.energy, sol.converged, sol.message))
    return rows


def l1_non_increasing(rows, slack=0.10):
    """Whether ``l1_error`` never grows by more than ``slack`` (relative) from row to row."""
    errs = [r.l1_error for r in rows]
    return all(b <= a * (1.0 + slack) for a, b in zip(errs, errs[1:]))


def write_study_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p", "sup_error", "l1_error", "energy"])
        for r in rows:
            w.writerow([repr(r.p), repr(r.sup_error), repr(r.l1_error), repr(r.energy)])


def study_as_dicts(rows):
    return [asdict(r) for r in rows]


def monotone_along_rows(u: NodalField, tol=1e-6, digits=9):
    """Largest decrease of ``u`` along x1 on every horizontal vertex row (x2 and x3 fixed).

    Returns the worst violation (0 if ``u`` is non-decreasing in x1 up to ``tol``).
    """
    pts = u.mesh.points
    key = np.round(pts[:, 1:], digits)
    worst = 0.0
    _, groups = np.unique(key, axis=0, return_inverse=True)
    groups = groups.ravel()
    for gid in np.unique(groups):
        idx = np.flatnonzero(groups == gid)
        if len(idx) < 2:
            continue
        order = idx[np.argsort(pts[idx, 0])]
        drops = -np.diff(u.values[order])
        worst = max(worst, float(drops.max()))
    return worst if worst > tol else 0.0
