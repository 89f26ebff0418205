"""Experiments over (p, eps) grids: the commuting diagram and value/minimizer convergence.

Matrix convention: ``values[i][j]`` is the normalized minimum
``(min sum |T| |grad u|_eps^p)^(1/p)`` for ``p_list[i]`` and ``eps_list[j]``.
The edges hold the p = 1 row (3D TV), the eps = 0 column (planar p-problem)
and the corner (planar TV).
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .discretization import BoundaryData, NodalField, ScalingParams
from .mesh import TriMesh, extrude, lumped_masses
from .onelaplace import PDOptions, solve_tv
from .plaplace import PSolveOptions, solve_p

log = logging.getLogger(__name__)


def worker_count():
    try:
        n = int(os.environ.get("THINLAP_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else min(4, os.cpu_count() or 1)


@dataclass
class DiagramOptions:
    p_opts: PSolveOptions = field(default_factory=PSolveOptions)
    pd_opts: PDOptions = field(default_factory=PDOptions)
    workers: int | None = None
    deterministic: bool = True


@dataclass
class CellResult:
    value: float
    converged: bool
    runtime_ms: float
    error: str = ""


@dataclass
class DiagramReport:
    p_list: list
    eps_list: list
    values: list                 # [p][eps]
    converged: list
    runtimes_ms: list
    tv_eps: list                 # m[1][eps]
    tv_eps_converged: list
    p_planar: list               # m[p][0]
    p_planar_converged: list
    tv_planar: float             # m[1][0]
    tv_planar_converged: bool
    edge_runtimes_ms: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    @property
    def corner(self):
        return self.tv_planar

    @property
    def commutation_defect(self):
        return abs(self.values[-1][-1] - self.tv_planar)

    @property
    def eps_path_defect(self):
        """``|m[1][eps_min] - m[1][0]|``: dimension reduction along the p = 1 row."""
        return abs(self.tv_eps[-1] - self.tv_planar)

    @property
    def p_path_defect(self):
        """``|m[p_min][0] - m[1][0]|``: p -> 1 along the planar column."""
        return abs(self.p_planar[-1] - self.tv_planar)

    def relative(self, defect):
        return defect / abs(self.tv_planar) if self.tv_planar else defect

    @property
    def all_converged(self):
        return (all(all(r) for r in self.converged) and all(self.tv_eps_converged)
                and all(self.p_planar_converged) and self.tv_planar_converged)

    def to_json(self):
        return {
            "p_list": self.p_list,
            "eps_list": self.eps_list,
            "values": self.values,
            "edges": {
                "p1_row": self.tv_eps,
                "eps0_column": self.p_planar,
                "corner": self.tv_planar,
                "converged": {
                    "interior": self.converged,
                    "p1_row": self.tv_eps_converged,
                    "eps0_column": self.p_planar_converged,
                    "corner": self.tv_planar_converged,
                },
            },
            "defects": {
                "commutation": self.commutation_defect,
                "eps_path": self.eps_path_defect,
                "p_path": self.p_path_defect,
                "commutation_relative": self.relative(self.commutation_defect),
                "eps_path_relative": self.relative(self.eps_path_defect),
                "p_path_relative": self.relative(self.p_path_defect),
            },
            "runtimes_ms": self.runtimes_ms,
            "edge_runtimes_ms": self.edge_runtimes_ms,
            "errors": self.errors,
        }

    def csv_rows(self):
        rows = []
        for i, p in enumerate(self.p_list):
            for j, eps in enumerate(self.eps_list):
                rows.append((p, eps, self.values[i][j], self.converged[i][j], self.runtimes_ms[i][j]))
        rt = self.edge_runtimes_ms
        for j, eps in enumerate(self.eps_list):
            rows.append((1.0, eps, self.tv_eps[j], self.tv_eps_converged[j], rt.get(f"tv_eps_{j}", 0)))
        for i, p in enumerate(self.p_list):
            rows.append((p, 0.0, self.p_planar[i], self.p_planar_converged[i], rt.get(f"p_planar_{i}", 0)))
        rows.append((1.0, 0.0, self.tv_planar, self.tv_planar_converged, rt.get("tv_planar", 0)))
        return rows

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["p", "eps", "value", "converged", "runtime_ms"])
            for p, eps, v, c, ms in self.csv_rows():
                w.writerow([repr(float(p)), repr(float(eps)), repr(float(v)), int(bool(c)), int(round(ms))])

    def write(self, directory, stem="diagram"):
        os.makedirs(directory, exist_ok=True)
        self.write_json(os.path.join(directory, f"{stem}.json"))
        self.write_csv(os.path.join(directory, f"{stem}.csv"))


# --------------------------------------------------------------------------
# jobs (module level so that they pickle for the process pool)


def _job_p(mesh, u0, p, scaling, p_opts):
    t = time.perf_counter()
    try:
        sol = solve_p(mesh, u0, p, scaling, replace(p_opts, p=p))
        return CellResult(sol.energy, sol.converged, 1e3 * (time.perf_counter() - t), sol.message)
    except Exception as exc:
        return CellResult(math.nan, False, 1e3 * (time.perf_counter() - t), repr(exc))


def _job_tv(mesh, u0, scaling, pd_opts):
    t = time.perf_counter()
    try:
        sol = solve_tv(mesh, u0, scaling, pd_opts)
        return CellResult(sol.primal, sol.converged, 1e3 * (time.perf_counter() - t))
    except Exception as exc:
        return CellResult(math.nan, False, 1e3 * (time.perf_counter() - t), repr(exc))


def _check_lists(p_list, eps_list):
    if not p_list or any(not 1 < p < 2 for p in p_list) or any(b >= a for a, b in zip(p_list, p_list[1:])):
        raise ValueError("p_list must be non-empty, strictly decreasing, inside (1, 2)")
    if not eps_list or any(not 0 < e <= 1 for e in eps_list) or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be non-empty, strictly decreasing, inside (0, 1]")


def run_diagram(base: TriMesh, n_layers: int, u0: BoundaryData, p_list, eps_list,
                opts: DiagramOptions | None = None) -> DiagramReport:
    """Fill the (p, eps) matrix plus its p = 1 row, eps = 0 column and corner."""
    opts = opts or DiagramOptions()
    p_list = [float(p) for p in p_list]
    eps_list = [float(e) for e in eps_list]
    _check_lists(p_list, eps_list)
    cyl = extrude(base, n_layers)
    planar = ScalingParams.planar()

    jobs = {}
    for i, p in enumerate(p_list):
        for j, eps in enumerate(eps_list):
            jobs[("int", i, j)] = (_job_p, (cyl, u0, p, ScalingParams.thin(eps), opts.p_opts))
        jobs[("p_planar", i)] = (_job_p, (base, u0, p, planar, opts.p_opts))
    for j, eps in enumerate(eps_list):
        jobs[("tv_eps", j)] = (_job_tv, (cyl, u0, ScalingParams.thin(eps), opts.pd_opts))
    jobs[("tv_planar",)] = (_job_tv, (base, u0, planar, opts.pd_opts))

    workers = opts.workers or worker_count()
    results = {}
    if workers <= 1:
        for key, (fn, args) in jobs.items():
            results[key] = fn(*args)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {key: pool.submit(fn, *args) for key, (fn, args) in jobs.items()}
            for key in jobs:
                results[key] = futures[key].result()

    def ms(r):
        return 0.0 if opts.deterministic else r.runtime_ms

    np_, ne = len(p_list), len(eps_list)
    inter = [[results[("int", i, j)] for j in range(ne)] for i in range(np_)]
    tv_eps = [results[("tv_eps", j)] for j in range(ne)]
    p_pl = [results[("p_planar", i)] for i in range(np_)]
    corner = results[("tv_planar",)]
    edge_rt = {f"tv_eps_{j}": ms(r) for j, r in enumerate(tv_eps)}
    edge_rt.update({f"p_planar_{i}": ms(r) for i, r in enumerate(p_pl)})
    edge_rt["tv_planar"] = ms(corner)
    errors = {"/".join(map(str, k)): r.error for k, r in results.items() if r.error}
    return DiagramReport(
        p_list=p_list,
        eps_list=eps_list,
        values=[[r.value for r in row] for row in inter],
        converged=[[r.converged for r in row] for row in inter],
        runtimes_ms=[[ms(r) for r in row] for row in inter],
        tv_eps=[r.value for r in tv_eps],
        tv_eps_converged=[r.converged for r in tv_eps],
        p_planar=[r.value for r in p_pl],
        p_planar_converged=[r.converged for r in p_pl],
        tv_planar=corner.value,
        tv_planar_converged=corner.converged,
        edge_runtimes_ms=edge_rt,
        errors=errors,
    )


# --------------------------------------------------------------------------
# value and minimizer convergence as p -> 1


@dataclass
class GammaRow:
    level: int
    p: float
    min_fp: float
    min_f1: float
    difference: float


def gamma_value_check(meshes, u0: BoundaryData, p_list, p_opts: PSolveOptions | None = None,
                      pd_opts: PDOptions | None = None, slack=0.10):
    """``|min F_p - min F_1|`` on each planar mesh; returns ``(rows, trend_ok)``.

    ``trend_ok`` tells whether the difference is non-increasing as p decreases
    (within ``slack``) on the finest mesh.
    """
    if len(meshes) < 2:
        raise ValueError("need at least two refinement levels")
    p_list = [float(p) for p in p_list]
    _check_lists(p_list, [1.0])
    planar = ScalingParams.planar()
    p_opts = p_opts or PSolveOptions()
    rows = []
    for level, mesh in enumerate(meshes):
        f1 = solve_tv(mesh, u0, planar, pd_opts).primal
        warm = None
        for p in p_list:
            sol = solve_p(mesh, u0, p, planar, replace(p_opts, p=p), initial=warm)
            warm = sol.u
            rows.append(GammaRow(level, p, sol.energy, f1, abs(sol.energy - f1)))
    finest = [r.difference for r in rows if r.level == len(meshes) - 1]
    trend_ok = all(b <= a * (1 + slack) + 1e-12 for a, b in zip(finest, finest[1:]))
    return rows, trend_ok


@dataclass
class MinimizerRow:
    label: str
    p_from: float
    p_to: float
    l1_distance: float


def _l1(a: NodalField, b: NodalField):
    return float(lumped_masses(a.mesh) @ np.abs(a.values - b.values))


def minimizer_convergence(mesh, u0: BoundaryData, p_list, scaling: ScalingParams | None = None,
                          p_opts: PSolveOptions | None = None, pd_opts: PDOptions | None = None):
    """L1 distances between successive p-minimizers and from the last one to the TV minimizer."""
    p_list = [float(p) for p in p_list]
    _check_lists(p_list, [1.0])
    scaling = scaling or ScalingParams.planar()
    p_opts = p_opts or PSolveOptions()
    sols, warm = [], None
    for p in p_list:
        sol = solve_p(mesh, u0, p, scaling, replace(p_opts, p=p), initial=warm)
        warm = sol.u
        sols.append(sol)
    rows = [MinimizerRow("successive", a.p, b.p, _l1(a.u, b.u)) for a, b in zip(sols, sols[1:])]
    tv = solve_tv(mesh, u0, scaling, pd_opts)
    rows.append(MinimizerRow("to_tv", sols[-1].p, 1.0, _l1(sols[-1].u, tv.u)))
    return rows


def write_rows_csv(rows, path):
    if not rows:
        return
    names = list(rows[0].__dataclass_fields__)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(r, n) for n in names)])
