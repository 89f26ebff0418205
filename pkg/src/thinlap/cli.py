"""Command line: ``thinlap solve|diagram|lgtest``.

Exit codes: 0 converged, 3 solver did not converge (artifacts still written),
2 configuration error (nothing written).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field, replace

from .discretization import BoundaryData, ScalingParams, cell_gradients
from .harness import DiagramOptions, run_diagram
from .leastgradient import l1_non_increasing, lg_reference, p_to_1_study, write_study_csv
from .mesh import disk_mesh, extrude, rect_mesh
from .onelaplace import PDOptions, solve_tv
from .plaplace import PSolveOptions, solve_p
from .vtk_io import write_vtk

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED = 0, 2, 3

# keys accepted in a JSON config file; command-line flags use the same names
CONFIG_KEYS = ("domain", "layers", "p", "eps", "planar", "bc", "out", "deterministic",
               "max_iters", "gap_tol", "div_tol", "max_outer", "workers")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    subcommand: str
    domain: str = "disk:3"
    layers: int = 4
    p: list = field(default_factory=lambda: [1.5])
    eps: list = field(default_factory=list)   # empty means planar
    bc: str = "affine:0,1,0"
    out: str = "out"
    deterministic: bool = False
    max_iters: int | None = None
    gap_tol: float | None = None
    div_tol: float | None = None
    max_outer: int | None = None
    workers: int | None = None

    @property
    def planar(self):
        return not self.eps

    def echo(self):
        d = asdict(self)
        d["planar"] = self.planar
        return d


def _floats(value, key):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return [float(value)]
    if isinstance(value, list):
        items = value
    elif isinstance(value, str):
        items = [v for v in value.split(",") if v.strip()]
    else:
        raise ConfigError(f"{key}: expected number or comma-separated list")
    try:
        return [float(v) for v in items]
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: not a number list: {value!r}") from None


def _build_mesh(spec):
    kind, _, rest = spec.partition(":")
    try:
        if kind == "disk":
            n = int(rest)
            if not 0 <= n <= 7:
                raise ValueError
            return disk_mesh(n)
        if kind == "rect":
            nx, ny = (int(v) for v in rest.split(","))
            return rect_mesh(nx, ny)
    except (TypeError, ValueError):
        pass
    raise ConfigError(f"domain: expected disk:N or rect:NX,NY, got {spec!r}")


def _make_parser():
    ap = argparse.ArgumentParser(prog="thinlap", description="Thin-cylinder p-Laplace and total-variation solvers.")
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name in ("solve", "diagram", "lgtest"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat JSON file; command-line flags override it")
        sp.add_argument("--domain", help="disk:N (refinements) or rect:NX,NY")
        sp.add_argument("--layers", type=int, help="number of layers of the 3D cylinder")
        sp.add_argument("--p", help="exponent (solve) or comma-separated list")
        sp.add_argument("--eps", help="thinness parameter or comma-separated list")
        sp.add_argument("--planar", action="store_true", default=None, help="solve the 2D (eps = 0) problem")
        sp.add_argument("--bc", help="boundary data, e.g. affine:0,1,0  mono:cubic  mono:ramp:2  const:1")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--deterministic", action="store_true", default=None,
                        help="write zero runtimes so that reports are byte-reproducible")
        sp.add_argument("--max-iters", dest="max_iters", type=int, help="primal-dual iteration cap")
        sp.add_argument("--gap-tol", dest="gap_tol", type=float)
        sp.add_argument("--div-tol", dest="div_tol", type=float)
        sp.add_argument("--max-outer", dest="max_outer", type=int, help="Kacanov iteration cap")
        sp.add_argument("--workers", type=int)
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def parse_config(argv=None) -> RunConfig:
    """Merge the optional config file and flags and validate everything before any output."""
    ap = _make_parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as exc:
        raise ConfigError("invalid command line") if exc.code else exc
    merged = {}
    if ns.config:
        try:
            with open(ns.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config: cannot read {ns.config}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be an object")
        unknown = sorted(set(data) - set(CONFIG_KEYS))
        if unknown:
            raise ConfigError(f"config: unknown key {unknown[0]!r}")
        merged.update(data)
    for key in CONFIG_KEYS:
        v = getattr(ns, key, None)
        if v is not None:
            merged[key] = v
    cfg = RunConfig(ns.subcommand)
    if "domain" in merged:
        cfg.domain = str(merged["domain"])
    if "layers" in merged:
        cfg.layers = merged["layers"]
    if "p" in merged:
        cfg.p = _floats(merged["p"], "p")
    if "eps" in merged:
        cfg.eps = _floats(merged["eps"], "eps")
    if merged.get("planar"):
        cfg.eps = []
    for key in ("bc", "out"):
        if key in merged:
            setattr(cfg, key, str(merged[key]))
    cfg.deterministic = bool(merged.get("deterministic", False))
    for key in ("max_iters", "gap_tol", "div_tol", "max_outer", "workers"):
        if merged.get(key) is not None:
            setattr(cfg, key, merged[key])
    _validate(cfg)
    return cfg


def _validate(cfg):
    _build_mesh(cfg.domain)
    if not isinstance(cfg.layers, int) or cfg.layers < 1:
        raise ConfigError("layers: must be a positive integer")
    try:
        BoundaryData.parse(cfg.bc)
    except ValueError as exc:
        raise ConfigError(f"bc: {exc}") from None
    if not cfg.p:
        raise ConfigError("p: empty")
    if cfg.subcommand == "solve":
        if len(cfg.p) != 1:
            raise ConfigError("p: solve takes a single exponent")
        p = cfg.p[0]
        if not (p == 1.0 or 1.0 < p <= 2.0):
            raise ConfigError(f"p: must be 1 (total variation) or lie in (1, 2], got {p}")
        if len(cfg.eps) > 1:
            raise ConfigError("eps: solve takes a single value")
    else:
        if any(not 1.0 < p < 2.0 for p in cfg.p) or any(b >= a for a, b in zip(cfg.p, cfg.p[1:])):
            raise ConfigError("p: list must be strictly decreasing inside (1, 2)")
        if any(b >= a for a, b in zip(cfg.eps, cfg.eps[1:])):
            raise ConfigError("eps: list must be strictly decreasing")
    if any(not 0.0 < e <= 1.0 for e in cfg.eps):
        raise ConfigError("eps: values must lie in (0, 1]")
    if cfg.subcommand == "diagram" and not cfg.eps:
        raise ConfigError("eps: diagram needs an eps list")
    if cfg.subcommand == "lgtest":
        if not cfg.domain.startswith("disk"):
            raise ConfigError("domain: lgtest needs a disk domain")
        bc = BoundaryData.parse(cfg.bc)
        if bc.kind != "monotone_x1":
            raise ConfigError("bc: lgtest needs mono:<profile> data")
        if len(cfg.eps) > 1:
            raise ConfigError("eps: lgtest takes a single value")
    for key in ("max_iters", "max_outer", "workers"):
        v = getattr(cfg, key)
        if v is not None and (not isinstance(v, int) or v < 1):
            raise ConfigError(f"{key}: must be a positive integer")
    for key in ("gap_tol", "div_tol"):
        v = getattr(cfg, key)
        if v is not None and not (isinstance(v, (int, float)) and v > 0):
            raise ConfigError(f"{key}: must be positive")


def _options(cfg):
    pd = PDOptions()
    pd = replace(pd, **{k: getattr(cfg, k) for k in ("max_iters", "gap_tol", "div_tol") if getattr(cfg, k) is not None})
    po = PSolveOptions()
    if cfg.max_outer is not None:
        po = replace(po, max_outer=cfg.max_outer)
    return po, pd


def _domain(cfg):
    base = _build_mesh(cfg.domain)
    if cfg.planar:
        return base, ScalingParams.planar()
    return extrude(base, cfg.layers), ScalingParams.thin(cfg.eps[0])


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, allow_nan=True)


def _run_solve(cfg, out):
    mesh, scaling = _domain(cfg)
    u0 = BoundaryData.parse(cfg.bc)
    p = cfg.p[0]
    p_opts, pd_opts = _options(cfg)
    t = time.perf_counter()
    report = {"p": p, "scaling": str(scaling), "n_vertices": mesh.n_vertices, "n_cells": mesh.n_cells}
    cell = {}
    if p == 1.0:
        sol = solve_tv(mesh, u0, scaling, pd_opts)
        report.update(energy=sol.primal, primal=sol.primal, dual=sol.dual, gap=sol.gap,
                      div_residual=sol.div_residual, certified_lower_bound=sol.certified_lower_bound,
                      iterations=sol.iters, converged=sol.converged)
        sol.write_trace(os.path.join(out, "trace.csv"))
        cell["sigma"] = sol.sigma.vectors
    else:
        sol = solve_p(mesh, u0, p, scaling, replace(p_opts, p=p))
        report.update(energy=sol.energy, kkt_residual=sol.kkt_residual, iterations=sol.outer_iters,
                      converged=sol.converged, message=sol.message)
    cell["grad_u"] = cell_gradients(sol.u).vectors
    report["runtime_ms"] = 0.0 if cfg.deterministic else 1e3 * (time.perf_counter() - t)
    _write_json(os.path.join(out, "report.json"), report)
    write_vtk(os.path.join(out, "solution.vtk"), mesh, {"u": sol.u.values}, cell)
    return report["converged"]


def _run_diagram(cfg, out):
    base = _build_mesh(cfg.domain)
    p_opts, pd_opts = _options(cfg)
    rep = run_diagram(base, cfg.layers, BoundaryData.parse(cfg.bc), cfg.p, cfg.eps,
                      DiagramOptions(p_opts, pd_opts, cfg.workers, cfg.deterministic))
    rep.write_json(os.path.join(out, "report.json"))
    rep.write_csv(os.path.join(out, "diagram.csv"))
    return rep.all_converged


def _run_lgtest(cfg, out):
    mesh, scaling = _domain(cfg)
    bc = BoundaryData.parse(cfg.bc)
    profile, kappa = bc.params
    p_opts, _ = _options(cfg)
    rows = p_to_1_study(mesh, profile, cfg.p, scaling, kappa, p_opts)
    write_study_csv(rows, os.path.join(out, "study.csv"))
    ref = lg_reference(profile, kappa)
    _write_json(os.path.join(out, "report.json"), {
        "profile": profile, "kappa": kappa, "tv_value": ref.tv_value, "scaling": str(scaling),
        "rows": [asdict(r) for r in rows], "l1_non_increasing": l1_non_increasing(rows),
        "converged": all(r.converged for r in rows),
    })
    return all(r.converged for r in rows)


def dispatch(cfg: RunConfig) -> int:
    os.makedirs(cfg.out, exist_ok=True)
    _write_json(os.path.join(cfg.out, "config.json"), cfg.echo())
    run = {"solve": _run_solve, "diagram": _run_diagram, "lgtest": _run_lgtest}[cfg.subcommand]
    return EXIT_OK if run(cfg, cfg.out) else EXIT_NOT_CONVERGED


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(level=logging.INFO if ("-v" in argv or "--verbose" in argv) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"thinlap: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return dispatch(cfg)


if __name__ == "__main__":
    sys.exit(main())
