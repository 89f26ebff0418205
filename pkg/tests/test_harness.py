import csv
import json

import numpy as np
import pytest

from thinlap.discretization import BoundaryData, NodalField, ScalingParams, energy_p
from thinlap.harness import (DiagramOptions, gamma_value_check, minimizer_convergence, run_diagram,
                             worker_count, write_rows_csv)
from thinlap.mesh import disk_mesh, extrude, refine
from thinlap.onelaplace import PDOptions
from thinlap.plaplace import PSolveOptions, harmonic_extension

X1 = BoundaryData.affine(0, 1, 0)
CUBIC = BoundaryData.monotone_x1("cubic")
LONG = PSolveOptions(max_outer=1000)


def test_affine_diagram_near_one():
    base = disk_mesh(3)
    rep = run_diagram(base, 2, X1, [1.004, 1.002], [0.5, 0.1], DiagramOptions(workers=1))
    assert rep.all_converged
    area = base.area
    assert area == pytest.approx(3.13263, abs=1e-5)
    entries = [v for row in rep.values for v in row] + rep.tv_eps + rep.p_planar + [rep.tv_planar]
    assert all(abs(v - area) <= 2e-2 for v in entries)
    assert rep.commutation_defect <= 2e-2


def test_affine_diagram_closed_form():
    # every problem is solved by x1, so F-values are area^(1/p) and the p = 1 values are the area
    base = disk_mesh(2)
    rep = run_diagram(base, 2, X1, [1.5, 1.2], [1.0, 0.2], DiagramOptions(workers=1))
    area = base.area
    for i, p in enumerate(rep.p_list):
        assert rep.p_planar[i] == pytest.approx(area ** (1 / p), rel=1e-9)
        for v in rep.values[i]:
            assert v == pytest.approx(area ** (1 / p), rel=1e-9)
    for v in rep.tv_eps + [rep.tv_planar]:
        assert v == pytest.approx(area, rel=2e-4)
    assert rep.p_path_defect == pytest.approx(abs(area ** (1 / 1.2) - rep.tv_planar), abs=1e-12)


def test_constant_diagram():
    rep = run_diagram(disk_mesh(2), 1, BoundaryData.constant(2.0), [1.5, 1.2], [0.5], DiagramOptions(workers=1))
    assert rep.all_converged
    assert all(v <= 1e-9 for row in rep.values for v in row)
    assert all(abs(v) <= 1e-4 for v in rep.tv_eps + rep.p_planar + [rep.tv_planar])


def test_report_schema_and_csv(tmp_path):
    rep = run_diagram(disk_mesh(2), 1, CUBIC, [1.5, 1.2], [0.5, 0.2], DiagramOptions(workers=2))
    rep.write(tmp_path)
    data = json.load(open(tmp_path / "diagram.json"))
    assert {"p_list", "eps_list", "values", "edges", "defects", "runtimes_ms"} <= set(data)
    assert np.shape(data["values"]) == (2, 2) and np.shape(data["runtimes_ms"]) == (2, 2)
    assert {"p1_row", "eps0_column", "corner"} <= set(data["edges"])
    assert {"commutation", "eps_path", "p_path"} <= set(data["defects"])
    assert all(v >= 0 for v in data["defects"].values())
    rows = list(csv.reader(open(tmp_path / "diagram.csv")))
    assert rows[0] == ["p", "eps", "value", "converged", "runtime_ms"]
    assert len(rows) == 1 + 4 + 2 + 2 + 1


def test_deterministic_csv_identical(tmp_path):
    a = run_diagram(disk_mesh(2), 1, CUBIC, [1.5, 1.2], [0.5], DiagramOptions(workers=1, deterministic=True))
    b = run_diagram(disk_mesh(2), 1, CUBIC, [1.5, 1.2], [0.5], DiagramOptions(workers=3, deterministic=True))
    a.write_csv(tmp_path / "a.csv")
    b.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_failures_are_recorded():
    rep = run_diagram(disk_mesh(2), 1, CUBIC, [1.5], [0.5],
                      DiagramOptions(pd_opts=PDOptions(max_iters=2), workers=1))
    assert not rep.tv_planar_converged and not rep.all_converged
    assert np.isfinite(rep.tv_planar)
    assert rep.converged[0][0]


def test_grid_validation():
    with pytest.raises(ValueError):
        run_diagram(disk_mesh(1), 1, X1, [1.1, 1.2], [0.5])
    with pytest.raises(ValueError):
        run_diagram(disk_mesh(1), 1, X1, [1.2], [0.1, 0.5])
    with pytest.raises(ValueError):
        run_diagram(disk_mesh(1), 1, X1, [1.0], [0.5])


def test_worker_count(monkeypatch):
    monkeypatch.setenv("THINLAP_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("THINLAP_THREADS", "junk")
    assert worker_count() >= 1


@pytest.mark.parametrize("mesh,scaling", [
    (disk_mesh(3), ScalingParams.planar()),
    (extrude(disk_mesh(2), 2), ScalingParams.thin(0.3)),
])
def test_energy_monotone_in_p_for_fixed_field(mesh, scaling):
    u = harmonic_extension(mesh, CUBIC, scaling)
    vol = mesh.cell_measures.sum()
    ps = [1.01, 1.05, 1.1, 1.2, 1.5, 2.0]
    norms = [(energy_p(u, p, scaling) / vol) ** (1 / p) for p in ps]
    assert all(b >= a * (1 - 1e-14) for a, b in zip(norms, norms[1:]))


def test_gamma_identity_closed_form():
    meshes = [disk_mesh(2), disk_mesh(3)]
    rows, ok = gamma_value_check(meshes, X1, [1.5, 1.2, 1.1])
    assert ok
    for r in rows:
        area = meshes[r.level].area
        assert r.difference == pytest.approx(abs(area ** (1 / r.p) - area), abs=2e-4 * area)


def test_gamma_cubic_trend():
    rows, ok = gamma_value_check([disk_mesh(3), disk_mesh(4)], CUBIC, [1.2, 1.1, 1.05])
    assert ok
    assert len(rows) == 6


def test_gamma_constant_zero():
    rows, ok = gamma_value_check([disk_mesh(1), refine(disk_mesh(1))], BoundaryData.constant(1.0), [1.5, 1.2])
    assert ok
    assert all(abs(r.difference) <= 1e-4 for r in rows)


def test_gamma_needs_two_levels():
    with pytest.raises(ValueError):
        gamma_value_check([disk_mesh(2)], X1, [1.5])


def test_minimizer_identity():
    rows = minimizer_convergence(disk_mesh(4), BoundaryData.monotone_x1("identity"), [1.5, 1.2, 1.1])
    assert all(r.l1_distance <= 2 * 1e-4 for r in rows)


def test_minimizer_cubic(tmp_path):
    rows = minimizer_convergence(disk_mesh(4), CUBIC, [1.2, 1.1, 1.05, 1.02, 1.01], p_opts=LONG)
    assert rows[-1].label == "to_tv"
    assert rows[-1].l1_distance <= 2e-2
    succ = [r.l1_distance for r in rows[:-1]]
    assert succ[-1] < succ[0]
    write_rows_csv(rows, tmp_path / "m.csv")
    data = list(csv.reader(open(tmp_path / "m.csv")))
    assert data[0] == ["label", "p_from", "p_to", "l1_distance"]
    assert len(data) == len(rows) + 1


def test_minimizer_constant():
    rows = minimizer_convergence(disk_mesh(3), BoundaryData.constant(-0.5), [1.5, 1.2])
    assert rows[0].l1_distance == 0.0
    assert rows[-1].l1_distance <= 1e-3
