import numpy as np
import pytest
from scipy.optimize import minimize

from thinlap.discretization import BoundaryData, NodalField, ScalingParams
from thinlap.mesh import disk_mesh, extrude, rect_mesh
from thinlap.plaplace import (KKT_TOL, PSolveOptions, comparison_check, harmonic_extension, kkt_residual,
                              solve_p)

from oracles import _p1_gradients

PLANAR = ScalingParams.planar()
X1 = BoundaryData.affine(0, 1, 0)
CUBIC = BoundaryData.monotone_x1("cubic")


@pytest.mark.parametrize("mesh,scaling", [
    (disk_mesh(3), PLANAR),
    (rect_mesh(4, 3), PLANAR),
    (extrude(disk_mesh(2), 2), ScalingParams.thin(0.3)),
])
@pytest.mark.parametrize("p", [2.0, 1.5, 1.1])
def test_affine_is_fixed_point(mesh, scaling, p):
    u0 = BoundaryData.affine(0.5, 1.0, -2.0)
    sol = solve_p(mesh, u0, p, scaling)
    assert sol.converged
    assert np.abs(sol.u.values - u0(mesh.points)).max() <= 1e-9
    assert sol.kkt_residual <= 1e-10


def test_constant_data():
    mesh = disk_mesh(3)
    sol = solve_p(mesh, BoundaryData.constant(1.7), 1.3, PLANAR)
    assert sol.converged
    assert np.allclose(sol.u.values, 1.7, atol=1e-12)
    assert sol.energy <= 1e-10


def test_fourier_cosine_is_x1():
    mesh = disk_mesh(4)
    sol = solve_p(mesh, BoundaryData.fourier([0.0, 1.0]), 1.1, PLANAR)
    assert sol.converged
    assert np.abs(sol.u.values - mesh.points[:, 0]).max() <= 5e-3


def test_kkt_residual_examples():
    mesh = disk_mesh(3)
    u = NodalField.interpolate(mesh, X1)
    assert kkt_residual(u, X1, 1.3, PLANAR) <= 1e-12
    rng = np.random.default_rng(0)
    v = u.values.copy()
    free = np.setdiff1d(np.arange(mesh.n_vertices), mesh.dirichlet_vertices)
    v[free] += 1e-2 * rng.standard_normal(len(free))
    assert kkt_residual(NodalField(mesh, v), X1, 1.3, PLANAR) > 1e-6
    sol = solve_p(mesh, CUBIC, 1.2, PLANAR)
    assert sol.converged and kkt_residual(sol.u, CUBIC, 1.2, PLANAR) <= KKT_TOL


def test_converged_contract():
    sol = solve_p(disk_mesh(3), CUBIC, 1.1, PLANAR)
    assert sol.converged
    assert sol.kkt_residual <= KKT_TOL
    assert (sol.history[-1][-2] - sol.history[-1][-1]) / sol.history[-1][-2] <= 1e-10


def test_not_converged_reported():
    sol = solve_p(disk_mesh(3), CUBIC, 1.05, PLANAR, PSolveOptions(p=1.05, max_outer=2))
    assert not sol.converged
    assert sol.message


@pytest.mark.parametrize("p", [1.5, 1.2, 1.05])
def test_energy_monotone_every_step(p):
    sol = solve_p(disk_mesh(3), CUBIC, p, PLANAR)
    for stage in sol.history:
        assert all(b <= a for a, b in zip(stage, stage[1:]))


def test_delta_consistency():
    sol = solve_p(disk_mesh(3), CUBIC, 1.2, PLANAR)
    gaps = np.abs(np.diff(sol.stage_energies))
    assert np.all(np.diff(gaps) < 0)


@pytest.mark.parametrize("mesh", [disk_mesh(3), rect_mesh(6, 6), extrude(disk_mesh(2), 2)])
@pytest.mark.parametrize("bc", ["mono:cubic", "fourier:0,0.5,0.3;0.2,-0.4", "mono:ramp:3"])
def test_maximum_principle(mesh, bc):
    u0 = BoundaryData.parse(bc)
    sc = PLANAR if mesh.dim == 2 else ScalingParams.thin(0.2)
    sol = solve_p(mesh, u0, 1.2, sc)
    b = u0(mesh.points[mesh.dirichlet_vertices])
    assert sol.u.values.min() >= b.min() - 1e-8
    assert sol.u.values.max() <= b.max() + 1e-8


def test_eps_independence():
    # The extruded planar minimizer is admissible in 3D with the same energy, so the
    # 3D minimum can only be lower; the tet splitting lets the discrete 3D minimizer
    # vary slightly in x3, and the vertical penalty 1/eps^2 drives that variation to 0.
    base = disk_mesh(3)
    cyl = extrude(base, 2)
    u2 = solve_p(base, CUBIC, 1.3, PLANAR)
    diffs = []
    for eps in (1.0, 0.1, 0.01):
        u3 = solve_p(cyl, CUBIC, 1.3, ScalingParams.thin(eps))
        assert u2.converged and u3.converged
        assert u3.energy <= u2.energy + 1e-12
        diffs.append(np.abs(u3.u.values - np.tile(u2.u.values, 3)).max())
    assert diffs[0] > diffs[1] > diffs[2]
    assert diffs[1] / diffs[2] >= 50          # O(eps^2)
    assert diffs[2] <= 2e-5


def test_comparison_principle():
    mesh = disk_mesh(3)
    lo = solve_p(mesh, X1, 1.5, PLANAR)
    hi = solve_p(mesh, BoundaryData.affine(1.0, 1.0, 0.0), 1.5, PLANAR)
    assert comparison_check(lo, hi)
    assert np.allclose(hi.u.values - lo.u.values, 1.0, atol=1e-9)
    assert comparison_check(lo, lo)
    # x1 + 0.1 (1 - cos 2 theta)/2 = x1 + 0.1 x2^2 on the circle, a non-negative bump
    bump = solve_p(mesh, BoundaryData.fourier([0.05, 1.0, -0.05]), 1.5, PLANAR)
    assert comparison_check(lo, bump)
    with pytest.raises(ValueError):
        comparison_check(lo, solve_p(disk_mesh(2), X1, 1.5, PLANAR))


def test_harmonic_extension_is_p2():
    mesh = disk_mesh(3)
    u0 = BoundaryData.fourier([0, 0.3, 0.7], [0.2])
    assert np.abs(harmonic_extension(mesh, u0, PLANAR).values - solve_p(mesh, u0, 2.0, PLANAR).u.values).max() <= 1e-8


def test_against_lbfgs():
    # independent minimization of the regularized energy with gradients from raw mesh arrays
    mesh = disk_mesh(2)
    p, delta = 1.5, 1e-5
    g, areas = _p1_gradients(mesh.vertices, mesh.triangles)
    fixed = mesh.dirichlet_vertices
    free = np.setdiff1d(np.arange(mesh.n_vertices), fixed)
    ub = CUBIC(mesh.vertices[fixed])

    def full(x):
        u = np.empty(mesh.n_vertices)
        u[fixed], u[free] = ub, x
        return u

    def fun(x):
        gu = (g @ full(x)).reshape(-1, 2)
        r = (gu ** 2).sum(axis=1) + delta ** 2
        e = areas @ r ** (p / 2)
        grad = g.T @ ((areas * p * r ** (p / 2 - 1))[:, None] * gu).ravel()
        return e, grad[free]

    res = minimize(fun, np.zeros(len(free)), jac=True, method="L-BFGS-B",
                   options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 10000})
    sol = solve_p(mesh, CUBIC, p, PLANAR)
    assert sol.converged
    assert np.abs(full(res.x) - sol.u.values).max() <= 1e-5
    assert sol.energy ** p == pytest.approx(res.fun, rel=1e-8)


def test_argument_validation():
    for p in (1.0, 0.9, 2.5):
        with pytest.raises(ValueError):
            solve_p(disk_mesh(1), X1, p, PLANAR)
    with pytest.raises(ValueError):
        PSolveOptions(delta_schedule=(1e-3, 1e-2))
    with pytest.raises(ValueError):
        solve_p(disk_mesh(1), X1, 1.5, ScalingParams.thin(0.5))
