import numpy as np
import pytest
from numpy.testing import assert_allclose

from conelab.errors import ConvergenceError, PositivityError
from conelab.mesh import build_mesh, second_difference
from conelab.newton import solve_log_density, symmetric_tridiagonal_solve


def test_symmetric_tridiagonal_solve_matches_dense(rng):
    n = 12
    off = rng.uniform(-1, 0, n - 1)
    diag = 1.0 + np.abs(np.r_[off, 0.0]) + np.abs(np.r_[0.0, off])
    rhs = rng.normal(size=n)

    dense = np.diag(diag) + np.diag(off, -1) + np.diag(off, 1)
    assert_allclose(symmetric_tridiagonal_solve(diag, off, rhs), np.linalg.solve(dense, rhs), rtol=1e-12)


def _planted(mesh, a, v_star):
    g = np.ones(mesh.n)
    base = g.copy()
    density = base + second_difference(mesh, v_star)
    b = v_star - a * np.log(density / g)
    return base, g, b


@pytest.mark.parametrize("a", [1e-3, 0.1, 1.0])
def test_planted_solution_recovered(a):
    mesh = build_mesh(-3.0, 3.0, 41)
    v_star = 0.1 * np.cos(mesh.nodes)
    base, g, b = _planted(mesh, a, v_star)
    result = solve_log_density(mesh, base, g, a, b, np.zeros(mesh.n), 1e-13, 50, 1e-14)
    assert_allclose(result.solution, v_star, atol=1e-10)
    assert result.residual <= 1e-13
    assert_allclose(result.density, base + second_difference(mesh, result.solution), atol=1e-12)
    assert_allclose(result.slopes, np.diff(result.solution) / mesh.spacing, atol=1e-10)


def test_slopes_and_increments_replace_nodal_differences():
    mesh = build_mesh(-3.0, 3.0, 41, grading=1.05)
    v_star = 0.1 * np.cos(mesh.nodes)
    base, g, b = _planted(mesh, 0.1, v_star)
    start = 0.05 * np.sin(mesh.nodes)
    plain = solve_log_density(mesh, base, g, 0.1, b, start, 1e-13, 50, 1e-14)
    given = solve_log_density(
        mesh,
        base,
        g,
        0.1,
        b,
        start,
        1e-13,
        50,
        1e-14,
        slopes0=np.diff(start) / mesh.spacing,
        b_increments=np.diff(b),
    )
    assert_allclose(given.solution, plain.solution, atol=1e-12)


def test_exact_start_returns_without_iterating():
    mesh = build_mesh(-3.0, 3.0, 41)
    v_star = 0.1 * np.cos(mesh.nodes)
    base, g, b = _planted(mesh, 0.5, v_star)
    result = solve_log_density(mesh, base, g, 0.5, b, v_star, 1e-10, 50, 1e-14)
    assert result.iterations == 0


def test_non_positive_start_is_replaced_by_its_mean():
    mesh = build_mesh(-3.0, 3.0, 41)
    v_star = 0.1 * np.cos(mesh.nodes)
    base, g, b = _planted(mesh, 0.5, v_star)
    start = -10.0 * mesh.nodes**2  # density 1 - 20 < 0
    result = solve_log_density(mesh, base, g, 0.5, b, start, 1e-13, 50, 1e-14)
    assert_allclose(result.solution, v_star, atol=1e-10)


def test_large_offset_never_returns_above_tolerance():
    # round-off at 1e6 sits far above tol
    mesh = build_mesh(-3.0, 3.0, 41)
    v_star = 1e6 + 0.1 * np.cos(mesh.nodes)
    base, g, b = _planted(mesh, 0.5, v_star)
    try:
        result = solve_log_density(mesh, base, g, 0.5, b, np.full(mesh.n, 1e6), 1e-13, 50, 1e-14)
    except ConvergenceError as e:
        assert e.residual > 1e-13
    else:
        assert result.residual <= 1e-13


def test_reference_density_below_floor():
    mesh = build_mesh(-3.0, 3.0, 41)
    base = np.ones(mesh.n)
    base[5] = 0.0
    with pytest.raises(PositivityError) as exc:
        solve_log_density(mesh, base, np.ones(mesh.n), 0.1, np.zeros(mesh.n), np.zeros(mesh.n), 1e-12, 10, 1e-14)
    assert exc.value.nodes == [5]


def test_iteration_budget():
    mesh = build_mesh(-3.0, 3.0, 41)
    v_star = 0.1 * np.cos(mesh.nodes)
    base, g, b = _planted(mesh, 1.0, v_star)
    with pytest.raises(ConvergenceError) as exc:
        solve_log_density(mesh, base, g, 1.0, b, np.zeros(mesh.n), 1e-13, 1, 1e-14)
    assert exc.value.iterations == 1
