import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import expit

from conelab.errors import MeshError
from conelab.mesh import (
    Mesh,
    anchored_uniform_mesh,
    build_mesh,
    curvature_from_increments,
    flux_difference,
    integrate,
    second_difference,
)


def test_uniform_mesh():
    mesh = build_mesh(-4.0, 4.0, 9)
    assert mesh.n == 9
    assert mesh.u_min == -4.0 and mesh.u_max == 4.0
    assert_allclose(mesh.spacing, 1.0)
    assert_allclose(mesh.quad_weights, [0.5] + [1.0] * 7 + [0.5])


def test_graded_mesh_grows_geometrically():
    mesh = build_mesh(-20.0, 12.0, 33, grading=1.05)
    h = mesh.spacing
    assert_allclose(h[1:-1] / h[:-2], 1.05, rtol=1e-10)
    assert mesh.u_min == -20.0 and mesh.u_max == 12.0
    assert h[0] == np.min(h)


@pytest.mark.parametrize(
    "u_min,u_max,n,grading",
    [(1.0, 0.0, 16, 1.0), (0.0, 1.0, 7, 1.0), (0.0, 1.0, 16, 0.9), (-np.inf, 0.0, 16, 1.0)],
)
def test_build_mesh_rejects_bad_arguments(u_min, u_max, n, grading):
    with pytest.raises(MeshError):
        build_mesh(u_min, u_max, n, grading)


def test_mesh_rejects_unsorted_nodes():
    nodes = np.linspace(0, 1, 10)
    nodes[3], nodes[4] = nodes[4], nodes[3]
    with pytest.raises(MeshError):
        Mesh(nodes)


def test_mesh_nodes_are_read_only():
    mesh = build_mesh(0.0, 1.0, 10)
    with pytest.raises(ValueError):
        mesh.nodes[0] = 5.0


def test_flux_coefficients():
    mesh = build_mesh(-2.0, 6.0, 12, grading=1.1)
    h = mesh.spacing
    c = mesh.flux_coefficients
    assert c[0] == pytest.approx(2.0 / h[0])
    assert c[-1] == pytest.approx(2.0 / h[-1])
    assert_allclose(c[1:-1], 2.0 / (h[:-1] + h[1:]))
    with pytest.raises(ValueError):
        c[0] = 1.0


def test_flux_difference_reflects_at_zero_ghost_slope():
    mesh = build_mesh(0.0, 3.5, 8)
    h = mesh.spacing
    values = np.arange(8.0) ** 2
    q = np.diff(values) / h
    out = flux_difference(mesh, q)
    # reflected ghost v_(-1) = v_1
    assert out[0] == pytest.approx(2.0 * (values[1] - values[0]) / h[0] ** 2)
    assert out[-1] == pytest.approx(2.0 * (values[-2] - values[-1]) / h[-1] ** 2)
    assert_allclose(out, second_difference(mesh, values))


def test_second_difference_exact_on_quadratics_in_the_interior():
    mesh = build_mesh(-3.0, 5.0, 40, grading=1.03)
    u = mesh.nodes
    d2 = second_difference(mesh, 1.5 * u**2 - u + 2.0)
    assert_allclose(d2[1:-1], 3.0, rtol=1e-9)


def test_second_difference_annihilates_constants():
    mesh = build_mesh(-3.0, 5.0, 40, grading=1.03)
    assert_allclose(second_difference(mesh, np.full(mesh.n, 7.0)), 0.0, atol=1e-9)


@pytest.mark.parametrize("grading", [1.0, 1.02])
def test_weighted_second_difference_telescopes(rng, grading):
    mesh = build_mesh(-10.0, 6.0, 65, grading=grading)
    values = rng.normal(size=mesh.n)
    d2 = second_difference(mesh, values)
    scale = np.max(np.abs(d2)) * (mesh.u_max - mesh.u_min)
    assert abs(integrate(mesh, d2)) <= 1e-12 * scale


def test_curvature_from_increments_carries_slope_at_both_ends():
    mesh = build_mesh(-6.0, 6.0, 121)
    u = mesh.nodes
    out = curvature_from_increments(mesh, np.diff(u**2), 2 * u[0], 2 * u[-1])
    assert_allclose(out, 2.0, rtol=1e-9)

    # a plain reflection would be off by 2 f'/h at the ends
    plain = second_difference(mesh, u**2)
    assert plain[-1] == pytest.approx(2.0 - 24.0 / mesh.spacing[-1])


def test_curvature_from_increments_resolves_tiny_curvature_on_graded_mesh():
    # softplus'' = expit(u) expit(-u) is about 4e-18 at the lower end
    mesh = build_mesh(-40.0, 12.0, 513, grading=1.02)
    u, h = mesh.nodes, mesh.spacing
    increments = np.log1p(expit(u[:-1]) * np.expm1(h))
    out = curvature_from_increments(mesh, increments, expit(u[0]), expit(u[-1]))
    g = expit(u) * expit(-u)
    assert np.all(out > 0)
    left = u <= -5.0
    assert_allclose(out[left] / g[left], 1.0, rtol=0.1)


def test_field_length_checked():
    mesh = build_mesh(0.0, 1.0, 10)
    with pytest.raises(MeshError):
        second_difference(mesh, np.zeros(9))


def test_anchored_meshes_share_nodes():
    small = anchored_uniform_mesh(-10.0, 12.0, 0.25)
    large = anchored_uniform_mesh(-20.0, 12.0, 0.25)
    assert small.u_max == large.u_max == 12.0
    tail = large.nodes[-small.n:]
    assert np.array_equal(small.nodes, tail)


def test_anchored_mesh_needs_enough_cells():
    with pytest.raises(MeshError):
        anchored_uniform_mesh(0.0, 1.0, 0.5)
    with pytest.raises(MeshError):
        anchored_uniform_mesh(0.0, 1.0, 0.0)


def test_window_mask():
    mesh = build_mesh(-4.0, 4.0, 9)
    assert mesh.nodes[mesh.window_mask(-1.0, 1.0)].tolist() == [-1.0, 0.0, 1.0]
