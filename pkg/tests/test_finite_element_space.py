import math

import numpy as np
import pytest

from finite_element_space import (DofMap, affine_maps, basis_tables, build_dofmap, default_quadrature, eval_basis,
                                  n_local_dofs, push_forward)
from mesh import Mesh, build_rect_mesh
from models import InvalidArgumentError


def test_unit_square_p1_dofs_are_all_dirichlet(unit_square):
    dofmap = build_dofmap(unit_square, 1)
    assert dofmap.n_dofs == 4
    assert dofmap.dirichlet_mask.all()
    assert dofmap.n_free == 0


def test_unit_square_p2_counts_vertices_and_edges(unit_square):
    dofmap = build_dofmap(unit_square, 2)
    assert unit_square.n_edges == 5
    assert dofmap.n_dofs == 9
    # only the diagonal midpoint is interior
    assert dofmap.n_free == 1
    np.testing.assert_allclose(dofmap.coordinates[dofmap.free_dofs[0]], [0.5, 0.5])


def test_rect_mesh_p1_interior_dofs(coarse_mesh):
    dofmap = build_dofmap(coarse_mesh, 1)
    assert dofmap.n_dofs == 25
    assert dofmap.n_free == 9


def test_element_dofs_shape(coarse_dofmap):
    assert coarse_dofmap.element_dofs.shape == (32, n_local_dofs(coarse_dofmap.degree))
    assert coarse_dofmap.element_dofs.max() == coarse_dofmap.n_dofs - 1


@pytest.mark.parametrize("degree", [0, 3])
def test_unsupported_degree(coarse_mesh, degree):
    with pytest.raises(InvalidArgumentError):
        DofMap(coarse_mesh, degree)


@pytest.mark.parametrize("vertex", range(3))
def test_p1_basis_is_kronecker_at_vertices(vertex):
    values, _, _ = eval_basis(1, np.eye(3)[vertex])
    np.testing.assert_allclose(values, np.eye(3)[vertex])


def test_p2_edge_basis_at_own_midpoint():
    # local edge 0 joins vertices 0 and 1
    values, _, _ = eval_basis(2, [0.5, 0.5, 0.0])
    expected = np.zeros(6)
    expected[3] = 1.0
    np.testing.assert_allclose(values, expected, atol=1e-15)


def test_basis_partition_of_unity(degree, rng):
    bary = rng.dirichlet(np.ones(3), size=10)
    values, grads, hessians = basis_tables(degree, bary)
    np.testing.assert_allclose(values.sum(axis=1), 1.0)
    np.testing.assert_allclose(grads.sum(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(hessians.sum(axis=1), 0.0, atol=1e-12)


def test_eval_basis_rejects_points_outside_reference():
    with pytest.raises(InvalidArgumentError):
        eval_basis(1, [1.2, -0.2, 0.0])
    with pytest.raises(InvalidArgumentError):
        eval_basis(1, [0.5, 0.5])


def test_push_forward_identity_map(reference_triangle, degree):
    values, ref_grads, ref_hessians = eval_basis(degree, [0.2, 0.3, 0.5])
    v, g, H = push_forward(reference_triangle, 0, values, ref_grads, ref_hessians)
    np.testing.assert_allclose(v, values)
    np.testing.assert_allclose(g, ref_grads)
    np.testing.assert_allclose(H, ref_hessians)


def test_push_forward_scales_gradients():
    mesh = Mesh([(0.0, 0.0), (2.0, 0.0), (0.0, 0.5)], [(0, 1, 2)], (0.0, 2.0, 0.0, 0.5))
    _, ref_grads, ref_hessians = eval_basis(1, [1 / 3, 1 / 3, 1 / 3])
    _, grads, _ = push_forward(mesh, 0, None, ref_grads, ref_hessians)
    np.testing.assert_allclose(grads, [[-0.5, -2.0], [0.5, 0.0], [0.0, 2.0]])


def test_affine_maps_reject_degenerate_elements():
    mesh = Mesh([(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (0.0, 1.0)], [(0, 1, 2), (0, 1, 3)], (0.0, 2.0, 0.0, 1.0))
    with pytest.raises(InvalidArgumentError):
        affine_maps(mesh)


def test_quadrature_rule():
    rule = default_quadrature()
    assert rule.n_points == 6
    assert rule.n_edge_points == 3
    assert rule.weights.sum() == pytest.approx(0.5)
    assert rule.edge_weights.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(rule.points.sum(axis=1), 1.0)
    xi, eta = rule.points[:, 1], rule.points[:, 2]
    for a in range(5):
        for b in range(5 - a):
            exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
            assert rule.weights @ (xi ** a * eta ** b) == pytest.approx(exact, abs=1e-12)


def test_interpolation_reproduces_space_polynomials(degree):
    mesh = build_rect_mesh((0.0, 2.0, 0.0, 1.0), 3, 2)
    dofmap = build_dofmap(mesh, degree)

    def poly(x, y):
        return 1.0 + 2.0 * x - y + (degree - 1) * (x * y - 0.5 * y * y)

    coefficients = dofmap.interpolate(poly)
    bary = np.array([[0.1, 0.6, 0.3], [0.25, 0.25, 0.5]])
    values, _, _ = basis_tables(degree, bary)
    for K in range(mesh.n_triangles):
        points = bary @ mesh.vertices[mesh.triangles[K]]
        np.testing.assert_allclose(values @ coefficients[dofmap.element_dofs[K]],
                                   poly(points[:, 0], points[:, 1]), atol=1e-12)


def test_compatible_dofmaps(coarse_mesh):
    assert build_dofmap(coarse_mesh, 1).compatible_with(build_dofmap(coarse_mesh, 1))
    assert not build_dofmap(coarse_mesh, 1).compatible_with(build_dofmap(coarse_mesh, 2))
