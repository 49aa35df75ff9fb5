import numpy as np
import pytest
from scipy import sparse as sp

from assembly import (DiscreteField, ElementTables, SparseSymSystem, assemble_load, assemble_stiffness,
                      edge_flux_jump, energy_error, energy_norm, eval_operator_E, interior_edge_jumps,
                      local_stiffness)
from finite_element_space import build_dofmap
from mesh import Mesh, build_rect_mesh, refine_uniform
from models import InvalidArgumentError
from reynolds_problem import CallableThickness, ConstantThickness, ProblemSpec


def test_reference_triangle_stiffness(unit_diffusion_spec, reference_triangle):
    tables = ElementTables(unit_diffusion_spec, build_dofmap(reference_triangle, 1))
    expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]]
    np.testing.assert_allclose(local_stiffness(tables)[0], expected, atol=1e-14)


def test_stiffness_is_exactly_symmetric(benchmark_spec, coarse_mesh, degree):
    dofmap = build_dofmap(coarse_mesh, degree)
    A = assemble_stiffness(benchmark_spec, coarse_mesh, dofmap)
    assert (A - A.T).nnz == 0 or abs(A - A.T).max() == 0.0
    # constants are in the kernel before Dirichlet conditions
    np.testing.assert_allclose(A @ np.ones(dofmap.n_dofs), 0.0, atol=1e-10)


def test_threaded_assembly_matches_sequential(benchmark_spec, degree):
    mesh = refine_uniform(build_rect_mesh(benchmark_spec.domain, 12, 8), 2)
    dofmap = build_dofmap(mesh, degree)
    sequential = assemble_stiffness(benchmark_spec, mesh, dofmap)
    threaded = assemble_stiffness(benchmark_spec, mesh, dofmap, deterministic=False)
    assert abs(sequential - threaded).max() <= 1e-12 * abs(sequential).max()
    assert abs(threaded - threaded.T).max() == 0.0


def test_zero_load(coarse_mesh):
    spec = ProblemSpec(load=lambda x, y: 0.0 * x)
    dofmap = build_dofmap(coarse_mesh, 1)
    np.testing.assert_array_equal(assemble_load(spec, coarse_mesh, dofmap), 0.0)


def test_unit_load_is_third_of_patch_area(coarse_mesh):
    spec = ProblemSpec(load=lambda x, y: 1.0 + 0.0 * x)
    dofmap = build_dofmap(coarse_mesh, 1)
    patch = np.bincount(coarse_mesh.triangles.ravel(), weights=np.repeat(coarse_mesh.areas(), 3))
    np.testing.assert_allclose(assemble_load(spec, coarse_mesh, dofmap), patch / 3.0)


def test_operator_of_constant_field_vanishes(benchmark_spec, coarse_mesh, degree):
    dofmap = build_dofmap(coarse_mesh, degree)
    field = DiscreteField(dofmap, np.full(dofmap.n_dofs, 3.0))
    assert eval_operator_E(benchmark_spec, coarse_mesh, dofmap, field, 5, 2) == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(field.operator(ElementTables(benchmark_spec, dofmap)), 0.0, atol=1e-12)


def test_operator_is_laplacian_for_unit_diffusion(unit_diffusion_spec):
    mesh = build_rect_mesh(unit_diffusion_spec.domain, 2, 2)
    dofmap = build_dofmap(mesh, 2)
    field = DiscreteField(dofmap, dofmap.interpolate(lambda x, y: x ** 2))
    for K in range(mesh.n_triangles):
        assert eval_operator_E(unit_diffusion_spec, mesh, dofmap, field, K, 0) == pytest.approx(2.0)
    np.testing.assert_allclose(field.operator(ElementTables(unit_diffusion_spec, dofmap)), 2.0)


def test_operator_product_rule():
    # d^3 = 1 + theta so that div D = (1, 0) with c = 1
    thickness = CallableThickness(lambda x, y: np.cbrt(1.0 + x) + 0.0 * y,
                                  lambda x, y: np.stack([np.cbrt(1.0 + x) ** -2 / 3.0, 0.0 * y], axis=-1))
    spec = ProblemSpec(theta_max=1.0, aspect_factor=1.0, thickness=thickness)
    mesh = build_rect_mesh(spec.domain, 2, 2)
    dofmap = build_dofmap(mesh, 1)
    field = DiscreteField(dofmap, dofmap.interpolate(lambda x, y: x))
    assert eval_operator_E(spec, mesh, dofmap, field, 1, [0.2, 0.3, 0.5]) == pytest.approx(1.0)


def test_energy_norm(unit_diffusion_spec):
    mesh = build_rect_mesh(unit_diffusion_spec.domain, 3, 3)
    dofmap = build_dofmap(mesh, 1)
    assert energy_norm(unit_diffusion_spec, mesh, dofmap, DiscreteField(dofmap, np.ones(dofmap.n_dofs))) == 0.0
    linear = DiscreteField(dofmap, dofmap.interpolate(lambda x, y: x))
    assert energy_norm(unit_diffusion_spec, mesh, dofmap, linear) == pytest.approx(1.0)


def test_energy_error_of_exact_interpolant(unit_diffusion_spec):
    mesh = build_rect_mesh(unit_diffusion_spec.domain, 2, 2)
    dofmap = build_dofmap(mesh, 2)
    field = DiscreteField(dofmap, dofmap.interpolate(lambda x, y: x * y))
    tables = ElementTables(unit_diffusion_spec, dofmap)
    assert energy_error(tables, field, lambda x, y: np.stack([y, x], axis=-1)) == pytest.approx(0.0, abs=1e-12)


def test_flux_jump_of_linear_field_vanishes(benchmark_spec, coarse_mesh):
    spec = ProblemSpec(thickness=ConstantThickness(1.3))
    dofmap = build_dofmap(coarse_mesh, 1)
    field = DiscreteField(dofmap, dofmap.interpolate(lambda x, y: 2.0 * x - 3.0 * y))
    interior = int(np.flatnonzero(~coarse_mesh.boundary_edge_mask)[0])
    assert edge_flux_jump(spec, coarse_mesh, dofmap, field, interior, 0.3) == pytest.approx(0.0, abs=1e-12)
    _, jumps = interior_edge_jumps(ElementTables(spec, dofmap), field)
    np.testing.assert_allclose(jumps, 0.0, atol=1e-12)


def _centre_hat_jumps(spec, mesh):
    """Signed flux jump of the hat function at vertex 4 (0.5, 0.5), keyed by vertex pair"""
    dofmap = build_dofmap(mesh, 1)
    values = np.zeros(dofmap.n_dofs)
    values[4] = 1.0
    edges, jumps = interior_edge_jumps(ElementTables(spec, dofmap), DiscreteField(dofmap, values))
    return {tuple(sorted(mesh.edges[e])): jump for e, jump in zip(edges, jumps)}


def test_flux_jump_of_hat_function(unit_diffusion_spec):
    # 2x2 mesh: vertex j * 3 + i sits at (i / 2, j / 2); hat slopes are 0 or +-2 per axis
    mesh = build_rect_mesh(unit_diffusion_spec.domain, 2, 2)
    jumps = _centre_hat_jumps(unit_diffusion_spec, mesh)
    r2 = 2.0 * np.sqrt(2.0)
    expected = {(0, 4): r2, (4, 8): r2, (1, 4): 2.0, (3, 4): 2.0, (4, 5): 2.0, (4, 7): 2.0,
                (1, 5): -r2, (3, 7): -r2}
    assert set(jumps) == set(expected)
    for key, value in expected.items():
        np.testing.assert_allclose(jumps[key], value, atol=1e-12)


def test_flux_jump_independent_of_side_order(unit_diffusion_spec):
    mesh = build_rect_mesh(unit_diffusion_spec.domain, 2, 2)
    swapped = Mesh(mesh.vertices, mesh.triangles[::-1], mesh.domain)
    interior = ~mesh.boundary_edge_mask
    plus = {tuple(sorted(mesh.edges[e])): frozenset(mesh.triangles[mesh.edge_triangles[e, 0]])
            for e in np.flatnonzero(interior)}
    swapped_plus = {tuple(sorted(swapped.edges[e])): frozenset(swapped.triangles[swapped.edge_triangles[e, 0]])
                    for e in np.flatnonzero(~swapped.boundary_edge_mask)}
    assert all(plus[key] != swapped_plus[key] for key in plus)

    first = _centre_hat_jumps(unit_diffusion_spec, mesh)
    second = _centre_hat_jumps(unit_diffusion_spec, swapped)
    for key in first:
        np.testing.assert_allclose(second[key] ** 2, first[key] ** 2, atol=1e-12)
        np.testing.assert_allclose(second[key], first[key], atol=1e-12)


def test_single_edge_jump_matches_table(unit_diffusion_spec):
    mesh = build_rect_mesh(unit_diffusion_spec.domain, 2, 2)
    dofmap = build_dofmap(mesh, 1)
    values = np.zeros(dofmap.n_dofs)
    values[4] = 1.0
    far_diagonal = mesh.edge_index[(1, 5)]
    jump = edge_flux_jump(unit_diffusion_spec, mesh, dofmap, DiscreteField(dofmap, values), far_diagonal, 0.3)
    assert jump == pytest.approx(-2.0 * np.sqrt(2.0), abs=1e-12)


def test_flux_jump_rejects_boundary_edge(benchmark_spec, coarse_mesh):
    dofmap = build_dofmap(coarse_mesh, 1)
    boundary = int(np.flatnonzero(coarse_mesh.boundary_edge_mask)[0])
    with pytest.raises(InvalidArgumentError):
        edge_flux_jump(benchmark_spec, coarse_mesh, dofmap, DiscreteField.zeros(dofmap), boundary, 0.5)


def test_field_length_checked(coarse_mesh):
    dofmap = build_dofmap(coarse_mesh, 1)
    with pytest.raises(InvalidArgumentError):
        DiscreteField(dofmap, np.zeros(dofmap.n_dofs + 1))


def test_sparse_system_reduce_and_expand():
    matrix = sp.csr_matrix(np.array([[4.0, 1.0, 0.0], [1.0, 3.0, 0.0], [0.0, 0.0, 1.0]]))
    system = SparseSymSystem(matrix, np.array([1.0, 2.0, 3.0]), np.array([False, True, False]))
    A, b = system.reduced()
    np.testing.assert_array_equal(A.toarray(), [[4.0, 0.0], [0.0, 1.0]])
    np.testing.assert_array_equal(b, [1.0, 3.0])
    np.testing.assert_array_equal(system.expand(np.array([7.0, 8.0])), [7.0, 0.0, 8.0])
    assert system.asymmetry() == 0.0
