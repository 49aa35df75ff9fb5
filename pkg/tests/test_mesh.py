import math

import numpy as np
import pytest

from mesh import MarkSet, Mesh, build_rect_mesh, edge_length, element_diameter, refine, refine_uniform
from models import InvalidArgumentError


@pytest.mark.parametrize("domain,nx,ny,n_vertices,n_triangles", [
    ((0.0, 2 * math.pi / 3, 0.0, 1.0), 4, 4, 25, 32),
    ((0.0, 1.0, 0.0, 1.0), 1, 1, 4, 2),
])
def test_build_rect_mesh_counts(domain, nx, ny, n_vertices, n_triangles):
    mesh = build_rect_mesh(domain, nx, ny)
    assert mesh.n_vertices == n_vertices
    assert mesh.n_triangles == n_triangles
    assert mesh.is_conforming()
    assert np.all(mesh.signed_areas() > 0)


@pytest.mark.parametrize("nx,ny", [(0, 3), (3, 0)])
def test_build_rect_mesh_rejects_zero_counts(nx, ny):
    with pytest.raises(InvalidArgumentError):
        build_rect_mesh((0.0, 1.0, 0.0, 1.0), nx, ny)


def test_boundary_vertices_lie_on_domain(coarse_mesh):
    boundary = coarse_mesh.vertices[coarse_mesh.boundary_vertices()]
    assert coarse_mesh.on_boundary(boundary).all()
    # 4x4 grid: 16 boundary vertices
    assert len(boundary) == 16


def test_refine_all_marked_gives_red_children(unit_square):
    refined = refine(unit_square, MarkSet.of([0, 1]))
    assert refined.n_triangles == 8
    assert refined.is_conforming()
    np.testing.assert_allclose(refined.areas().sum(), 1.0)
    assert np.bincount(refined.parents).tolist() == [4, 4]


def test_refine_empty_marks_is_identity(unit_square):
    refined = refine(unit_square, MarkSet())
    assert refined.n_triangles == unit_square.n_triangles


def test_refine_one_of_two_closes_without_hanging_nodes(unit_square):
    refined = refine(unit_square, MarkSet.of([0]))
    summary = refined.check_conformity()
    assert summary['hanging_nodes'] == 0
    assert summary['interior_edges_ok'] and summary['boundary_edges_ok']
    assert summary['min_angle'] >= 20.0
    # 4 red children plus the neighbour bisected across the shared diagonal
    assert refined.n_triangles == 6


def test_refine_rejects_out_of_range_marks(unit_square):
    with pytest.raises(InvalidArgumentError):
        refine(unit_square, MarkSet.of([5]))


def test_repeated_local_refinement_stays_conforming(benchmark_mesh, rng):
    mesh = benchmark_mesh
    floor = mesh.min_angle()
    for _ in range(5):
        marks = rng.choice(mesh.n_triangles, size=max(1, mesh.n_triangles // 6), replace=False)
        mesh = refine(mesh, marks)
        assert mesh.is_conforming()
        assert mesh.min_angle() >= floor - 1e-9
        np.testing.assert_allclose(mesh.areas().sum(), 2 * math.pi / 3)


def test_refining_closure_triangle_dissolves_it(unit_square):
    once = refine(unit_square, MarkSet.of([0]))
    closure = [t for t in range(once.n_triangles) if once.parents[t] == 1]
    twice = refine(once, MarkSet.of(closure[:1]))
    assert twice.is_conforming()
    # both leaves are now red refined
    assert twice.n_triangles == 8
    assert twice.min_angle() >= 45.0 - 1e-9


def test_parents_contain_children(coarse_mesh):
    refined = refine_uniform(coarse_mesh)
    assert refined.n_triangles == 4 * coarse_mesh.n_triangles
    assert np.all(refined.parents >= 0)
    child_area = np.bincount(refined.parents, weights=refined.areas())
    np.testing.assert_allclose(child_area, coarse_mesh.areas())


def test_element_diameter():
    right = Mesh([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], [(0, 1, 2)], (0.0, 1.0, 0.0, 1.0))
    assert element_diameter(right, 0) == pytest.approx(math.sqrt(2.0))
    s = 0.7
    equilateral = Mesh([(0.0, 0.0), (s, 0.0), (s / 2, s * math.sqrt(3.0) / 2)], [(0, 1, 2)],
                       (0.0, s, 0.0, s))
    assert element_diameter(equilateral, 0) == pytest.approx(s)
    with pytest.raises(InvalidArgumentError):
        element_diameter(right, 3)


def test_edge_length():
    mesh = Mesh([(0.0, 0.0), (3.0, 0.0), (3.0, 4.0)], [(0, 1, 2)], (0.0, 3.0, 0.0, 4.0))
    assert edge_length(mesh, (0, 2)) == pytest.approx(5.0)
    assert edge_length(mesh, mesh.edge_index[(0, 1)]) == pytest.approx(3.0)
    with pytest.raises(InvalidArgumentError):
        edge_length(mesh, (1, 1))


def test_coincident_endpoints_rejected():
    mesh = Mesh([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 0.0)], [(0, 1, 2)], (0.0, 1.0, 0.0, 1.0))
    with pytest.raises(InvalidArgumentError):
        edge_length(mesh, (1, 3))


def test_mesh_arrays_are_read_only(coarse_mesh):
    with pytest.raises(ValueError):
        coarse_mesh.vertices[0, 0] = 1.0
