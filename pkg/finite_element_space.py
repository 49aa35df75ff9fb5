"""
Lagrange P1/P2 spaces on triangles: reference bases, affine maps,
quadrature rules and degree-of-freedom numbering.
"""
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from mesh import LOCAL_EDGES, Mesh
from models import InvalidArgumentError

SUPPORTED_DEGREES = (1, 2)

# gradients of the barycentric coordinates in reference coordinates (xi, eta)
_BARY_GRADIENTS = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


@dataclass(frozen=True)
class QuadratureRule:
    """
    Triangle rule in barycentric coordinates (weights sum to 1/2, the
    reference triangle area) and an edge rule on [0, 1].
    """
    name: str
    points: np.ndarray
    weights: np.ndarray
    edge_points: np.ndarray
    edge_weights: np.ndarray
    degree: int

    @property
    def n_points(self) -> int:
        return int(self.points.shape[0])

    @property
    def n_edge_points(self) -> int:
        return int(self.edge_points.shape[0])

    def describe(self) -> str:
        return f"{self.name} ({self.n_points} triangle points, {self.n_edge_points} edge points, degree {self.degree})"


def default_quadrature() -> QuadratureRule:
    """Symmetric 6-point degree-4 triangle rule with 3-point Gauss on edges"""
    a, b = 0.445948490915965, 0.091576213509771
    wa, wb = 0.223381589678011, 0.109951743655322
    points = np.array([
        [a, a, 1 - 2 * a], [a, 1 - 2 * a, a], [1 - 2 * a, a, a],
        [b, b, 1 - 2 * b], [b, 1 - 2 * b, b], [1 - 2 * b, b, b],
    ])
    weights = 0.5 * np.array([wa, wa, wa, wb, wb, wb])
    g = np.sqrt(3.0 / 5.0) / 2.0
    edge_points = np.array([0.5 - g, 0.5, 0.5 + g])
    edge_weights = np.array([5.0, 8.0, 5.0]) / 18.0
    return QuadratureRule("dunavant-6", points, weights, edge_points, edge_weights, degree=4)


def n_local_dofs(degree: int) -> int:
    _check_degree(degree)
    return 3 if degree == 1 else 6


def _check_degree(degree: int):
    if degree not in SUPPORTED_DEGREES:
        raise InvalidArgumentError(f"Unsupported polynomial degree {degree}; expected 1 or 2")


def basis_tables(degree: int, bary: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Reference basis values, gradients and hessians at barycentric points.

    Shapes: (n, nb), (n, nb, 2), (n, nb, 2, 2). P2 ordering is the three
    vertex functions followed by the edge functions of LOCAL_EDGES.
    """
    _check_degree(degree)
    bary = np.atleast_2d(np.asarray(bary, dtype=float))
    n = bary.shape[0]
    G = _BARY_GRADIENTS

    if degree == 1:
        values = bary.copy()
        grads = np.broadcast_to(G, (n, 3, 2)).copy()
        hessians = np.zeros((n, 3, 2, 2))
        return values, grads, hessians

    values = np.empty((n, 6))
    grads = np.empty((n, 6, 2))
    hessians = np.empty((n, 6, 2, 2))
    for i in range(3):
        li = bary[:, i]
        values[:, i] = li * (2.0 * li - 1.0)
        grads[:, i] = (4.0 * li - 1.0)[:, None] * G[i]
        hessians[:, i] = 4.0 * np.outer(G[i], G[i])
    for j, (a, b) in enumerate(LOCAL_EDGES):
        la, lb = bary[:, a], bary[:, b]
        values[:, 3 + j] = 4.0 * la * lb
        grads[:, 3 + j] = 4.0 * (lb[:, None] * G[a] + la[:, None] * G[b])
        hessians[:, 3 + j] = 4.0 * (np.outer(G[a], G[b]) + np.outer(G[b], G[a]))
    return values, grads, hessians


def eval_basis(degree: int, ref_point) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Basis values, reference gradients and hessians at one barycentric point"""
    ref_point = np.asarray(ref_point, dtype=float)
    if ref_point.shape != (3,):
        raise InvalidArgumentError(f"Expected a barycentric triple, got shape {ref_point.shape}")
    if np.any(ref_point < -1e-12) or abs(ref_point.sum() - 1.0) > 1e-12:
        raise InvalidArgumentError(f"Point {ref_point} is not in the reference triangle")
    values, grads, hessians = basis_tables(degree, ref_point)
    return values[0], grads[0], hessians[0]


def affine_maps(mesh: Mesh) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Jacobians, determinants and inverse transposes of every element map"""
    p = mesh.vertices[mesh.triangles]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if np.any(np.abs(det) <= 1e-14 * np.max(np.abs(det), initial=1.0)):
        bad = int(np.argmin(np.abs(det)))
        raise InvalidArgumentError(f"Degenerate element {bad} (det J = {det[bad]:.3e})")
    invJT = np.empty_like(J)
    invJT[:, 0, 0] = J[:, 1, 1] / det
    invJT[:, 0, 1] = -J[:, 1, 0] / det
    invJT[:, 1, 0] = -J[:, 0, 1] / det
    invJT[:, 1, 1] = J[:, 0, 0] / det
    return J, det, invJT


def push_forward(mesh: Mesh, K: int, values, ref_grads, ref_hessians):
    """Map reference basis quantities to element K (affine, constant Jacobian)"""
    if K < 0 or K >= mesh.n_triangles:
        raise InvalidArgumentError(f"Triangle index {K} out of range")
    p = mesh.vertices[mesh.triangles[K]]
    J = np.column_stack([p[1] - p[0], p[2] - p[0]])
    det = np.linalg.det(J)
    if abs(det) <= 1e-14:
        raise InvalidArgumentError(f"Degenerate element {K} (det J = {det:.3e})")
    invJT = np.linalg.inv(J).T
    grads = np.asarray(ref_grads) @ invJT.T
    hessians = np.einsum('ia,...ab,jb->...ij', invJT, np.asarray(ref_hessians), invJT)
    return np.asarray(values), grads, hessians


def reference_coordinates(mesh: Mesh, K: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of physical points in elements K"""
    p = mesh.vertices[mesh.triangles[K]]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
    local = np.linalg.solve(J, (points - p[:, 0])[..., None])[..., 0]
    return np.column_stack([1.0 - local.sum(axis=1), local])


class DofMap:
    """Global numbering of Lagrange nodes: vertices first, then edge midpoints"""

    def __init__(self, mesh: Mesh, degree: int):
        _check_degree(degree)
        self.mesh = mesh
        self.degree = degree
        if degree == 1:
            self.element_dofs = mesh.triangles.copy()
            self.n_dofs = mesh.n_vertices
            self.coordinates = mesh.vertices.copy()
        else:
            self.element_dofs = np.hstack([mesh.triangles, mesh.n_vertices + mesh.triangle_edges])
            self.n_dofs = mesh.n_vertices + mesh.n_edges
            midpoints = mesh.vertices[mesh.edges].mean(axis=1)
            self.coordinates = np.vstack([mesh.vertices, midpoints])

        self.dirichlet_mask = np.zeros(self.n_dofs, dtype=bool)
        boundary_edges = mesh.edges[mesh.boundary_edge_mask]
        self.dirichlet_mask[boundary_edges.ravel()] = True
        if degree == 2:
            self.dirichlet_mask[mesh.n_vertices + np.flatnonzero(mesh.boundary_edge_mask)] = True
        self.free_dofs = np.flatnonzero(~self.dirichlet_mask)
        self.element_dofs.setflags(write=False)

    def __repr__(self):
        return f"DofMap(P{self.degree}, {self.n_dofs} dofs, {self.n_free} free)"

    @property
    def n_local(self) -> int:
        return int(self.element_dofs.shape[1])

    @property
    def n_free(self) -> int:
        return int(self.free_dofs.size)

    def interpolate(self, func: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
        """Nodal interpolant coefficients of func(x, y)"""
        x, y = self.coordinates[:, 0], self.coordinates[:, 1]
        return np.broadcast_to(np.asarray(func(x, y), dtype=float), (self.n_dofs,)).copy()

    def compatible_with(self, other: "DofMap") -> bool:
        return (self is other or (self.degree == other.degree and self.n_dofs == other.n_dofs
                                  and np.array_equal(self.element_dofs, other.element_dofs)))


def build_dofmap(mesh: Mesh, degree: int) -> DofMap:
    return DofMap(mesh, degree)
