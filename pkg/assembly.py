"""
Element kernels and sparse assembly for the variable-coefficient
Reynolds operator E p = div(D grad p).
"""
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy import sparse as sp

from finite_element_space import (DofMap, QuadratureRule, affine_maps, basis_tables, default_quadrature,
                                  eval_basis, push_forward, reference_coordinates)
from mesh import Mesh
from models import InvalidArgumentError
from reynolds_problem import ProblemSpec, edge_mean_thickness, element_mean_thickness

logger = logging.getLogger(__name__)

CHUNK_SIZE = 2048


class ElementTables:
    """
    Per-element quadrature data for one (problem, mesh, space) triple:
    physical points and weights, basis values/gradients/hessians, the
    coefficients D, div D, f and the operator E applied to every basis
    function.
    """

    def __init__(self, spec: ProblemSpec, dofmap: DofMap, rule: Optional[QuadratureRule] = None):
        self.spec = spec
        self.dofmap = dofmap
        self.mesh = dofmap.mesh
        self.rule = rule or default_quadrature()
        mesh = self.mesh

        _, det, invJT = affine_maps(mesh)
        self.invJT = invJT
        self.weights = np.abs(det)[:, None] * self.rule.weights[None, :]
        self.points = np.einsum('qi,kid->kqd', self.rule.points, mesh.vertices[mesh.triangles])

        values, ref_grads, ref_hessians = basis_tables(dofmap.degree, self.rule.points)
        self.values = values
        self.grads = np.einsum('kab,qnb->kqna', invJT, ref_grads)
        self.hessians = np.einsum('kia,qnab,kjb->kqnij', invJT, ref_hessians, invJT)

        coefficients = spec.coefficients()
        x, y = self.points[..., 0], self.points[..., 1]
        self.coefficients = coefficients
        self.D = coefficients.diffusion(x, y)
        self.divD = coefficients.diffusion_divergence(x, y)
        self.f = coefficients.load(x, y)
        self.E_basis = (np.einsum('kqa,kqna->kqn', self.divD, self.grads)
                        + self.D[..., None, 0] * self.hessians[..., 0, 0]
                        + self.D[..., None, 1] * self.hessians[..., 1, 1])

        self.h = mesh.diameters()
        self.d_mean = element_mean_thickness(spec, mesh, self.rule)

    @property
    def n_elements(self) -> int:
        return self.mesh.n_triangles


@dataclass(eq=False)
class DiscreteField:
    """Coefficient vector over a DofMap"""
    dofmap: DofMap
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.dofmap.n_dofs,):
            raise InvalidArgumentError(
                f"Field has {self.values.size} values, dofmap has {self.dofmap.n_dofs}")

    @classmethod
    def zeros(cls, dofmap: DofMap) -> "DiscreteField":
        return cls(dofmap, np.zeros(dofmap.n_dofs))

    @property
    def local(self) -> np.ndarray:
        return self.values[self.dofmap.element_dofs]

    def at_points(self, tables: ElementTables) -> np.ndarray:
        return np.einsum('qn,kn->kq', tables.values, self.local)

    def gradients(self, tables: ElementTables) -> np.ndarray:
        return np.einsum('kqna,kn->kqa', tables.grads, self.local)

    def operator(self, tables: ElementTables) -> np.ndarray:
        """Elementwise E p_h at the quadrature points"""
        return np.einsum('kqn,kn->kq', tables.E_basis, self.local)

    def __sub__(self, other: "DiscreteField") -> "DiscreteField":
        _check_compatible(self, other)
        return DiscreteField(self.dofmap, self.values - other.values)


@dataclass
class SparseSymSystem:
    """Symmetric system over all DOFs; Dirichlet DOFs are eliminated on reduce()"""
    matrix: sp.csr_matrix
    rhs: np.ndarray
    dirichlet_mask: np.ndarray

    @property
    def n(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def free_dofs(self) -> np.ndarray:
        return np.flatnonzero(~self.dirichlet_mask)

    def reduced(self) -> Tuple[sp.csr_matrix, np.ndarray]:
        free = self.free_dofs
        # homogeneous Dirichlet data: no lifting term
        return self.matrix[free][:, free].tocsr(), self.rhs[free].copy()

    def expand(self, free_values: np.ndarray) -> np.ndarray:
        full = np.zeros(self.n)
        full[self.free_dofs] = free_values
        return full

    def asymmetry(self) -> float:
        diff = self.matrix - self.matrix.T
        return float(abs(diff).max()) if diff.nnz else 0.0


def _check_compatible(a: DiscreteField, b: DiscreteField):
    if not a.dofmap.compatible_with(b.dofmap):
        raise InvalidArgumentError("Fields live on different dofmaps")


def _run_chunks(kernel: Callable[[slice], np.ndarray], n: int, deterministic: bool = True,
                workers: int = 4):
    """Evaluate an element kernel over chunks; yields (slice, local arrays)"""
    chunks = [slice(i, min(i + CHUNK_SIZE, n)) for i in range(0, n, CHUNK_SIZE)]
    if deterministic or len(chunks) < 2:
        for chunk in chunks:
            yield chunk, kernel(chunk)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(kernel, chunk): chunk for chunk in chunks}
        for future in as_completed(futures):
            yield futures[future], future.result()


def scatter_matrix(dofmap: DofMap, kernel: Callable[[slice], np.ndarray],
                   deterministic: bool = True, workers: int = 4) -> sp.csr_matrix:
    rows, cols, data = [], [], []
    for chunk, local in _run_chunks(kernel, dofmap.mesh.n_triangles, deterministic, workers):
        dofs = dofmap.element_dofs[chunk]
        n = dofs.shape[1]
        rows.append(np.repeat(dofs, n, axis=1).ravel())
        cols.append(np.tile(dofs, (1, n)).ravel())
        data.append(local.ravel())
    if not data:
        return sp.csr_matrix((dofmap.n_dofs, dofmap.n_dofs))
    matrix = sp.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                           shape=(dofmap.n_dofs, dofmap.n_dofs)).tocsr()
    # duplicate summation order is not fixed; a + b == b + a restores exact symmetry
    return ((matrix + matrix.T) * 0.5).tocsr()


def scatter_vector(dofmap: DofMap, local: np.ndarray) -> np.ndarray:
    return np.bincount(dofmap.element_dofs.ravel(), weights=local.ravel(), minlength=dofmap.n_dofs)


# Local element kernels; `weight` arrays are (n_elements, n_qp) and multiply
# the quadrature weights.

def local_stiffness(tables: ElementTables, chunk: slice = slice(None), weight=None) -> np.ndarray:
    W = tables.weights[chunk] if weight is None else tables.weights[chunk] * weight[chunk]
    G = tables.grads[chunk]
    D = tables.D[chunk]
    return np.einsum('kq,kqa,kqia,kqja->kij', W, D, G, G)


def local_mass(tables: ElementTables, weight: np.ndarray, chunk: slice = slice(None)) -> np.ndarray:
    W = tables.weights[chunk] * weight[chunk]
    return np.einsum('kq,qi,qj->kij', W, tables.values, tables.values)


def local_operator_coupling(tables: ElementTables, weight: np.ndarray, chunk: slice = slice(None)) -> np.ndarray:
    """Symmetric kernel of (phi_j E phi_i + E phi_j phi_i)"""
    W = tables.weights[chunk] * weight[chunk]
    EV = np.einsum('kq,kqi,qj->kij', W, tables.E_basis[chunk], tables.values)
    return EV + EV.transpose(0, 2, 1)


def local_operator_product(tables: ElementTables, weight: np.ndarray, chunk: slice = slice(None)) -> np.ndarray:
    """Kernel of E phi_j E phi_i"""
    W = tables.weights[chunk] * weight[chunk]
    Eb = tables.E_basis[chunk]
    return np.einsum('kq,kqi,kqj->kij', W, Eb, Eb)


def local_load(tables: ElementTables, density: np.ndarray) -> np.ndarray:
    return np.einsum('kq,kq,qi->ki', tables.weights, density, tables.values)


def local_operator_load(tables: ElementTables, density: np.ndarray) -> np.ndarray:
    return np.einsum('kq,kq,kqi->ki', tables.weights, density, tables.E_basis)


def assemble_stiffness(spec: ProblemSpec, mesh: Mesh, dofmap: DofMap,
                       tables: Optional[ElementTables] = None, deterministic: bool = True) -> sp.csr_matrix:
    """Entry (i, j) = sum_K int_K D grad phi_j . grad phi_i"""
    tables = tables or ElementTables(spec, _dofmap_on(mesh, dofmap))
    return scatter_matrix(dofmap, lambda chunk: local_stiffness(tables, chunk), deterministic)


def assemble_load(spec: ProblemSpec, mesh: Mesh, dofmap: DofMap,
                  tables: Optional[ElementTables] = None) -> np.ndarray:
    """Entry i = sum_K int_K f phi_i"""
    tables = tables or ElementTables(spec, _dofmap_on(mesh, dofmap))
    return scatter_vector(dofmap, local_load(tables, tables.f))


def _dofmap_on(mesh: Mesh, dofmap: DofMap) -> DofMap:
    if dofmap.mesh is not mesh and dofmap.mesh.n_triangles != mesh.n_triangles:
        raise InvalidArgumentError("DofMap was built on a different mesh")
    return dofmap


def _bary(rule: QuadratureRule, quad_point: Union[int, np.ndarray]) -> np.ndarray:
    if isinstance(quad_point, (int, np.integer)):
        return rule.points[int(quad_point)]
    return np.asarray(quad_point, dtype=float)


def eval_operator_E(spec: ProblemSpec, mesh: Mesh, dofmap: DofMap, field: DiscreteField, K: int,
                    quad_point: Union[int, np.ndarray], rule: Optional[QuadratureRule] = None) -> float:
    """
    E p_h = sum_ij d_i D_ij d_j p_h + D_ij d_ij p_h at one point of K.

    quad_point is a quadrature point index or a barycentric triple.
    """
    rule = rule or default_quadrature()
    bary = _bary(rule, quad_point)
    values, ref_grads, ref_hessians = eval_basis(dofmap.degree, bary)
    _, grads, hessians = push_forward(mesh, K, values, ref_grads, ref_hessians)
    local = field.values[dofmap.element_dofs[K]]
    grad_p = local @ grads
    hess_p = np.einsum('n,nij->ij', local, hessians)
    x, y = bary @ mesh.vertices[mesh.triangles[K]]
    coefficients = spec.coefficients()
    D = coefficients.diffusion(np.asarray(x), np.asarray(y))
    divD = coefficients.diffusion_divergence(np.asarray(x), np.asarray(y))
    return float(divD @ grad_p + D[0] * hess_p[0, 0] + D[1] * hess_p[1, 1])


def element_energy(tables: ElementTables, field: DiscreteField, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """int_K D grad p . grad p per element, optionally restricted to masked points"""
    grads = field.gradients(tables)
    density = np.einsum('kqa,kqa->kq', tables.D, grads ** 2)
    if mask is not None:
        density = np.where(mask, density, 0.0)
    return np.sum(tables.weights * density, axis=1)


def energy_norm(spec: ProblemSpec, mesh: Mesh, dofmap: DofMap, field: DiscreteField,
                tables: Optional[ElementTables] = None) -> float:
    """sqrt(int D grad p . grad p)"""
    if not field.dofmap.compatible_with(dofmap):
        raise InvalidArgumentError("Field does not belong to the given dofmap")
    tables = tables or ElementTables(spec, _dofmap_on(mesh, dofmap))
    return float(np.sqrt(max(np.sum(element_energy(tables, field)), 0.0)))


def energy_norm_of_difference(spec: ProblemSpec, first: DiscreteField, second: DiscreteField,
                              tables: Optional[ElementTables] = None) -> float:
    _check_compatible(first, second)
    dofmap = first.dofmap
    return energy_norm(spec, dofmap.mesh, dofmap, first - second, tables)


def energy_error(tables: ElementTables, field: DiscreteField,
                 exact_gradient: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> float:
    """Energy norm of (p_exact - p_h) with an analytic exact gradient"""
    x, y = tables.points[..., 0], tables.points[..., 1]
    diff = np.asarray(exact_gradient(x, y)) - field.gradients(tables)
    density = np.einsum('kqa,kqa->kq', tables.D, diff ** 2)
    return float(np.sqrt(np.sum(tables.weights * density)))


def _edge_geometry(mesh: Mesh, edges: np.ndarray, t: np.ndarray):
    ends = mesh.vertices[mesh.edges[edges]]
    tangent = ends[:, 1] - ends[:, 0]
    length = np.linalg.norm(tangent, axis=1)
    normal = np.column_stack([tangent[:, 1], -tangent[:, 0]]) / length[:, None]
    points = ends[:, None, 0] + t[None, :, None] * tangent[:, None, :]
    return points, normal, length


def _side_gradients(mesh: Mesh, dofmap: DofMap, field: DiscreteField, K: np.ndarray,
                    points: np.ndarray, invJT: Optional[np.ndarray] = None) -> np.ndarray:
    """grad p_h restricted to elements K at physical points (one point per K)"""
    bary = reference_coordinates(mesh, K, points)
    _, ref_grads, _ = basis_tables(dofmap.degree, bary)
    if invJT is None:
        invJT = affine_maps(mesh)[2]
    grads = np.einsum('nab,nib->nia', invJT[K], ref_grads)
    local = field.values[dofmap.element_dofs[K]]
    return np.einsum('ni,nia->na', local, grads)


def interior_edge_jumps(tables: ElementTables, field: DiscreteField) -> Tuple[np.ndarray, np.ndarray]:
    """
    (D grad p_h|K+ - D grad p_h|K-) . n at the edge quadrature points of
    every interior edge, with n the edge normal pointing out of K+.
    Returns (interior edge indices, jumps of shape (n_edges, n_edge_qp)).
    """
    mesh, dofmap = tables.mesh, tables.dofmap
    interior = np.flatnonzero(~mesh.boundary_edge_mask)
    t = tables.rule.edge_points
    points, normal, _ = _edge_geometry(mesh, interior, t)
    nt = t.size
    flat = points.reshape(-1, 2)
    plus = np.repeat(mesh.edge_triangles[interior, 0], nt)
    minus = np.repeat(mesh.edge_triangles[interior, 1], nt)
    jump_grad = (_side_gradients(mesh, dofmap, field, plus, flat, tables.invJT)
                 - _side_gradients(mesh, dofmap, field, minus, flat, tables.invJT))
    D = tables.coefficients.diffusion(flat[:, 0], flat[:, 1])
    flux = (D * jump_grad).reshape(-1, nt, 2)
    # orient n out of K+ so that the sign is reproducible
    centroid = mesh.vertices[mesh.triangles[mesh.edge_triangles[interior, 0]]].mean(axis=1)
    midpoint = mesh.vertices[mesh.edges[interior]].mean(axis=1)
    flip = np.sum((midpoint - centroid) * normal, axis=1) < 0
    normal[flip] *= -1.0
    return interior, np.einsum('eta,ea->et', flux, normal)


def edge_flux_jump(spec: ProblemSpec, mesh: Mesh, dofmap: DofMap, field: DiscreteField,
                   E: int, t: float) -> float:
    """Flux jump across interior edge E at edge parameter t in [0, 1]"""
    if E < 0 or E >= mesh.n_edges:
        raise InvalidArgumentError(f"Edge index {E} out of range")
    if mesh.boundary_edge_mask[E]:
        raise InvalidArgumentError(f"Edge {E} lies on the boundary; flux jumps need two elements")
    points, normal, _ = _edge_geometry(mesh, np.array([E]), np.array([float(t)]))
    point = points.reshape(1, 2)
    plus, minus = mesh.edge_triangles[E]
    jump_grad = (_side_gradients(mesh, dofmap, field, np.array([plus]), point)
                 - _side_gradients(mesh, dofmap, field, np.array([minus]), point))
    centroid = mesh.vertices[mesh.triangles[plus]].mean(axis=0)
    n = normal[0]
    if np.dot(point[0] - centroid, n) < 0:
        n = -n
    D = spec.coefficients().diffusion(point[:, 0], point[:, 1])
    return float(np.dot(D[0] * jump_grad[0], n))


def edge_scaling(tables: ElementTables, edges: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(h_E, d_E) for the given edges"""
    mesh = tables.mesh
    lengths = mesh.edge_lengths()[edges]
    d_edge = edge_mean_thickness(tables.spec, mesh, tables.rule)[edges]
    return lengths, d_edge
