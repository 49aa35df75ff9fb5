"""
Fixed-point solvers for the cavitation problem: the Nitsche-type
stabilized method with the multiplier eliminated elementwise, and the
classical penalty method.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy import sparse as sp
from scipy.sparse.linalg import splu

from assembly import (DiscreteField, ElementTables, SparseSymSystem, energy_norm, energy_norm_of_difference,
                      eval_operator_E, local_load, local_mass, local_operator_coupling, local_operator_load,
                      local_operator_product, local_stiffness, scatter_matrix, scatter_vector)
from finite_element_space import DofMap, eval_basis
from mesh import Mesh
from models import (InvalidArgumentError, IterationLog, IterationRecord, NonConvergenceError,
                    NotPositiveDefiniteError)
from reynolds_problem import ProblemSpec

logger = logging.getLogger(__name__)

METHODS = ('nitsche', 'penalty')
RESIDUAL_TOLERANCE = 1e-12
REFINEMENT_STEPS = 3
DENSE_CHECK_LIMIT = 2000


@dataclass
class SolverConfig:
    method: str = 'nitsche'
    alpha: float = 1e-2
    penalty_eps: float = 10.0
    tol_rel: float = 1e-10
    max_iter: int = 100
    deterministic: bool = True
    workers: int = 4

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidArgumentError(f"Unknown method '{self.method}'; expected one of {METHODS}")
        if not self.alpha > 0:
            raise InvalidArgumentError(f"Stabilization parameter alpha must be positive, got {self.alpha}")
        if not self.penalty_eps > 0:
            raise InvalidArgumentError(f"Penalty parameter must be positive, got {self.penalty_eps}")
        if not self.tol_rel > 0:
            raise InvalidArgumentError(f"Relative tolerance must be positive, got {self.tol_rel}")
        if self.max_iter < 1:
            raise InvalidArgumentError(f"max_iter must be at least 1, got {self.max_iter}")


@dataclass(eq=False)
class ActiveState:
    """Per (element, quadrature point) membership in the discrete cavitated region"""
    mask: np.ndarray

    @classmethod
    def empty(cls, n_elements: int, n_points: int) -> "ActiveState":
        return cls(np.zeros((n_elements, n_points), dtype=bool))

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.mask))

    def union(self, other: "ActiveState") -> "ActiveState":
        return ActiveState(self.mask | other.mask)

    def __eq__(self, other):
        return isinstance(other, ActiveState) and np.array_equal(self.mask, other.mask)

    def __hash__(self):
        return hash(self.mask.tobytes())


def _factorize(A: sp.csr_matrix):
    """LU with symmetric diagonal pivoting; the pivots are those of LDL^T"""
    try:
        lu = splu(A.tocsc(), permc_spec='MMD_AT_PLUS_A', diag_pivot_thresh=0.0,
                  options={'SymmetricMode': True})
    except RuntimeError as e:
        raise NotPositiveDefiniteError(
            f"Factorization failed ({e}); the stabilized system needs 0 < alpha < C_I, "
            f"try a smaller alpha")
    if np.array_equal(lu.perm_r, lu.perm_c):
        _check_pivots(lu.U.diagonal(), A.shape[0])
    elif A.shape[0] <= DENSE_CHECK_LIMIT:
        logger.warning("Row permutation differs from column permutation; checking definiteness densely")
        _dense_cholesky_check(A)
    else:
        logger.warning(f"Row permutation differs from column permutation; definiteness of the "
                       f"size {A.shape[0]} system is only checked through the solution energy")
    return lu


def _check_pivots(pivots: np.ndarray, size: int) -> None:
    if np.any(pivots <= 0.0):
        smallest = float(pivots.min())
        logger.error(f"Non-positive pivot {smallest:.3e} in reduced system of size {size}")
        raise NotPositiveDefiniteError(
            f"System matrix is not positive definite (pivot {smallest:.3e}); the stabilized "
            f"method requires 0 < alpha < C_I, try a smaller alpha", pivot=smallest)


def _dense_cholesky_check(A: sp.csr_matrix) -> None:
    try:
        np.linalg.cholesky(A.toarray())
    except np.linalg.LinAlgError:
        logger.error(f"Dense Cholesky failed on reduced system of size {A.shape[0]}")
        raise NotPositiveDefiniteError(
            "System matrix is not positive definite (dense Cholesky failed); the stabilized "
            "method requires 0 < alpha < C_I, try a smaller alpha")


def solve_reduced(A: sp.csr_matrix, b: np.ndarray) -> Tuple[np.ndarray, float]:
    """Solve an SPD system; returns the solution and its relative residual"""
    if A.shape[0] == 0:
        return np.zeros(0), 0.0
    lu = _factorize(A)
    x = lu.solve(b)
    norm_b = np.linalg.norm(b)
    if norm_b == 0.0:
        return x, float(np.linalg.norm(A @ x))
    residual = b - A @ x
    relative = np.linalg.norm(residual) / norm_b
    for _ in range(REFINEMENT_STEPS):
        if relative <= RESIDUAL_TOLERANCE:
            break
        x = x + lu.solve(residual)
        residual = b - A @ x
        relative = np.linalg.norm(residual) / norm_b
    if relative > RESIDUAL_TOLERANCE:
        logger.warning(f"Linear solve relative residual {relative:.2e} above {RESIDUAL_TOLERANCE:.0e}")
    if float(x @ b) < 0.0:
        raise NotPositiveDefiniteError(
            "Negative energy x^T A x in linear solve; the stabilized method requires 0 < alpha < C_I")
    return x, float(relative)


def linear_solve(system: Union[SparseSymSystem, Tuple[sp.spmatrix, np.ndarray]]) -> np.ndarray:
    """
    Solve a symmetric positive definite system.

    A SparseSymSystem is reduced to its free DOFs and the solution is
    returned over all DOFs; a bare (matrix, rhs) pair is solved as is.
    """
    if isinstance(system, SparseSymSystem):
        A, b = system.reduced()
        x, _ = solve_reduced(A, b)
        return system.expand(x)
    A, b = system
    x, _ = solve_reduced(sp.csr_matrix(A), np.asarray(b, dtype=float))
    return x


class CavitationSolver:
    """Service solving the constrained Reynolds problem on one mesh"""

    def __init__(self, spec: ProblemSpec, config: Optional[SolverConfig] = None):
        self.spec = spec
        self.config = config or SolverConfig()
        self._tables: Dict[int, ElementTables] = {}

    def tables(self, dofmap: DofMap) -> ElementTables:
        key = id(dofmap)
        cached = self._tables.get(key)
        if cached is None or cached.dofmap is not dofmap:
            cached = ElementTables(self.spec, dofmap)
            self._tables = {key: cached}
        return cached

    # Weights

    def stabilization_weight(self, tables: ElementTables) -> np.ndarray:
        """d_K^3 / (alpha h_K^2) per element"""
        return tables.d_mean ** 3 / (self.config.alpha * tables.h ** 2)

    def penalty_weight(self, tables: ElementTables) -> np.ndarray:
        """1 / (eps h_K^(k+1)) per element"""
        return 1.0 / (self.config.penalty_eps * tables.h ** (tables.dofmap.degree + 1))

    # Active set and multiplier

    def indicator_values(self, tables: ElementTables, field: DiscreteField) -> np.ndarray:
        """Quadrature-point values whose positivity defines the cavitated region"""
        p_c = self.spec.cavitation_pressure
        p = field.at_points(tables)
        if self.config.method == 'penalty':
            return p_c - p
        s = self.stabilization_weight(tables)[:, None]
        return s * (p_c - p) - tables.f - field.operator(tables)

    def active_state(self, tables: ElementTables, field: DiscreteField) -> ActiveState:
        return ActiveState(self.indicator_values(tables, field) > 0.0)

    def _point_indicator(self, field: DiscreteField, K: int, quad_point: int) -> float:
        dofmap = field.dofmap
        tables = self.tables(dofmap)
        if K < 0 or K >= tables.n_elements:
            raise InvalidArgumentError(f"Triangle index {K} out of range")
        bary = tables.rule.points[quad_point]
        values, _, _ = eval_basis(dofmap.degree, bary)
        p = float(values @ field.values[dofmap.element_dofs[K]])
        p_c = self.spec.cavitation_pressure
        if self.config.method == 'penalty':
            return p_c - p
        s = float(self.stabilization_weight(tables)[K])
        Ep = eval_operator_E(self.spec, dofmap.mesh, dofmap, field, K, quad_point, tables.rule)
        return s * (p_c - p) - float(tables.f[K, quad_point]) - Ep

    def active_indicator(self, field: DiscreteField, K: int, quad_point: int) -> bool:
        return self._point_indicator(field, K, quad_point) > 0.0

    def multiplier_samples(self, tables: ElementTables, field: DiscreteField) -> np.ndarray:
        """lambda_h at every quadrature point, shape (n_elements, n_qp)"""
        indicator = self.indicator_values(tables, field)
        if self.config.method == 'penalty':
            return self.penalty_weight(tables)[:, None] * np.maximum(indicator, 0.0)
        return np.maximum(indicator, 0.0)

    def recover_multiplier(self, field: DiscreteField, K: int, quad_point: int) -> float:
        value = self._point_indicator(field, K, quad_point)
        if self.config.method == 'penalty':
            return float(self.penalty_weight(self.tables(field.dofmap))[K] * max(value, 0.0))
        return max(value, 0.0)

    # Systems

    def solve_unconstrained(self, mesh: Mesh, dofmap: DofMap) -> DiscreteField:
        tables = self.tables(dofmap)
        matrix = scatter_matrix(dofmap, lambda chunk: local_stiffness(tables, chunk),
                                self.config.deterministic, self.config.workers)
        rhs = scatter_vector(dofmap, local_load(tables, tables.f))
        system = SparseSymSystem(matrix, rhs, dofmap.dirichlet_mask)
        return DiscreteField(dofmap, linear_solve(system))

    def assemble_nitsche_system(self, mesh: Mesh, dofmap: DofMap, state: ActiveState) -> SparseSymSystem:
        """
        Stiffness plus the eliminated-multiplier terms, split pointwise by
        the frozen active state:

          active:   p E q + E p q + d_K^3/(alpha h_K^2) p q
          inactive: -alpha h_K^2/d_K^3 E p E q
        """
        if not self.config.alpha > 0:
            raise InvalidArgumentError(f"alpha must be positive, got {self.config.alpha}")
        tables = self.tables(dofmap)
        self._check_state(tables, state)
        p_c = self.spec.cavitation_pressure
        active = state.mask.astype(float)
        inactive = 1.0 - active
        s = self.stabilization_weight(tables)[:, None]
        tau = 1.0 / s

        def kernel(chunk):
            return (local_stiffness(tables, chunk)
                    + local_operator_coupling(tables, active, chunk)
                    + local_mass(tables, active * s, chunk)
                    - local_operator_product(tables, inactive * tau, chunk))

        matrix = scatter_matrix(dofmap, kernel, self.config.deterministic, self.config.workers)
        f = tables.f
        local_rhs = (local_load(tables, f)
                     + local_operator_load(tables, active * p_c)
                     + local_load(tables, active * (s * p_c - f))
                     + local_operator_load(tables, inactive * tau * f))
        return SparseSymSystem(matrix, scatter_vector(dofmap, local_rhs), dofmap.dirichlet_mask)

    def assemble_penalty_system(self, mesh: Mesh, dofmap: DofMap, state: ActiveState) -> SparseSymSystem:
        """Stiffness plus 1/(eps h_K^(k+1)) (p - p_c) q on the active points"""
        tables = self.tables(dofmap)
        self._check_state(tables, state)
        weight = state.mask * self.penalty_weight(tables)[:, None]

        def kernel(chunk):
            return local_stiffness(tables, chunk) + local_mass(tables, weight, chunk)

        matrix = scatter_matrix(dofmap, kernel, self.config.deterministic, self.config.workers)
        local_rhs = local_load(tables, tables.f + weight * self.spec.cavitation_pressure)
        return SparseSymSystem(matrix, scatter_vector(dofmap, local_rhs), dofmap.dirichlet_mask)

    def assemble_system(self, mesh: Mesh, dofmap: DofMap, state: ActiveState) -> SparseSymSystem:
        if self.config.method == 'penalty':
            return self.assemble_penalty_system(mesh, dofmap, state)
        return self.assemble_nitsche_system(mesh, dofmap, state)

    @staticmethod
    def _check_state(tables: ElementTables, state: ActiveState):
        expected = (tables.n_elements, tables.rule.n_points)
        if state.mask.shape != expected:
            raise InvalidArgumentError(f"Active state shape {state.mask.shape} does not match {expected}")

    # Iteration

    def iterate_once(self, mesh: Mesh, dofmap: DofMap, state: ActiveState) -> Tuple[DiscreteField, float]:
        """One linearized solve with the given frozen state"""
        system = self.assemble_system(mesh, dofmap, state)
        A, b = system.reduced()
        x, residual = solve_reduced(A, b)
        return DiscreteField(dofmap, system.expand(x)), residual

    def fixed_point_solve(self, mesh: Mesh, dofmap: DofMap,
                          initial: Optional[DiscreteField] = None) -> Tuple[DiscreteField, ActiveState, IterationLog]:
        """
        Iterate p^k from the state of p^(k-1), starting at the unconstrained
        solution, until the state repeats or the energy increment drops
        below tol_rel relative to the iterate.
        """
        config = self.config
        tables = self.tables(dofmap)
        field = initial if initial is not None else self.solve_unconstrained(mesh, dofmap)
        state = self.active_state(tables, field)
        log = IterationLog()
        history: List[ActiveState] = [state]

        for iteration in range(1, config.max_iter + 1):
            frozen = state
            if self._is_cycling(history):
                frozen = history[-1].union(history[-2])
                logger.warning(f"Active set cycling at iteration {iteration}; freezing the union for one step")
                history = [frozen]

            new_field, residual = self.iterate_once(mesh, dofmap, frozen)
            increment = energy_norm_of_difference(self.spec, new_field, field, tables)
            norm = energy_norm(self.spec, mesh, dofmap, new_field, tables)
            new_state = self.active_state(tables, new_field)
            log.append(IterationRecord(iteration, increment, new_state.count, residual))
            logger.debug(f"Iteration {iteration}: increment {increment:.3e}, "
                         f"active points {new_state.count}, residual {residual:.1e}")
            field = new_field

            if new_state == frozen:
                log.converged, log.reason = True, 'active set unchanged'
                return field, new_state, log
            if increment <= config.tol_rel * (norm if norm > 0.0 else 1.0):
                log.converged, log.reason = True, 'increment below tolerance'
                return field, new_state, log
            state = new_state
            history.append(state)

        logger.error(f"{config.method} iteration did not converge in {config.max_iter} iterations")
        raise NonConvergenceError(
            f"Fixed-point iteration did not converge in {config.max_iter} iterations", log=log)

    @staticmethod
    def _is_cycling(history: List[ActiveState]) -> bool:
        """The last four states alternate between two distinct sets"""
        if len(history) < 4:
            return False
        a, b, c, d = history[-4:]
        return a == c and b == d and not a == b
