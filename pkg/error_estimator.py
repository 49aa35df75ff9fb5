"""
Residual a posteriori estimators for the Nitsche and penalty solutions,
and the beta-max marking strategy.
"""
import logging
from typing import Optional

import numpy as np

from assembly import DiscreteField, ElementTables, edge_scaling, element_energy, interior_edge_jumps
from cavitation_solver import ActiveState, CavitationSolver
from finite_element_space import DofMap
from mesh import MarkSet, Mesh
from models import EstimatorReport, InvalidArgumentError

logger = logging.getLogger(__name__)


class ErrorEstimator:
    """Elementwise estimator eta_K^2 for a solution produced by a CavitationSolver"""

    def __init__(self, solver: CavitationSolver):
        self.solver = solver
        self.spec = solver.spec
        self.config = solver.config

    def estimate(self, mesh: Mesh, dofmap: DofMap, field: DiscreteField,
                 state: Optional[ActiveState] = None) -> EstimatorReport:
        if self.config.method == 'penalty':
            return self.estimate_penalty(mesh, dofmap, field, state)
        return self.estimate_nitsche(mesh, dofmap, field, state)

    def _require(self, method: str):
        if self.config.method != method:
            raise InvalidArgumentError(f"{method} estimator needs a {method} solver, got {self.config.method}")

    def _residual_term(self, tables: ElementTables, field: DiscreteField, multiplier: np.ndarray) -> np.ndarray:
        """h_K^2/d_K^3 ||E p_h + lambda_h + f||^2_K"""
        residual = field.operator(tables) + multiplier + tables.f
        scale = tables.h ** 2 / tables.d_mean ** 3
        return scale * np.sum(tables.weights * residual ** 2, axis=1)

    def _edge_term(self, tables: ElementTables, field: DiscreteField) -> np.ndarray:
        """1/2 h_E/d_E^3 ||D grad p_h . n jump||^2_E summed over interior edges of K"""
        mesh = tables.mesh
        edges, jumps = interior_edge_jumps(tables, field)
        lengths, d_edge = edge_scaling(tables, edges)
        integrals = lengths * (jumps ** 2 @ tables.rule.edge_weights)
        contribution = 0.5 * lengths / d_edge ** 3 * integrals
        term = np.zeros(mesh.n_triangles)
        np.add.at(term, mesh.edge_triangles[edges, 0], contribution)
        np.add.at(term, mesh.edge_triangles[edges, 1], contribution)
        return term

    def estimate_nitsche(self, mesh: Mesh, dofmap: DofMap, field: DiscreteField,
                         state: Optional[ActiveState] = None) -> EstimatorReport:
        self._require('nitsche')
        tables = self.solver.tables(dofmap)
        if state is not None:
            self.solver._check_state(tables, state)
        p_c = self.spec.cavitation_pressure
        multiplier = self.solver.multiplier_samples(tables, field)
        p = field.at_points(tables)

        residual = self._residual_term(tables, field, multiplier)
        edge = self._edge_term(tables, field)
        # grad (p_c - p_h)_+ is -grad p_h where p_h < p_c and zero elsewhere
        violation = element_energy(tables, field, mask=p < p_c)
        complementarity = np.sum(tables.weights * np.maximum(p - p_c, 0.0) * multiplier, axis=1)

        report = EstimatorReport(residual, edge, violation, complementarity, dofmap.n_free, 'nitsche')
        logger.debug(f"Nitsche estimator on {mesh.n_triangles} elements: total {report.total:.4e}")
        return report

    def estimate_penalty(self, mesh: Mesh, dofmap: DofMap, field: DiscreteField,
                         state: Optional[ActiveState] = None) -> EstimatorReport:
        self._require('penalty')
        tables = self.solver.tables(dofmap)
        if state is not None:
            self.solver._check_state(tables, state)
        # w (p_c - p_h)_+ with w = 1/(eps h_K^(k+1))
        multiplier = self.solver.multiplier_samples(tables, field)

        residual = self._residual_term(tables, field, multiplier)
        edge = self._edge_term(tables, field)
        zeros = np.zeros(mesh.n_triangles)
        report = EstimatorReport(residual, edge, zeros, zeros.copy(), dofmap.n_free, 'penalty')
        logger.debug(f"Penalty estimator on {mesh.n_triangles} elements: total {report.total:.4e}")
        return report


def mark(report: EstimatorReport, beta: float) -> MarkSet:
    """Elements with eta_K > beta * max eta_K"""
    if not (0.0 < beta < 1.0):
        raise InvalidArgumentError(f"Marking fraction beta must lie in (0, 1), got {beta}")
    eta = report.eta
    if eta.size == 0:
        return MarkSet()
    threshold = beta * float(eta.max())
    return MarkSet.of(np.flatnonzero(eta > threshold))
