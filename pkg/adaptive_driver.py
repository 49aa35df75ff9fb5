"""
Adaptive solve-estimate-mark-refine loop, run configuration and
parameter sweeps.
"""
import dataclasses
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from app import environment_overrides, parse_bool, parse_number, read_config_file
from assembly import DiscreteField
from cavitation_solver import ActiveState, CavitationSolver, SolverConfig
from error_estimator import ErrorEstimator, mark
from finite_element_space import DofMap, build_dofmap
from mesh import DEFAULT_ANGLE_FLOOR, Mesh, build_rect_mesh, refine
from models import CavitationError, ConfigError, EstimatorReport, InvalidArgumentError, NonConvergenceError, RoundRecord, RunReport
from reynolds_problem import ProblemSpec, quasi_uniformity_ratio
from vtk_export import write_estimator_csv, write_history_csv, write_iteration_csv, write_summary_csv, write_vtk

logger = logging.getLogger(__name__)


@dataclass
class RunConfig:
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    solver: SolverConfig = field(default_factory=SolverConfig)
    degree: int = 1
    beta: float = 0.5
    rounds: int = 7
    nx: int = 12
    ny: int = 8
    angle_floor: float = DEFAULT_ANGLE_FLOOR
    output_dir: Optional[str] = None
    export_vtk: bool = True
    export_csv: bool = True
    export_estimators: bool = False
    export_iterations: bool = False

    def __post_init__(self):
        if self.rounds < 0:
            raise InvalidArgumentError(f"Number of refinement rounds must be >= 0, got {self.rounds}")
        if not (0.0 < self.beta < 1.0):
            raise InvalidArgumentError(f"beta must lie in (0, 1), got {self.beta}")
        if self.degree not in (1, 2):
            raise InvalidArgumentError(f"Unsupported polynomial degree {self.degree}")
        if self.nx < 1 or self.ny < 1:
            raise InvalidArgumentError(f"Initial mesh counts must be positive, got {self.nx}x{self.ny}")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def metadata(self) -> Dict[str, Any]:
        return {
            'method': self.solver.method,
            'degree': self.degree,
            'alpha': self.solver.alpha,
            'penalty_eps': self.solver.penalty_eps,
            'beta': self.beta,
            'rounds': self.rounds,
            'initial_mesh': f"{self.nx}x{self.ny}",
            'eccentricity': self.problem.eccentricity,
            'phase': self.problem.phase,
            'arc_start': self.problem.arc_start,
            'aspect_factor': self.problem.aspect_factor,
            'cavitation_pressure': self.problem.cavitation_pressure,
        }


_PROBLEM_KEYS = {'theta_max': 'theta_max', 'y_max': 'y_max', 'eccentricity': 'eccentricity',
                 'phase': 'phase', 'arc_start': 'arc_start', 'aspect_factor': 'aspect_factor',
                 'cavitation_pressure': 'cavitation_pressure'}
_SOLVER_KEYS = {'alpha': parse_number, 'penalty_eps': parse_number, 'tol_rel': parse_number,
                'max_iter': lambda v: int(parse_number(v)), 'deterministic': parse_bool,
                'workers': lambda v: int(parse_number(v)), 'method': lambda v: str(v).strip().lower()}
_ADAPTIVE_KEYS = {'degree': lambda v: int(parse_number(v)), 'beta': parse_number,
                  'rounds': lambda v: int(parse_number(v)), 'nx': lambda v: int(parse_number(v)),
                  'ny': lambda v: int(parse_number(v)), 'angle_floor': parse_number}
_OUTPUT_KEYS = {'directory': ('output_dir', str), 'export_vtk': ('export_vtk', parse_bool),
                'export_csv': ('export_csv', parse_bool), 'export_estimators': ('export_estimators', parse_bool),
                'export_iterations': ('export_iterations', parse_bool)}


def build_run_config(sections: Dict[str, Dict[str, Any]]) -> RunConfig:
    """RunConfig from section dictionaries (config file, environment and CLI merged)"""
    try:
        problem_args = {}
        for key, value in sections.get('problem', {}).items():
            if key not in _PROBLEM_KEYS:
                raise ConfigError(f"Unknown key '{key}' in [problem]")
            problem_args[_PROBLEM_KEYS[key]] = parse_number(value)

        solver_args = {}
        for key, value in sections.get('solver', {}).items():
            if key not in _SOLVER_KEYS:
                raise ConfigError(f"Unknown key '{key}' in [solver]")
            solver_args[key] = _SOLVER_KEYS[key](value)

        run_args = {}
        for key, value in sections.get('adaptive', {}).items():
            if key not in _ADAPTIVE_KEYS:
                raise ConfigError(f"Unknown key '{key}' in [adaptive]")
            run_args[key] = _ADAPTIVE_KEYS[key](value)
        for key, value in sections.get('output', {}).items():
            if key not in _OUTPUT_KEYS:
                raise ConfigError(f"Unknown key '{key}' in [output]")
            name, convert = _OUTPUT_KEYS[key]
            run_args[name] = convert(value)

        return RunConfig(problem=ProblemSpec(**problem_args), solver=SolverConfig(**solver_args), **run_args)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"Invalid run configuration: {e}")


def load_run_config(path: str, overrides: Optional[Dict[str, Dict[str, Any]]] = None) -> RunConfig:
    """Defaults < file < environment < explicit overrides"""
    sections = read_config_file(path)
    for layer in (environment_overrides(), overrides or {}):
        for section, values in layer.items():
            sections.setdefault(section, {}).update({k: v for k, v in values.items() if v is not None})
    return build_run_config(sections)


def export_solution(mesh: Mesh, dofmap: DofMap, field: DiscreteField, multiplier: np.ndarray,
                    path: str, report: Optional[RunReport] = None,
                    weights: Optional[np.ndarray] = None) -> List[str]:
    """
    VTK file with vertex pressures and per-cell mean multiplier; with a
    report, also the history CSV next to it.
    """
    if weights is None:
        weights = np.ones_like(multiplier)
    cell_lambda = np.sum(weights * multiplier, axis=1) / np.sum(weights, axis=1)
    written = [write_vtk(path, mesh, point_data={'pressure': field.values[:mesh.n_vertices]},
                         cell_data={'multiplier': cell_lambda})]
    if report is not None:
        history = os.path.join(os.path.dirname(os.path.abspath(path)), 'history.csv')
        written.append(write_history_csv(report, history))
    return written


class AdaptiveDriver:
    """Runs the adaptive loop for one RunConfig and keeps the final state"""

    def __init__(self, config: RunConfig):
        self.config = config
        self.report = RunReport(metadata=config.metadata())
        self.mesh: Optional[Mesh] = None
        self.dofmap: Optional[DofMap] = None
        self.field: Optional[DiscreteField] = None
        self.state: Optional[ActiveState] = None
        self.estimate: Optional[EstimatorReport] = None
        self.solver: Optional[CavitationSolver] = None

    def _output(self, name: str) -> Optional[str]:
        if not self.config.output_dir:
            return None
        return os.path.join(self.config.output_dir, name)

    def run(self) -> RunReport:
        config = self.config
        mesh = build_rect_mesh(config.problem.domain, config.nx, config.ny)
        quasi_uniformity_ratio(config.problem, mesh)
        logger.info(f"Adaptive {config.solver.method} P{config.degree} run: {config.rounds} rounds "
                    f"from {config.nx}x{config.ny} mesh")

        for round_index in range(config.rounds + 1):
            started = time.perf_counter()
            dofmap = build_dofmap(mesh, config.degree)
            solver = CavitationSolver(config.problem, config.solver)
            estimator = ErrorEstimator(solver)
            try:
                field, state, log = solver.fixed_point_solve(mesh, dofmap)
            except NonConvergenceError as e:
                logger.error(f"Round {round_index}: {e}")
                e.report = self.report
                raise
            estimate = estimator.estimate(mesh, dofmap, field, state)
            elapsed = time.perf_counter() - started

            record = RoundRecord(round=round_index, ndofs=dofmap.n_free, eta_total=estimate.total,
                                 p_max=float(field.values.max()), p_min=float(field.values.min()),
                                 iterations=log.iterations, wall_time=elapsed, n_elements=mesh.n_triangles)
            self.report.rounds.append(record)
            self.report.metadata['quadrature'] = solver.tables(dofmap).rule.describe()
            logger.info(f"Round {round_index}: {record.ndofs} dofs, eta {record.eta_total:.4e}, "
                        f"max p {record.p_max:.4f}, {record.iterations} iterations ({elapsed:.2f}s)")

            self.mesh, self.dofmap, self.field, self.state = mesh, dofmap, field, state
            self.estimate, self.solver = estimate, solver
            self._export_round(round_index, estimate, log)

            if round_index == config.rounds:
                break
            marks = mark(estimate, config.beta)
            if not marks.marked:
                logger.info("No elements marked; stopping")
                break
            mesh = refine(mesh, marks, config.angle_floor)

        tables = self.solver.tables(self.dofmap)
        self.report.cavitated_fraction = float(
            np.sum(tables.weights[self.state.mask]) / config.problem.area)
        self.report.completed = True
        self._export_final()
        return self.report

    def _export_round(self, round_index: int, estimate: EstimatorReport, log):
        if self.config.export_estimators and self.config.output_dir:
            write_estimator_csv(estimate, self._output(f"round_{round_index:02d}_estimators.csv"))
        if self.config.export_iterations and self.config.output_dir:
            write_iteration_csv(log, self._output(f"round_{round_index:02d}_iterations.csv"))

    def _export_final(self):
        if not self.config.output_dir:
            return
        if self.config.export_vtk:
            tables = self.solver.tables(self.dofmap)
            multiplier = self.solver.multiplier_samples(tables, self.field)
            export_solution(self.mesh, self.dofmap, self.field, multiplier, self._output('solution.vtk'),
                            weights=tables.weights)
        if self.config.export_csv:
            write_history_csv(self.report, self._output('history.csv'))

    def multiplier(self) -> np.ndarray:
        return self.solver.multiplier_samples(self.solver.tables(self.dofmap), self.field)

    def complementarity_residual(self) -> float:
        """sum_K int_K (p_h - p_c)_+ lambda_h"""
        return float(np.sum(self.estimate.complementarity))

    def free_boundary_refinement_ratio(self) -> float:
        """
        Mean element area in the band around the cavitation boundary divided
        by the mean element area deep inside the cavitated region.
        """
        mesh = self.mesh
        active_fraction = self.state.mask.mean(axis=1)
        cavitated = active_fraction > 0.5
        band = (active_fraction > 0.0) & (active_fraction < 1.0)
        interior = mesh.edge_triangles[~mesh.boundary_edge_mask]
        differs = cavitated[interior[:, 0]] != cavitated[interior[:, 1]]
        band[interior[differs].ravel()] = True
        near_band = band.copy()
        touches = band[interior[:, 0]] | band[interior[:, 1]]
        near_band[interior[touches].ravel()] = True
        deep = cavitated & ~near_band
        if not band.any() or not deep.any():
            return float('nan')
        areas = mesh.areas()
        return float(areas[band].mean() / areas[deep].mean())


def adaptive_solve(config: RunConfig) -> RunReport:
    return AdaptiveDriver(config).run()


class ParameterSweep:
    """Independent adaptive runs over a list of alpha or penalty values"""

    PARAMETERS = ('alpha', 'penalty_eps')

    def __init__(self, config: RunConfig, parameter: str, values: Sequence[float], workers: int = 2):
        if parameter not in self.PARAMETERS:
            raise InvalidArgumentError(f"Cannot sweep '{parameter}'; expected one of {self.PARAMETERS}")
        if not values:
            raise InvalidArgumentError("Sweep needs at least one value")
        self.config = config
        self.parameter = parameter
        self.values = [float(v) for v in values]
        self.workers = max(1, workers)

    def _config_for(self, value: float) -> RunConfig:
        solver = dataclasses.replace(self.config.solver, **{self.parameter: value})
        output_dir = None
        if self.config.output_dir:
            output_dir = os.path.join(self.config.output_dir, f"{self.parameter}_{value:g}")
        return self.config.replace(solver=solver, output_dir=output_dir)

    def _run_one(self, value: float) -> Dict[str, Any]:
        try:
            report = adaptive_solve(self._config_for(value))
            return {'value': value, 'report': report, 'converged': True, 'error': ''}
        except NonConvergenceError as e:
            logger.warning(f"Sweep {self.parameter}={value:g} did not converge: {e}")
            return {'value': value, 'report': e.report, 'converged': False, 'error': str(e)}
        except CavitationError as e:
            # typically alpha above the inverse estimate constant
            logger.error(f"Sweep {self.parameter}={value:g} failed: {e}")
            return {'value': value, 'report': None, 'converged': False, 'error': str(e)}

    def run(self) -> List[Dict[str, Any]]:
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            results = list(pool.map(self._run_one, self.values))
        if self.config.output_dir:
            write_summary_csv([self._summary_row(r) for r in results],
                              os.path.join(self.config.output_dir, f"sweep_{self.parameter}.csv"))
        return results

    def _summary_row(self, result: Dict[str, Any]) -> Dict[str, Any]:
        report = result['report']
        final = report.final if report is not None else None
        return {
            'parameter': self.parameter,
            'value': result['value'],
            'converged': int(result['converged']),
            'rounds': len(report.rounds) if report is not None else 0,
            'ndofs': final.ndofs if final else 0,
            'eta_total': final.eta_total if final else float('nan'),
            'p_max': final.p_max if final else float('nan'),
            'iterations': sum(r.iterations for r in report.rounds) if report is not None else 0,
            'error': result['error'],
        }
