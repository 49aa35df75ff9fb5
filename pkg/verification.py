"""
Self-checks run by `main.py verify`: a manufactured unconstrained problem
with known solution, structural checks on meshes, quadrature, spaces and
assembled systems, and optionally the adaptive benchmark itself.
"""
import logging
import math
from typing import Any, Callable, Dict, List, Tuple

import numpy as np

from adaptive_driver import AdaptiveDriver, RunConfig
from assembly import element_energy, energy_error
from cavitation_solver import ActiveState, CavitationSolver, SolverConfig
from error_estimator import ErrorEstimator
from finite_element_space import basis_tables, build_dofmap, default_quadrature
from mesh import DEFAULT_ANGLE_FLOOR, MarkSet, build_rect_mesh, refine, refine_uniform
from reynolds_problem import DEFAULT_ARC_START, DEFAULT_PHASE, JournalBearingThickness, ProblemSpec

logger = logging.getLogger(__name__)

RATE_TOLERANCE = 0.15
ESTIMATOR_SLOPE_TOLERANCE = 0.2
BENCHMARK_PEAK = 32.750
BENCHMARK_PEAK_TOLERANCE = 0.02

Result = Dict[str, Any]


def manufactured_solution() -> Tuple[Callable, Callable]:
    """p(theta, y) = sin(3 theta / 2) sin(pi y) and its gradient"""
    def pressure(x, y):
        return np.sin(1.5 * x) * np.sin(np.pi * y)

    def gradient(x, y):
        return np.stack([1.5 * np.cos(1.5 * x) * np.sin(np.pi * y),
                         np.pi * np.sin(1.5 * x) * np.cos(np.pi * y)], axis=-1)

    return pressure, gradient


def manufactured_problem(eccentricity: float = 0.5, aspect_factor: float = 0.25) -> ProblemSpec:
    """
    Journal bearing film with the load f = -E p chosen so the manufactured
    pressure solves the unconstrained equation. p >= 0 on the domain and
    p_c = -10 keeps the constraint inactive.
    """
    film = JournalBearingThickness(eccentricity, DEFAULT_PHASE, DEFAULT_ARC_START)
    c = aspect_factor

    def load(x, y):
        d = film.value(x, y)
        d_theta = film.gradient(x, y)[..., 0]
        s, t = np.sin(1.5 * x), np.sin(np.pi * y)
        p_theta = 1.5 * np.cos(1.5 * x) * t
        p_theta_theta = -2.25 * s * t
        p_yy = -np.pi ** 2 * s * t
        return -(3.0 * d ** 2 * d_theta * p_theta + d ** 3 * (p_theta_theta + c * p_yy))

    return ProblemSpec(eccentricity=eccentricity, aspect_factor=aspect_factor,
                       cavitation_pressure=-10.0, load=load)


def _rate(values: List[float], h: List[float]) -> float:
    """Observed order between the two finest levels"""
    return math.log(values[-2] / values[-1]) / math.log(h[-2] / h[-1])


def check_manufactured(degree: int, refinements: int = 4, nx: int = 4, ny: int = 4) -> Result:
    """Energy error and estimator decay under uniform refinement"""
    spec = manufactured_problem()
    _, gradient = manufactured_solution()
    solver = CavitationSolver(spec, SolverConfig())
    estimator = ErrorEstimator(solver)

    mesh = build_rect_mesh(spec.domain, nx, ny)
    errors, etas, h, ndofs = [], [], [], []
    for level in range(refinements + 1):
        if level:
            mesh = refine_uniform(mesh)
        dofmap = build_dofmap(mesh, degree)
        field = solver.solve_unconstrained(mesh, dofmap)
        tables = solver.tables(dofmap)
        errors.append(energy_error(tables, field, gradient))
        etas.append(estimator.estimate(mesh, dofmap, field).total)
        h.append(float(mesh.diameters().max()))
        ndofs.append(dofmap.n_free)
        logger.debug(f"P{degree} level {level}: {ndofs[-1]} dofs, error {errors[-1]:.4e}, eta {etas[-1]:.4e}")

    error_rate = _rate(errors, h)
    eta_rate = _rate(etas, h)
    passed = (abs(error_rate - degree) <= RATE_TOLERANCE
              and abs(eta_rate - error_rate) <= ESTIMATOR_SLOPE_TOLERANCE)
    return {'name': f'manufactured_p{degree}', 'passed': passed, 'errors': errors, 'estimators': etas,
            'h': h, 'ndofs': ndofs, 'error_rate': error_rate, 'estimator_rate': eta_rate}


def check_mesh_refinement(rounds: int = 8, fraction: float = 0.2, seed: int = 0,
                          angle_floor: float = DEFAULT_ANGLE_FLOOR) -> Result:
    """Conformity and minimum angle after random marking rounds"""
    rng = np.random.default_rng(seed)
    mesh = build_rect_mesh(ProblemSpec().domain, 12, 8)
    history = []
    passed = True
    for _ in range(rounds):
        count = max(1, int(fraction * mesh.n_triangles))
        marks = MarkSet.of(rng.choice(mesh.n_triangles, size=count, replace=False))
        mesh = refine(mesh, marks, angle_floor)
        summary = mesh.check_conformity()
        ok = mesh.is_conforming() and summary['min_angle'] >= angle_floor
        passed = passed and ok
        history.append({'n_triangles': mesh.n_triangles, 'min_angle': summary['min_angle'], 'conforming': ok})
    return {'name': 'mesh_refinement', 'passed': passed, 'rounds': history}


def check_quadrature(tol: float = 1e-12) -> Result:
    """Triangle rule exact to degree 4, edge rule exact to degree 5"""
    rule = default_quadrature()
    xi, eta = rule.points[:, 1], rule.points[:, 2]
    worst = 0.0
    for a in range(rule.degree + 1):
        for b in range(rule.degree + 1 - a):
            exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
            worst = max(worst, abs(float(rule.weights @ (xi ** a * eta ** b)) - exact))
    edge_worst = max(abs(float(rule.edge_weights @ rule.edge_points ** n) - 1.0 / (n + 1)) for n in range(6))
    return {'name': 'quadrature', 'passed': worst <= tol and edge_worst <= tol,
            'triangle_error': worst, 'edge_error': edge_worst}


def check_interpolation(degree: int, samples: int = 20, seed: int = 1, tol: float = 1e-10) -> Result:
    """Polynomials of the space degree are reproduced at random points"""
    rng = np.random.default_rng(seed)
    mesh = refine_uniform(build_rect_mesh(ProblemSpec().domain, 3, 2))
    dofmap = build_dofmap(mesh, degree)

    def poly(x, y):
        if degree == 1:
            return 0.3 + 1.7 * x - 2.1 * y
        return 0.3 + 1.7 * x - 2.1 * y + 0.8 * x * x - 1.1 * x * y + 0.6 * y * y

    coefficients = dofmap.interpolate(poly)
    elements = rng.integers(0, mesh.n_triangles, size=samples)
    bary = rng.dirichlet(np.ones(3), size=samples)
    values, _, _ = basis_tables(degree, bary)
    interpolated = np.sum(values * coefficients[dofmap.element_dofs[elements]], axis=1)
    points = np.einsum('si,sid->sd', bary, mesh.vertices[mesh.triangles[elements]])
    worst = float(np.max(np.abs(interpolated - poly(points[:, 0], points[:, 1]))))
    return {'name': f'interpolation_p{degree}', 'passed': worst <= tol, 'max_error': worst}


def check_systems(degree: int, nx: int = 4, ny: int = 4) -> Result:
    """
    Dense Cholesky of reduced Nitsche and penalty systems with empty and
    fully active states, and exact symmetry of the assembled matrices.
    """
    spec = ProblemSpec()
    mesh = build_rect_mesh(spec.domain, nx, ny)
    dofmap = build_dofmap(mesh, degree)
    cases = []
    passed = True
    for method in ('nitsche', 'penalty'):
        solver = CavitationSolver(spec, SolverConfig(method=method))
        tables = solver.tables(dofmap)
        empty = ActiveState.empty(tables.n_elements, tables.rule.n_points)
        full = ActiveState(np.ones_like(empty.mask))
        for label, state in (('empty', empty), ('active', full)):
            system = solver.assemble_system(mesh, dofmap, state)
            A, _ = system.reduced()
            symmetric = system.asymmetry() == 0.0
            try:
                np.linalg.cholesky(A.toarray())
                spd = True
            except np.linalg.LinAlgError:
                spd = False
            passed = passed and symmetric and spd
            cases.append({'method': method, 'state': label, 'symmetric': symmetric, 'spd': spd})
    return {'name': f'systems_p{degree}', 'passed': passed, 'cases': cases}


def check_benchmark(rounds: int = 7) -> Result:
    """Peak pressure, sign and complementarity of the adaptive Nitsche P1 benchmark"""
    driver = AdaptiveDriver(RunConfig(rounds=rounds, export_vtk=False, export_csv=False))
    report = driver.run()
    p_max = report.final.p_max
    multiplier = driver.multiplier()
    norm_squared = float(np.sum(element_energy(driver.solver.tables(driver.dofmap), driver.field)))
    complementarity = driver.complementarity_residual()
    passed = (abs(p_max - BENCHMARK_PEAK) <= BENCHMARK_PEAK_TOLERANCE * BENCHMARK_PEAK
              and bool(np.all(multiplier >= 0.0))
              and complementarity <= 1e-6 * norm_squared
              and report.final.p_min >= -1e-2 * p_max)
    return {'name': 'benchmark', 'passed': passed, 'p_max': p_max, 'p_min': report.final.p_min,
            'complementarity': complementarity, 'slope': report.convergence_slope()}


def run_suite(benchmark: bool = False, refinements: int = 4) -> Tuple[bool, List[Result]]:
    """Run all checks; returns the overall verdict and the per-check results"""
    results = [
        check_quadrature(),
        check_interpolation(1),
        check_interpolation(2),
        check_mesh_refinement(),
        check_systems(1),
        check_systems(2),
        check_manufactured(1, refinements),
        check_manufactured(2, refinements),
    ]
    if benchmark:
        results.append(check_benchmark())
    for result in results:
        level = logging.INFO if result['passed'] else logging.ERROR
        logger.log(level, f"{result['name']}: {'passed' if result['passed'] else 'FAILED'}")
    return all(r['passed'] for r in results), results
