import math

import numpy as np
import pytest

from adaptive_driver import (AdaptiveDriver, ParameterSweep, RunConfig, adaptive_solve,
                             export_solution, load_run_config)
from app import parse_bool, parse_number, read_config_file
from assembly import DiscreteField
from cavitation_solver import CavitationSolver
from finite_element_space import build_dofmap
from models import ConfigError, InvalidArgumentError, IterationLog, NonConvergenceError
from vtk_export import HISTORY_COLUMNS, read_csv_rows, read_vtk_scalars, write_history_csv


def _small(**changes) -> RunConfig:
    config = RunConfig(nx=6, ny=4, rounds=2, export_vtk=False, export_csv=False)
    return config.replace(**changes)


def test_parse_number_accepts_pi_expressions():
    assert parse_number("2*pi/3") == pytest.approx(2 * math.pi / 3)
    assert parse_number("-1e-2") == pytest.approx(-0.01)
    with pytest.raises(ConfigError):
        parse_number("__import__('os')")
    with pytest.raises(ConfigError):
        parse_number("2 *")


@pytest.mark.parametrize("text,expected", [("true", True), ("No", False), ("1", True), ("off", False)])
def test_parse_bool(text, expected):
    assert parse_bool(text) is expected


def test_load_run_config(small_run_config):
    config = load_run_config(small_run_config)
    assert config.problem.theta_max == pytest.approx(2 * math.pi / 3)
    assert config.solver.method == 'nitsche'
    assert config.solver.alpha == pytest.approx(0.01)
    assert (config.nx, config.ny, config.rounds) == (6, 4, 1)


def test_overrides_take_precedence(small_run_config, monkeypatch, tmp_path):
    monkeypatch.setenv("CAVITATION_OUTPUT_DIR", str(tmp_path / "env"))
    config = load_run_config(small_run_config, {'adaptive': {'degree': 2, 'beta': None},
                                                'solver': {'method': 'penalty'}})
    assert config.degree == 2
    assert config.beta == 0.5
    assert config.solver.method == 'penalty'
    assert config.output_dir == str(tmp_path / "env")
    config = load_run_config(small_run_config, {'output': {'directory': str(tmp_path / "cli")}})
    assert config.output_dir == str(tmp_path / "cli")


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        read_config_file(str(tmp_path / "absent.cfg"))


@pytest.mark.parametrize("text", [
    "[mesh]\nnx = 3\n",
    "[solver]\nmethod = lagrange\n",
    "[adaptive]\nbeta = 1.5\n",
    "[adaptive]\nwidth = 3\n",
    "[problem]\neccentricity = high\n",
])
def test_invalid_config_rejected(write_config, text):
    with pytest.raises(ConfigError):
        load_run_config(write_config(text))


@pytest.mark.parametrize("kwargs", [{'rounds': -1}, {'beta': 0.0}, {'degree': 3}, {'nx': 0}])
def test_run_config_validation(kwargs):
    with pytest.raises(InvalidArgumentError):
        RunConfig(**kwargs)


def test_zero_rounds_is_single_solve():
    report = adaptive_solve(_small(rounds=0))
    assert len(report.rounds) == 1
    assert report.completed
    assert report.rounds[0].n_elements == 48


def test_adaptive_run_grows_mesh_and_reduces_estimator():
    driver = AdaptiveDriver(_small(rounds=3))
    report = driver.run()
    assert len(report.rounds) == 4
    assert report.ndofs == sorted(report.ndofs)
    assert report.ndofs[-1] > report.ndofs[0]
    assert report.eta_totals[-1] < report.eta_totals[0]
    assert 0.0 < report.cavitated_fraction < 1.0
    assert driver.mesh.is_conforming()
    assert np.all(driver.multiplier() >= 0.0)
    assert report.metadata['method'] == 'nitsche'
    assert 'dunavant' in report.metadata['quadrature']


def test_runs_are_deterministic(tmp_path):
    first = adaptive_solve(_small(output_dir=str(tmp_path / "a"), export_csv=True))
    second = adaptive_solve(_small(output_dir=str(tmp_path / "b"), export_csv=True))
    assert [r.eta_total for r in first.rounds] == [r.eta_total for r in second.rounds]
    assert (tmp_path / "a" / "history.csv").read_bytes() == (tmp_path / "b" / "history.csv").read_bytes()


def test_exports_written(tmp_path):
    config = _small(output_dir=str(tmp_path), export_vtk=True, export_csv=True,
                    export_estimators=True, export_iterations=True)
    driver = AdaptiveDriver(config)
    report = driver.run()
    for name in ("solution.vtk", "history.csv", "round_00_estimators.csv", "round_02_iterations.csv"):
        assert (tmp_path / name).exists()

    rows = read_csv_rows(str(tmp_path / "history.csv"))
    assert list(rows[0].keys()) == HISTORY_COLUMNS
    for row, record in zip(rows, report.rounds):
        assert row['ndofs'] == record.ndofs
        assert row['eta_total'] == record.eta_total
        assert row['p_max'] == record.p_max

    pressure = read_vtk_scalars(str(tmp_path / "solution.vtk"), 'pressure')
    np.testing.assert_array_equal(pressure, driver.field.values[:driver.mesh.n_vertices])
    estimators = read_csv_rows(str(tmp_path / "round_00_estimators.csv"))
    assert len(estimators) == report.rounds[0].n_elements


def test_zero_field_exports_zero_scalars(tmp_path, coarse_mesh):
    dofmap = build_dofmap(coarse_mesh, 1)
    path = str(tmp_path / "zero.vtk")
    export_solution(coarse_mesh, dofmap, DiscreteField.zeros(dofmap), np.zeros((coarse_mesh.n_triangles, 6)), path)
    np.testing.assert_array_equal(read_vtk_scalars(path, 'pressure'), 0.0)
    np.testing.assert_array_equal(read_vtk_scalars(path, 'multiplier'), 0.0)


def test_history_csv_keeps_metadata(tmp_path):
    report = adaptive_solve(_small(rounds=0))
    path = write_history_csv(report, str(tmp_path / "h.csv"))
    with open(path) as fp:
        header = [line for line in fp if line.startswith('#')]
    assert "# method=nitsche\n" in header


def test_nonconvergence_attaches_partial_report(monkeypatch):
    real = CavitationSolver.fixed_point_solve
    calls = []

    def fail_after_first_round(self, mesh, dofmap, initial=None):
        calls.append(mesh.n_triangles)
        if len(calls) > 1:
            raise NonConvergenceError("Fixed-point iteration did not converge in 1 iterations", log=IterationLog())
        return real(self, mesh, dofmap, initial)

    monkeypatch.setattr(CavitationSolver, 'fixed_point_solve', fail_after_first_round)
    with pytest.raises(NonConvergenceError) as info:
        adaptive_solve(_small(rounds=3))
    report = info.value.report
    assert report is not None
    assert not report.completed
    assert len(report.rounds) == 1
    assert report.rounds[0].n_elements == 48


def test_free_boundary_ratio_after_refinement():
    driver = AdaptiveDriver(_small(nx=12, ny=8, rounds=4))
    driver.run()
    ratio = driver.free_boundary_refinement_ratio()
    assert ratio < 1.0


def test_parameter_sweep(tmp_path):
    sweep = ParameterSweep(_small(rounds=1, output_dir=str(tmp_path)), 'alpha', [1e-2, 5e-3], workers=2)
    results = sweep.run()
    assert [r['value'] for r in results] == [1e-2, 5e-3]
    assert all(r['converged'] for r in results)
    assert results[0]['report'].metadata['alpha'] == 1e-2
    rows = read_csv_rows(str(tmp_path / "sweep_alpha.csv"))
    assert [row['value'] for row in rows] == [1e-2, 5e-3]


def test_sweep_rejects_unknown_parameter():
    with pytest.raises(InvalidArgumentError):
        ParameterSweep(_small(), 'beta', [0.3])


def test_sweep_keeps_going_past_indefinite_system(tmp_path):
    # alpha = 50 is far above the inverse estimate constant for P2
    sweep = ParameterSweep(_small(rounds=0, degree=2, output_dir=str(tmp_path)), 'alpha', [1e-2, 50.0])
    results = sweep.run()
    assert [r['value'] for r in results] == [1e-2, 50.0]
    assert results[0]['converged'] and results[0]['error'] == ''
    assert results[1]['report'] is None
    assert not results[1]['converged']
    assert "alpha" in results[1]['error']

    rows = read_csv_rows(str(tmp_path / "sweep_alpha.csv"))
    assert [row['value'] for row in rows] == [1e-2, 50.0]
    assert rows[0]['converged'] == 1
    assert rows[1]['converged'] == 0
    assert rows[1]['ndofs'] == 0
    assert "alpha" in rows[1]['error']
