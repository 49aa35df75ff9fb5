import numpy as np
import pytest

from cavitation_solver import CavitationSolver, SolverConfig
from finite_element_space import build_dofmap
from mesh import Mesh, build_rect_mesh
from reynolds_problem import ConstantThickness, ProblemSpec


@pytest.fixture
def benchmark_spec():
    return ProblemSpec()


@pytest.fixture
def unit_diffusion_spec():
    """d = 1 and c = 1 on the unit square: D is the identity"""
    return ProblemSpec(theta_max=1.0, y_max=1.0, aspect_factor=1.0, thickness=ConstantThickness(1.0))


@pytest.fixture
def unit_square():
    return build_rect_mesh((0.0, 1.0, 0.0, 1.0), 1, 1)


@pytest.fixture
def reference_triangle():
    return Mesh([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], [(0, 1, 2)], (0.0, 1.0, 0.0, 1.0))


@pytest.fixture
def coarse_mesh(benchmark_spec):
    return build_rect_mesh(benchmark_spec.domain, 4, 4)


@pytest.fixture
def benchmark_mesh(benchmark_spec):
    return build_rect_mesh(benchmark_spec.domain, 12, 8)


@pytest.fixture(params=[1, 2], ids=['P1', 'P2'])
def degree(request):
    return request.param


@pytest.fixture
def coarse_dofmap(coarse_mesh, degree):
    return build_dofmap(coarse_mesh, degree)


@pytest.fixture
def nitsche_solver(benchmark_spec):
    return CavitationSolver(benchmark_spec, SolverConfig(method='nitsche'))


@pytest.fixture
def penalty_solver(benchmark_spec):
    return CavitationSolver(benchmark_spec, SolverConfig(method='penalty'))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def write_config(tmp_path):
    """Write an INI run configuration and return its path"""
    def _write(text: str, name: str = 'run.cfg'):
        path = tmp_path / name
        path.write_text(text)
        return str(path)
    return _write


SMALL_RUN = """
[problem]
theta_max = 2*pi/3
eccentricity = 0.9

[solver]
method = nitsche
alpha = 0.01

[adaptive]
degree = 1
beta = 0.5
rounds = 1
nx = 6
ny = 4
"""


@pytest.fixture
def small_run_config(write_config):
    return write_config(SMALL_RUN)
