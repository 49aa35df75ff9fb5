"""
Journal bearing problem data: film thickness d, anisotropic diffusion
D = d^3 diag(1, c), loading f and the cavitation pressure p_c.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from finite_element_space import QuadratureRule, default_quadrature
from mesh import Mesh
from models import InvalidArgumentError

logger = logging.getLogger(__name__)

# 0.5483 followed by a repeating 88
DEFAULT_PHASE = 0.548388888888889
# bearing angle at theta = 0: the 120 degree pad is centred on the load line at pi
DEFAULT_ARC_START = 2.0 * math.pi / 3.0
QUASI_UNIFORMITY_LIMIT = 4.0

ScalarField = Callable[[np.ndarray, np.ndarray], np.ndarray]


class JournalBearingThickness:
    """
    d = 1 + eps cos(psi - phi) with psi = theta + arc_start the bearing angle.

    theta runs along the pad from its leading edge; the minimum film
    d = 1 - eps sits at psi = phi + pi.
    """

    def __init__(self, eccentricity: float, phase: float, arc_start: float = DEFAULT_ARC_START):
        self.eccentricity = eccentricity
        self.phase = phase
        self.arc_start = arc_start

    def bearing_angle(self, x):
        return np.asarray(x) + self.arc_start

    @property
    def thinnest(self) -> float:
        """theta of the minimum film, reduced to [0, 2 pi)"""
        return float((self.phase + math.pi - self.arc_start) % (2.0 * math.pi))

    def value(self, x, y):
        return 1.0 + self.eccentricity * np.cos(self.bearing_angle(x) - self.phase) + 0.0 * np.asarray(y)

    def gradient(self, x, y):
        dx = -self.eccentricity * np.sin(self.bearing_angle(x) - self.phase) + 0.0 * np.asarray(y)
        return np.stack([dx, np.zeros_like(dx)], axis=-1)


class ConstantThickness:
    def __init__(self, value: float):
        self.constant = float(value)

    def value(self, x, y):
        return np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, self.constant)

    def gradient(self, x, y):
        return np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape + (2,))


class CallableThickness:
    """Thickness from user callables; the gradient must be analytic"""

    def __init__(self, value: ScalarField, gradient: Callable[[np.ndarray, np.ndarray], np.ndarray]):
        self._value = value
        self._gradient = gradient

    def value(self, x, y):
        return np.asarray(self._value(x, y), dtype=float) + 0.0 * np.asarray(x)

    def gradient(self, x, y):
        g = np.asarray(self._gradient(x, y), dtype=float)
        return np.broadcast_to(g, np.broadcast(np.asarray(x), np.asarray(y)).shape + (2,)).copy()


@dataclass(frozen=True)
class ProblemSpec:
    """
    Dimensionless bearing problem on [0, theta_max] x [0, y_max].

    thickness and load default to the journal bearing film and
    f = -6 dd/dtheta; both can be replaced for verification problems.
    """
    theta_max: float = 2.0 * math.pi / 3.0
    y_max: float = 1.0
    eccentricity: float = 0.9
    phase: float = DEFAULT_PHASE
    arc_start: float = DEFAULT_ARC_START
    aspect_factor: float = 0.25
    cavitation_pressure: float = 0.0
    thickness: Optional[object] = None
    load: Optional[ScalarField] = None

    def __post_init__(self):
        if not (0.0 < self.theta_max <= 2.0 * math.pi + 1e-12):
            raise InvalidArgumentError(f"theta_max must lie in (0, 2 pi], got {self.theta_max}")
        if self.y_max <= 0.0:
            raise InvalidArgumentError(f"y_max must be positive, got {self.y_max}")
        if self.thickness is None and not (0.0 < self.eccentricity < 1.0):
            raise InvalidArgumentError(f"Eccentricity must lie in (0, 1), got {self.eccentricity}")
        if self.aspect_factor <= 0.0:
            raise InvalidArgumentError(f"Aspect factor (R/L)^2 must be positive, got {self.aspect_factor}")

    @property
    def domain(self) -> Tuple[float, float, float, float]:
        return (0.0, self.theta_max, 0.0, self.y_max)

    @property
    def area(self) -> float:
        return self.theta_max * self.y_max

    @property
    def film(self):
        if self.thickness is not None:
            return self.thickness
        return JournalBearingThickness(self.eccentricity, self.phase, self.arc_start)

    def coefficients(self) -> "CoefficientField":
        return CoefficientField(self)


class CoefficientField:
    """Analytic evaluators for d, grad d, D and the divergence of D's columns"""

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        self.film = spec.film
        self.c = spec.aspect_factor

    def d(self, x, y):
        return self.film.value(x, y)

    def grad_d(self, x, y):
        return self.film.gradient(x, y)

    def diffusion(self, x, y) -> np.ndarray:
        """Diagonal of D as (..., 2)"""
        d3 = self.d(x, y) ** 3
        return np.stack([d3, self.c * d3], axis=-1)

    def diffusion_divergence(self, x, y) -> np.ndarray:
        """(d/dtheta D_11, c d/dy D_22): divergence of the columns of diagonal D"""
        d = self.d(x, y)
        g = self.grad_d(x, y)
        scale = 3.0 * d ** 2
        return np.stack([scale * g[..., 0], self.c * scale * g[..., 1]], axis=-1)

    def load(self, x, y):
        if self.spec.load is not None:
            return np.asarray(self.spec.load(x, y), dtype=float) + 0.0 * np.asarray(x)
        return -6.0 * self.grad_d(x, y)[..., 0]


def d_value(spec: ProblemSpec, point) -> float:
    x, y = point
    return float(spec.film.value(np.asarray(x, dtype=float), np.asarray(y, dtype=float)))


def f_value(spec: ProblemSpec, point) -> float:
    x, y = point
    return float(CoefficientField(spec).load(np.asarray(x, dtype=float), np.asarray(y, dtype=float)))


def element_mean_thickness(spec: ProblemSpec, mesh: Mesh,
                           rule: Optional[QuadratureRule] = None) -> np.ndarray:
    """d_K for every element: quadrature-weighted average of d over K"""
    rule = rule or default_quadrature()
    points = np.einsum('qi,kid->kqd', rule.points, mesh.vertices[mesh.triangles])
    d = spec.film.value(points[..., 0], points[..., 1])
    return d @ rule.weights / rule.weights.sum()


def edge_mean_thickness(spec: ProblemSpec, mesh: Mesh,
                        rule: Optional[QuadratureRule] = None) -> np.ndarray:
    """d_E for every edge of the mesh"""
    rule = rule or default_quadrature()
    ends = mesh.vertices[mesh.edges]
    t = rule.edge_points[None, :, None]
    points = (1.0 - t) * ends[:, None, 0] + t * ends[:, None, 1]
    d = spec.film.value(points[..., 0], points[..., 1])
    return d @ rule.edge_weights / rule.edge_weights.sum()


def mean_d_element(spec: ProblemSpec, mesh: Mesh, K: int) -> float:
    if K < 0 or K >= mesh.n_triangles:
        raise InvalidArgumentError(f"Triangle index {K} out of range")
    return float(element_mean_thickness(spec, mesh)[K])


def mean_d_edge(spec: ProblemSpec, mesh: Mesh, E: int) -> float:
    if E < 0 or E >= mesh.n_edges:
        raise InvalidArgumentError(f"Edge index {E} out of range")
    return float(edge_mean_thickness(spec, mesh)[E])


def quasi_uniformity_ratio(spec: ProblemSpec, mesh: Mesh,
                           rule: Optional[QuadratureRule] = None) -> float:
    """Largest elementwise max(d)/min(d), sampled at vertices and quadrature points"""
    rule = rule or default_quadrature()
    samples = np.vstack([np.eye(3), rule.points])
    points = np.einsum('qi,kid->kqd', samples, mesh.vertices[mesh.triangles])
    d = spec.film.value(points[..., 0], points[..., 1])
    ratio = float(np.max(d.max(axis=1) / d.min(axis=1)))
    if ratio > QUASI_UNIFORMITY_LIMIT:
        logger.warning(f"Film thickness varies by factor {ratio:.2f} within one element")
    return ratio
