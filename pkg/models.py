"""
Record types and exceptions shared across the solver modules.
"""
from dataclasses import dataclass, field, asdict
from typing import Any, Dict, List, Optional

import numpy as np


class CavitationError(Exception):
    """Base class for all solver errors"""


class InvalidArgumentError(CavitationError, ValueError):
    """Raised when an operation receives an argument outside its domain"""


class NotPositiveDefiniteError(CavitationError):
    """Raised when a reduced system fails the SPD check"""

    def __init__(self, message: str, pivot: Optional[float] = None):
        super().__init__(message)
        self.pivot = pivot


class NonConvergenceError(CavitationError):
    """Raised when the fixed-point iteration hits its iteration cap"""

    def __init__(self, message: str, log: Optional["IterationLog"] = None):
        super().__init__(message)
        self.log = log
        self.report = None  # attached by the adaptive driver


class ConfigError(CavitationError):
    """Raised for unreadable or invalid run configuration"""


class ExportError(CavitationError, OSError):
    """Raised when writing or reading an artifact fails"""

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(message)
        self.path = path


@dataclass
class IterationRecord:
    iteration: int
    increment_norm: float
    active_points: int
    linear_residual: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class IterationLog:
    """Per-step history of one fixed-point solve"""
    records: List[IterationRecord] = field(default_factory=list)
    converged: bool = False
    reason: str = ""

    def append(self, record: IterationRecord):
        if not np.isfinite(record.increment_norm):
            raise NonConvergenceError(
                f"Non-finite increment at iteration {record.iteration}", log=self)
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    @property
    def iterations(self) -> int:
        return len(self.records)

    def to_rows(self) -> List[Dict[str, Any]]:
        return [r.to_dict() for r in self.records]


@dataclass
class EstimatorReport:
    """
    Elementwise estimator terms (all squared quantities).

    residual: h_K^2/d_K^3 ||E p_h + lambda_h + f||^2_K
    edge: half-weighted flux jump term over the interior edges of K
    violation: energy norm of (p_c - p_h)_+ on K
    complementarity: integral of (p_h - p_c)_+ lambda_h over K
    """
    residual: np.ndarray
    edge: np.ndarray
    violation: np.ndarray
    complementarity: np.ndarray
    ndofs: int
    method: str = "nitsche"

    @property
    def eta_squared(self) -> np.ndarray:
        return self.residual + self.edge + self.violation + self.complementarity

    @property
    def eta(self) -> np.ndarray:
        return np.sqrt(self.eta_squared)

    @property
    def total(self) -> float:
        return float(np.sqrt(np.sum(self.eta_squared)))

    @property
    def n_elements(self) -> int:
        return int(self.residual.shape[0])

    def term_totals(self) -> Dict[str, float]:
        return {
            'residual': float(np.sum(self.residual)),
            'edge': float(np.sum(self.edge)),
            'violation': float(np.sum(self.violation)),
            'complementarity': float(np.sum(self.complementarity)),
        }


@dataclass
class RoundRecord:
    round: int
    ndofs: int
    eta_total: float
    p_max: float
    p_min: float
    iterations: int
    wall_time: float
    n_elements: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class RunReport:
    """History of an adaptive run"""
    rounds: List[RoundRecord] = field(default_factory=list)
    cavitated_fraction: float = 0.0
    metadata: Dict[str, Any] = field(default_factory=dict)
    completed: bool = False

    @property
    def ndofs(self) -> List[int]:
        return [r.ndofs for r in self.rounds]

    @property
    def eta_totals(self) -> List[float]:
        return [r.eta_total for r in self.rounds]

    @property
    def final(self) -> Optional[RoundRecord]:
        return self.rounds[-1] if self.rounds else None

    def convergence_slope(self, first: int = 0) -> float:
        """Least-squares slope of log(eta) against log(ndofs)"""
        ndofs = np.asarray(self.ndofs[first:], dtype=float)
        eta = np.asarray(self.eta_totals[first:], dtype=float)
        if ndofs.size < 2:
            raise InvalidArgumentError("Need at least two rounds to fit a slope")
        slope, _ = np.polyfit(np.log(ndofs), np.log(eta), 1)
        return float(slope)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'rounds': [r.to_dict() for r in self.rounds],
            'cavitated_fraction': self.cavitated_fraction,
            'metadata': dict(self.metadata),
            'completed': self.completed,
        }
