"""
Solution containers and diagnostic reports.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from models.grids import LatticeGrid, TimeGrid
from services.errors import ConfigurationError


@dataclass
class BackwardSolution:
    """
    Discretized (Y, Z, A) of a reflected backward equation.

    On the lattice backend arrays have shape (N + 1, n_nodes). On the
    scenario backend arrays have shape (n_scenarios, n_samples, N + 1).

    dA[k] is the push applied at t_k, after the unreflected step. A starts
    at A_0 = 0 before the push at t_0, so A after step k is the sum of
    dA[0..k] and the push at t_0 may be positive.
    """
    Y: np.ndarray
    Z: np.ndarray
    dA: np.ndarray
    L: np.ndarray
    backend: str
    time_grid: TimeGrid
    lattice: Optional[LatticeGrid] = None
    rank_deficient_steps: list[int] = field(default_factory=list)

    @property
    def y0(self) -> float:
        """Value at the root; for scenarios the family maximum of the mean."""
        if self.backend == "lattice":
            return float(self.Y[0, self.lattice.root_index])
        return float(np.max(np.mean(self.Y[..., 0], axis=1)))

    @property
    def floor_contact(self) -> np.ndarray:
        """Indicators of steps where the barrier pushed."""
        return self.dA > 0.0

    def a_path(self) -> np.ndarray:
        """
        A along each scenario path, shape (n_scenarios, n_samples, N + 2).

        Column 0 is A_0 = 0; column k + 1 is A after the push at t_k.
        """
        if self.backend != "scenario":
            raise ConfigurationError("a_path needs scenario paths; use additive_expectation on the lattice")
        zeros = np.zeros(self.dA.shape[:-1] + (1,))
        return np.concatenate((zeros, np.cumsum(self.dA, axis=-1)), axis=-1)

    def mask(self) -> np.ndarray:
        """Nodes that carry meaningful values for diagnostics."""
        if self.backend == "lattice":
            return self.lattice.reachable_mask()
        return np.ones(self.Y.shape, dtype=bool)


@dataclass
class DefectReport:
    """Martingale (complementarity) defect of a reflected solution."""
    defect: float
    pathwise: float
    profile: np.ndarray

    def as_lines(self) -> list[str]:
        return [f"martingale_defect: {self.defect:.6e}", f"pathwise_complementarity: {self.pathwise:.6e}"]


@dataclass
class LadderReport:
    """Outcome of a monotone Lipschitz-ladder forward solve."""
    levels: list[float]
    deltas: list[float]
    violations: list[float]
    converged: bool

    @property
    def n_levels_used(self) -> int:
        return len(self.levels)


@dataclass
class IterationRecord:
    """Diagnostics of one outer iteration n."""
    iteration: int
    delta_x: float
    delta_y: float
    violation_x: float
    violation_y: float
    margin_s: float
    margin_u: float
    margin_l: float
    defect: float
    z_norm: float


@dataclass
class IterationReport:
    """History of the outer monotone iteration."""
    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    converged_iteration: Optional[int] = None
    slack: float = 0.0
    z_norm_guard: Optional[float] = None

    def append(self, record: IterationRecord) -> None:
        self.records.append(record)

    @property
    def n_iterations(self) -> int:
        return len(self.records)

    def as_lines(self) -> list[str]:
        lines = [
            f"converged: {self.converged}",
            f"converged_iteration: {self.converged_iteration}",
            f"iterations: {self.n_iterations}",
            f"slack: {self.slack:.6e}",
        ]
        if self.records:
            last = self.records[-1]
            lines += [
                f"final_delta_x: {last.delta_x:.6e}",
                f"final_delta_y: {last.delta_y:.6e}",
                f"final_defect: {last.defect:.6e}",
                f"final_z_norm: {last.z_norm:.6e}",
            ]
        return lines


@dataclass
class SolutionQuadruple:
    """Discretized (X, Y, Z, A) of the coupled system plus the envelopes."""
    X: np.ndarray
    backward: BackwardSolution
    S: np.ndarray
    lower_start: BackwardSolution
    upper_envelope: BackwardSolution
    X_levels: Optional[LadderReport] = None

    @property
    def Y(self) -> np.ndarray:
        return self.backward.Y

    @property
    def Z(self) -> np.ndarray:
        return self.backward.Z

    @property
    def dA(self) -> np.ndarray:
        return self.backward.dA

    @property
    def lattice(self) -> LatticeGrid:
        return self.backward.lattice


@dataclass
class ResidualReport:
    """Sup-norm residuals of the discrete equations replayed on a solution."""
    forward: float
    backward: float
    z: float
    reflection_gap: float
    defect: float

    def as_lines(self) -> list[str]:
        return [
            f"forward_residual: {self.forward:.6e}",
            f"backward_residual: {self.backward:.6e}",
            f"z_residual: {self.z:.6e}",
            f"min_reflection_gap: {self.reflection_gap:.6e}",
            f"martingale_defect: {self.defect:.6e}",
        ]
