"""
Time grids, scenario controls, simulated path bundles and lattices.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from models.band import VolatilityBand
from services.errors import ConfigurationError


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing times 0 = t_0 < ... < t_N = T."""
    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size == 0:
            raise ConfigurationError("Time grid must be a non-empty 1-D array")
        if times[0] != 0.0:
            raise ConfigurationError(f"Time grid must start at 0, got {times[0]}")
        if times.size > 1 and np.any(np.diff(times) <= 0.0):
            raise ConfigurationError("Time grid must be strictly increasing")
        object.__setattr__(self, "times", times)

    @classmethod
    def uniform(cls, horizon: float, n_steps: int) -> "TimeGrid":
        if n_steps < 0:
            raise ConfigurationError(f"n_steps must be >= 0, got {n_steps}")
        if n_steps == 0:
            return cls(np.zeros(1))
        if horizon <= 0.0:
            raise ConfigurationError(f"horizon must be positive, got {horizon}")
        return cls(np.linspace(0.0, horizon, n_steps + 1))

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def dt(self) -> np.ndarray:
        """Per-step lengths, shape (N,)."""
        return np.diff(self.times)

    def same_as(self, other: "TimeGrid") -> bool:
        return self.times.shape == other.times.shape and bool(np.all(self.times == other.times))


@dataclass(frozen=True)
class ScenarioControl:
    """Piecewise-constant volatility control, one value per step."""
    grid: TimeGrid
    sigma_steps: np.ndarray
    label: str = ""

    def __post_init__(self):
        sigma = np.asarray(self.sigma_steps, dtype=float).reshape(-1)
        if sigma.size != self.grid.n_steps:
            raise ConfigurationError(
                f"Control has {sigma.size} steps, grid has {self.grid.n_steps}"
            )
        object.__setattr__(self, "sigma_steps", sigma)

    def validate(self, band: VolatilityBand) -> None:
        """Reject controls that leave the band."""
        if self.sigma_steps.size and not band.contains(self.sigma_steps):
            raise ConfigurationError(
                f"Control '{self.label}' leaves the band "
                f"[{band.sigma_lo}, {band.sigma_hi}]: "
                f"range [{self.sigma_steps.min()}, {self.sigma_steps.max()}]"
            )

    @property
    def qv_increments(self) -> np.ndarray:
        """Deterministic increments sigma_k^2 * dt_k of the quadratic variation."""
        return self.sigma_steps ** 2 * self.grid.dt

    @property
    def qv_path(self) -> np.ndarray:
        return np.concatenate(([0.0], np.cumsum(self.qv_increments)))


@dataclass
class PathBundle:
    """
    Per-scenario discretized paths on a shared grid.

    Attributes:
        grid: Shared time grid
        controls: One control per scenario
        B: Paths of B, shape (n_scenarios, n_samples, N + 1)
        qv: Quadratic variation per scenario, shape (n_scenarios, N + 1)
        seed: Root seed of the random streams
    """
    grid: TimeGrid
    controls: list[ScenarioControl]
    B: np.ndarray
    qv: np.ndarray
    seed: int
    band: Optional[VolatilityBand] = None

    @property
    def n_scenarios(self) -> int:
        return self.B.shape[0]

    @property
    def n_samples(self) -> int:
        return self.B.shape[1]

    @property
    def dB(self) -> np.ndarray:
        return np.diff(self.B, axis=-1)

    @property
    def dqv(self) -> np.ndarray:
        """Quadratic-variation increments broadcastable against dB."""
        return np.diff(self.qv, axis=-1)[:, None, :]

    def qv_paths(self) -> np.ndarray:
        """Quadratic variation broadcast to (n_scenarios, n_samples, N + 1)."""
        return np.broadcast_to(self.qv[:, None, :], self.B.shape)


@dataclass(frozen=True)
class LatticeGrid:
    """
    Uniform spatial grid in the B-coordinate with explicit time layers.

    Node i sits at nodes[i]; the root (B_0) is nodes[root_index].
    """
    time_grid: TimeGrid
    nodes: np.ndarray
    band: VolatilityBand
    root_index: int

    def __post_init__(self):
        if self.nodes.size < 3:
            raise ConfigurationError(f"Lattice needs at least 3 nodes, got {self.nodes.size}")
        if self.time_grid.n_steps < 1:
            raise ConfigurationError("Lattice needs at least one time step")

    @property
    def times(self) -> np.ndarray:
        return self.time_grid.times

    @property
    def n_steps(self) -> int:
        return self.time_grid.n_steps

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    @property
    def dt(self) -> float:
        return float(self.time_grid.dt[0])

    @property
    def dx(self) -> float:
        return float(self.nodes[1] - self.nodes[0])

    @property
    def stability_ratio(self) -> float:
        """sigma_hi^2 * dt / dx^2; the explicit scheme needs this <= 1/2."""
        return self.band.var_hi * self.dt / self.dx ** 2

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_steps + 1, self.n_nodes)

    def reachable_mask(self) -> np.ndarray:
        """Nodes reachable from the root after k steps: |i - root| <= k."""
        offsets = np.abs(np.arange(self.n_nodes) - self.root_index)
        steps = np.arange(self.n_steps + 1)[:, None]
        return offsets[None, :] <= steps

    def node_state(self) -> np.ndarray:
        """B-coordinate of every node, broadcast over time layers."""
        return np.broadcast_to(self.nodes[None, :], self.shape)


@dataclass
class Lattice:
    """Lattice grid plus one value layer per time."""
    grid: LatticeGrid
    values: np.ndarray = field(repr=False)

    @property
    def root_value(self) -> float:
        return float(self.values[0, self.grid.root_index])

    @property
    def band(self) -> VolatilityBand:
        return self.grid.band
