"""
Explicit monotone lattice solver for the G-heat equation.

One backward step applies u <- u + dt * G(D^2 u), which is the maximum of
the two classical explicit heat steps at sigma_lo and sigma_hi and so is
itself a sublinear expectation under the stability bound
sigma_hi^2 dt / dx^2 <= 1/2.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import pandas as pd

from models.band import VolatilityBand
from models.grids import Lattice, LatticeGrid, TimeGrid
from services.errors import ConfigurationError
from services.gcore import g_function


logger = logging.getLogger(__name__)


STABILITY_LIMIT = 0.5
TAIL_WARNING = 1e-6


@dataclass(frozen=True)
class LatticeConfig:
    """
    Resolution of the lattice.

    Attributes:
        horizon: Terminal time T
        n_steps: Number of time steps N
        x0: Root of the B-coordinate
        courant: Target sigma_hi^2 dt / dx^2 used to derive dx
        width_sigmas: Half-width of the domain in units of sigma_hi sqrt(T)
        dx: Explicit spacing; overrides courant when set
    """
    horizon: float = 1.0
    n_steps: int = 200
    x0: float = 0.0
    courant: float = 0.5
    width_sigmas: float = 6.0
    dx: Optional[float] = None

    def __post_init__(self):
        if self.horizon <= 0.0:
            raise ConfigurationError(f"horizon must be positive, got {self.horizon}")
        if self.n_steps < 1:
            raise ConfigurationError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.courant <= 0.0:
            raise ConfigurationError(f"courant must be positive, got {self.courant}")


def check_stability(band: VolatilityBand, dt: float, dx: float) -> float:
    """
    Return the stability ratio, raising if it exceeds 1/2.

    Raises:
        ConfigurationError: With the offending ratio
    """
    ratio = band.var_hi * dt / dx ** 2
    if ratio > STABILITY_LIMIT * (1.0 + 1e-12):
        raise ConfigurationError(
            f"Explicit scheme unstable: sigma_hi^2*dt/dx^2 = {ratio:.6f} > {STABILITY_LIMIT}"
        )
    return ratio


def build_lattice(band: VolatilityBand, config: LatticeConfig) -> LatticeGrid:
    """Uniform node grid centred on x0 covering |x| <= |x0| + width*sigma_hi*sqrt(T)."""
    time_grid = TimeGrid.uniform(config.horizon, config.n_steps)
    dt = config.horizon / config.n_steps
    dx = config.dx if config.dx is not None else band.sigma_hi * math.sqrt(dt / config.courant)
    check_stability(band, dt, dx)

    half_width = abs(config.x0) + config.width_sigmas * band.sigma_hi * math.sqrt(config.horizon)
    n_half = max(1, int(math.ceil(half_width / dx)))
    nodes = config.x0 + dx * np.arange(-n_half, n_half + 1, dtype=float)

    grid = LatticeGrid(time_grid=time_grid, nodes=nodes, band=band, root_index=n_half)
    # Gaussian mass at sigma_hi that falls outside the truncated domain
    tail = math.erfc(config.width_sigmas / math.sqrt(2.0))
    if tail > TAIL_WARNING:
        logger.warning(
            f"Lattice truncated at {config.width_sigmas} sigmas; tail mass {tail:.2e} sees the boundary"
        )
    logger.debug(
        f"Lattice built: {grid.n_nodes} nodes, {grid.n_steps} steps, "
        f"dx={dx:.4g}, ratio={grid.stability_ratio:.4f}"
    )
    return grid


def second_difference(values, dx: float) -> np.ndarray:
    """
    Centred second difference along the last axis.

    Boundary nodes use linear extrapolation, so their second difference is 0.
    """
    values = np.asarray(values, dtype=float)
    d2 = np.zeros_like(values)
    d2[..., 1:-1] = (values[..., 2:] - 2.0 * values[..., 1:-1] + values[..., :-2]) / dx ** 2
    return d2


def first_difference(values, dx: float) -> np.ndarray:
    """Centred first difference; one-sided at the two boundary nodes."""
    values = np.asarray(values, dtype=float)
    d1 = np.empty_like(values)
    d1[..., 1:-1] = (values[..., 2:] - values[..., :-2]) / (2.0 * dx)
    d1[..., 0] = (values[..., 1] - values[..., 0]) / dx
    d1[..., -1] = (values[..., -1] - values[..., -2]) / dx
    return d1


def conditional_expectation_step(values, band: VolatilityBand, dt: float, dx: float,
                                 quadratic_term=None) -> np.ndarray:
    """
    One backward step of the conditional G-expectation.

    Args:
        values: Layer at t_{k+1}
        band: Volatility band
        dt: Step length
        dx: Node spacing
        quadratic_term: Optional per-node g; the step then applies
            G(D^2 u + 2 g), i.e. the d<B> driver weighted by the variance
            that attains the maximum

    Returns:
        Layer at t_k
    """
    check_stability(band, dt, dx)
    values = np.asarray(values, dtype=float)
    curvature = second_difference(values, dx)
    if quadratic_term is not None:
        curvature = curvature + 2.0 * np.asarray(quadratic_term, dtype=float)
    return values + dt * g_function(curvature, band)


def classical_heat_step(values, sigma: float, dt: float, dx: float) -> np.ndarray:
    """Linear explicit heat step u + dt * sigma^2/2 * D^2 u."""
    values = np.asarray(values, dtype=float)
    return values + dt * 0.5 * sigma ** 2 * second_difference(values, dx)


def solve_gheat(phi: Callable[[np.ndarray], np.ndarray], band: VolatilityBand,
                config: LatticeConfig) -> Lattice:
    """
    Solve u(t, x) = Ê[phi(x + B_{T-t})] backward on the lattice.

    values[k] approximates the solution at time t_k with terminal layer phi,
    so values[0] is Ê[phi(x + B_T)].
    """
    grid = build_lattice(band, config)
    values = np.empty(grid.shape)
    values[-1] = np.asarray(phi(grid.nodes), dtype=float)
    for k in range(grid.n_steps - 1, -1, -1):
        values[k] = conditional_expectation_step(values[k + 1], band, grid.dt, grid.dx)

    lattice = Lattice(grid=grid, values=values)
    logger.info(f"G-heat solved: root value {lattice.root_value:.6f}")
    return lattice


def additive_expectation(grid: LatticeGrid, running) -> np.ndarray:
    """
    Root G-expectations of partial sums of a running path functional.

    Args:
        grid: Lattice grid
        running: Per-node increments c_k(B_k), shape (N + 1, n_nodes)

    Returns:
        profile[m] = Ê[sum_{k < m} c_k(B_k)] for m = 0..N+1
    """
    running = np.asarray(running, dtype=float)
    profile = np.zeros(grid.n_steps + 2)
    for m in range(1, grid.n_steps + 2):
        layer = running[m - 1].copy()
        for k in range(m - 2, -1, -1):
            layer = running[k] + conditional_expectation_step(layer, grid.band, grid.dt, grid.dx)
        profile[m] = layer[grid.root_index]
    return profile


def additive_total(grid: LatticeGrid, running) -> float:
    """Root G-expectation of the full sum sum_k c_k(B_k)."""
    running = np.asarray(running, dtype=float)
    layer = running[-1].copy()
    for k in range(grid.n_steps - 1, -1, -1):
        layer = running[k] + conditional_expectation_step(layer, grid.band, grid.dt, grid.dx)
    return float(layer[grid.root_index])


def lattice_frame(grid: LatticeGrid, columns: dict[str, np.ndarray]) -> pd.DataFrame:
    """Long-format table (t, x, <columns>) of per-node surfaces."""
    t = np.repeat(grid.times, grid.n_nodes)
    x = np.tile(grid.nodes, grid.n_steps + 1)
    data = {"t": t, "x": x}
    for name, surface in columns.items():
        data[name] = np.asarray(surface, dtype=float).reshape(-1)
    return pd.DataFrame(data)
