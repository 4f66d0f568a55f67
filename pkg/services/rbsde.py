"""
Reflected G-BSDE solvers.

The lattice backend runs backward induction with the G-step, the drivers
and a nodewise reflection max(., L) whose gap is absorbed by dA. The
scenario backend solves a penalized classical BSDE per control by
least-squares regression on simulated paths and serves as a cross-check.
"""

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from models.band import VolatilityBand
from models.coefficients import BackwardSpec, GrowthBoundedFunction
from models.grids import LatticeGrid, PathBundle
from models.solution import BackwardSolution, DefectReport
from services.approx import approximated
from services.errors import ConfigurationError, NumericalError
from services.gcore import g_function
from services.glattice import (
    LatticeConfig,
    additive_expectation,
    additive_total,
    build_lattice,
    check_stability,
    first_difference,
    lattice_frame,
    second_difference,
)


logger = logging.getLogger(__name__)


PICARD_SPLIT_DT = 0.01


def picard_passes(dt: float) -> int:
    """One implicit-y pass, two when the step is coarse."""
    return 2 if dt > PICARD_SPLIT_DT else 1


def _lipschitz_driver(driver: GrowthBoundedFunction, ladder_level: Optional[float],
                      grid_options: Optional[dict]) -> GrowthBoundedFunction:
    if driver.lipschitz is not None:
        return driver if ladder_level is None else approximated(driver, ladder_level, **(grid_options or {}))
    if ladder_level is None:
        raise ConfigurationError(
            f"Driver {driver.label} has no Lipschitz constant; supply a ladder level"
        )
    return approximated(driver, ladder_level, **(grid_options or {}))


def backward_layer(y_next, x_layer, t: float, grid: LatticeGrid, f: GrowthBoundedFunction,
                   g: GrowthBoundedFunction) -> tuple[np.ndarray, np.ndarray]:
    """
    Unreflected value and Z at layer k from layer k + 1.

    y = Y_{k+1} + dt G(D^2 Y_{k+1} + 2 g) + dt f, with the implicit y
    resolved by Picard passes started from the plain G-step.

    Returns:
        (y_tilde, z)
    """
    dt, dx, band = grid.dt, grid.dx, grid.band
    curvature = second_difference(y_next, dx)
    z = first_difference(y_next, dx)
    y = y_next + dt * g_function(curvature, band)
    for _ in range(picard_passes(dt)):
        state = {"x": x_layer, "y": y, "z": z}
        g_val = g.call_named(t, **state)
        f_val = f.call_named(t, **state)
        y = y_next + dt * g_function(curvature + 2.0 * g_val, band) + dt * f_val
    return y, z


def solve_rbsde_lattice(spec: BackwardSpec, band: VolatilityBand, config: LatticeConfig,
                        x_nodes=None, ladder_level: Optional[float] = None,
                        grid_options: Optional[dict] = None,
                        grid: Optional[LatticeGrid] = None) -> BackwardSolution:
    """
    Backward induction with reflection on the lattice.

    Args:
        spec: Terminal value, drivers and barrier
        band: Volatility band
        config: Lattice resolution (ignored when `grid` is given)
        x_nodes: Forward process on the nodes, shape (N + 1, n_nodes); the
            B-coordinate is used when absent
        ladder_level: Lipschitz level applied to the drivers
        grid_options: Inf-convolution grid options

    Returns:
        BackwardSolution with Y, Z, dA of shape (N + 1, n_nodes)
    """
    grid = grid or build_lattice(band, config)
    check_stability(grid.band, grid.dt, grid.dx)
    f = _lipschitz_driver(spec.driver_f, ladder_level, grid_options)
    g = _lipschitz_driver(spec.driver_g, ladder_level, grid_options)

    states = grid.node_state()
    x_nodes = states if x_nodes is None else np.broadcast_to(np.asarray(x_nodes, dtype=float), grid.shape)

    L = np.vstack([spec.barrier(t, grid.nodes) for t in grid.times])
    Y = np.empty(grid.shape)
    Z = np.zeros(grid.shape)
    dA = np.zeros(grid.shape)

    xi = spec.terminal_values(grid.nodes)
    gap = xi - L[-1]
    if np.any(gap < 0.0):
        logger.warning(
            f"Terminal value below barrier on {int(np.sum(gap < 0.0))} nodes; reflecting the terminal layer"
        )
    Y[-1] = np.maximum(xi, L[-1])
    dA[-1] = Y[-1] - xi

    for k in range(grid.n_steps - 1, -1, -1):
        y_tilde, Z[k] = backward_layer(Y[k + 1], x_nodes[k], grid.times[k], grid, f, g)
        Y[k] = np.maximum(y_tilde, L[k])
        dA[k] = Y[k] - y_tilde
        if not np.all(np.isfinite(Y[k])):
            raise NumericalError(f"solve_rbsde_lattice: non-finite values at step {k}", step=k)

    solution = BackwardSolution(Y=Y, Z=Z, dA=dA, L=L, backend="lattice",
                                time_grid=grid.time_grid, lattice=grid)
    logger.debug(f"Lattice RBSDE solved: Y0={solution.y0:.6f}")
    return solution


def _basis(state: np.ndarray, degree: int, extra: Optional[np.ndarray] = None) -> np.ndarray:
    columns = [state ** d for d in range(degree + 1)]
    if extra is not None:
        columns.append(extra)
    return np.stack(columns, axis=-1)


@dataclass(frozen=True)
class RegressionConfig:
    """Polynomial least-squares regression settings."""
    degree: int = 3
    rcond: Optional[float] = None


def _regress(basis: np.ndarray, target: np.ndarray, rcond) -> tuple[np.ndarray, int]:
    coeffs, _, rank, _ = np.linalg.lstsq(basis, target, rcond=rcond)
    return basis @ coeffs, int(rank)


def solve_rbsde_penalized(spec: BackwardSpec, bundle: PathBundle, penalty: float,
                          regression: RegressionConfig = RegressionConfig(),
                          x_input=None) -> BackwardSolution:
    """
    Penalized classical BSDE per scenario, solved by backward regression.

    The penalty (1/eps)(Y - L)^- enters implicitly, so each step has the
    closed form Y = (E + (dt/eps) L) / (1 + dt/eps) where E < L.

    Args:
        spec: Backward data; drivers take (x, y, z)
        bundle: Simulated paths, one scenario per control
        penalty: eps > 0
        regression: Basis settings
        x_input: Forward process aligned with bundle.B; B is used when absent

    Returns:
        BackwardSolution on the scenario backend; y0 is the family maximum
    """
    if penalty <= 0.0:
        raise ConfigurationError(f"penalty must be positive, got {penalty}")
    if bundle.grid.n_steps == 0:
        raise ConfigurationError("penalized solve needs at least one time step")

    f, g = spec.driver_f, spec.driver_g
    shape = bundle.B.shape
    X = bundle.B if x_input is None else np.broadcast_to(np.asarray(x_input, dtype=float), shape)
    times = bundle.grid.times
    L = np.stack([spec.barrier(times[k], bundle.B[..., k]) for k in range(times.size)], axis=-1)

    Y = np.empty(shape)
    Z = np.zeros(shape)
    dA = np.zeros(shape)
    Y[..., -1] = spec.terminal_values(bundle.B[..., -1])
    rank_deficient = []

    for j in range(bundle.n_scenarios):
        sigma2 = bundle.controls[j].sigma_steps ** 2
        for k in range(bundle.grid.n_steps - 1, -1, -1):
            dt = bundle.grid.dt[k]
            y_next = Y[j, :, k + 1]
            dB = bundle.B[j, :, k + 1] - bundle.B[j, :, k]
            if k == 0 or np.ptp(bundle.B[j, :, k]) == 0.0:
                expected = np.full_like(y_next, np.mean(y_next))
                z = np.full_like(y_next, np.mean(y_next * dB) / (sigma2[k] * dt)) if sigma2[k] > 0 else np.zeros_like(y_next)
            else:
                extra = X[j, :, k] if x_input is not None else None
                basis = _basis(bundle.B[j, :, k], regression.degree, extra)
                expected, rank = _regress(basis, y_next, regression.rcond)
                if rank < basis.shape[1]:
                    rank_deficient.append(k)
                if rank == 0:
                    raise NumericalError(f"Regression collapsed at step {k}", step=k)
                if sigma2[k] > 0:
                    z, _ = _regress(basis, y_next * dB / (sigma2[k] * dt), regression.rcond)
                else:
                    z = np.zeros_like(y_next)

            state = {"x": X[j, :, k], "y": expected, "z": z}
            drift = dt * f.call_named(times[k], **state) + sigma2[k] * dt * g.call_named(times[k], **state)
            candidate = expected + drift
            weight = dt / penalty
            floor = L[j, :, k]
            Y[j, :, k] = np.where(candidate >= floor, candidate, (candidate + weight * floor) / (1.0 + weight))
            dA[j, :, k] = Y[j, :, k] - candidate
            Z[j, :, k] = z
            if not np.all(np.isfinite(Y[j, :, k])):
                raise NumericalError(f"solve_rbsde_penalized: non-finite values at step {k}", step=k)

    if rank_deficient:
        logger.warning(f"Regression rank deficient at {len(rank_deficient)} steps")
    solution = BackwardSolution(Y=Y, Z=Z, dA=dA, L=L, backend="scenario",
                                time_grid=bundle.grid, rank_deficient_steps=sorted(set(rank_deficient)))
    logger.info(f"Penalized RBSDE solved (eps={penalty}): Y0={solution.y0:.6f}")
    return solution


def martingale_defect(solution: BackwardSolution) -> DefectReport:
    """
    Root sublinear expectation of sum_{k < m} (Y_k - L_k) dA_k, maximised
    over m, plus the pathwise complementarity sum that bounds it.
    """
    running = (solution.Y - solution.L) * solution.dA
    if solution.backend == "lattice":
        grid = solution.lattice
        profile = additive_expectation(grid, running)
        masked = np.where(grid.reachable_mask(), np.abs(running), 0.0)
        pathwise = float(np.sum(np.max(masked, axis=1)))
    else:
        partial = np.concatenate((np.zeros(running.shape[:-1] + (1,)), np.cumsum(running, axis=-1)), axis=-1)
        profile = np.max(np.mean(partial, axis=1), axis=0)
        pathwise = float(np.max(np.sum(np.abs(running), axis=-1)))
    return DefectReport(defect=float(np.max(profile)), pathwise=pathwise, profile=profile)


def complementarity_sum(solution: BackwardSolution) -> float:
    """sum over reachable nodes of (Y - L)^+ dA."""
    mask = solution.mask()
    return float(np.sum(np.where(mask, np.maximum(solution.Y - solution.L, 0.0) * solution.dA, 0.0)))


def envelope_drivers(K: float) -> tuple[GrowthBoundedFunction, GrowthBoundedFunction]:
    """Drivers -K(1 + |y| + |z|) and +K(1 + |y| + |z|)."""
    lower = GrowthBoundedFunction(
        func=lambda t, y, z: -K * (1.0 + np.abs(y) + np.abs(z)),
        variables=("y", "z"), growth=K, lipschitz=K, name=f"lower_envelope(K={K})",
    )
    upper = GrowthBoundedFunction(
        func=lambda t, y, z: K * (1.0 + np.abs(y) + np.abs(z)),
        variables=("y", "z"), growth=K, lipschitz=K, name=f"upper_envelope(K={K})",
    )
    return lower, upper


def envelope_pair(spec: BackwardSpec, band: VolatilityBand, config: LatticeConfig,
                  grid: Optional[LatticeGrid] = None) -> tuple[BackwardSolution, BackwardSolution]:
    """
    Lower start Y0 (driver -K(1+|y|+|z|), terminal xi) and upper envelope U
    (driver +K(1+|y|+|z|), terminal |xi|), both reflected on L.

    Returns:
        (Y0 solution, U solution)
    """
    K = spec.growth
    lower, upper = envelope_drivers(K)
    zero = GrowthBoundedFunction.constant(0.0, ("y",), name="zero")
    grid = grid or build_lattice(band, config)

    lower_spec = replace(spec, driver_f=lower, driver_g=zero)
    upper_spec = replace(spec, driver_f=upper, driver_g=zero,
                         terminal=lambda b: np.abs(spec.terminal_values(b)))
    y0 = solve_rbsde_lattice(lower_spec, band, config, grid=grid)
    u = solve_rbsde_lattice(upper_spec, band, config, grid=grid)
    logger.info(f"Envelopes: Y0 root {y0.y0:.6f}, U root {u.y0:.6f}")
    return y0, u


def a_bound_ratio(solution: BackwardSolution, growth: float) -> float:
    """Ê[A_T] / (sup|Y| + M T), reported rather than asserted."""
    horizon = solution.time_grid.horizon
    if solution.backend == "lattice":
        a_total = additive_total(solution.lattice, solution.dA)
        scale = float(np.max(np.where(solution.mask(), np.abs(solution.Y), 0.0)))
    else:
        a_total = float(np.max(np.mean(solution.a_path()[..., -1], axis=1)))
        scale = float(np.max(np.abs(solution.Y)))
    denominator = scale + growth * horizon
    return float(a_total / denominator) if denominator > 0.0 else 0.0


def solution_frame(solution: BackwardSolution):
    """Long table (t, x, Y, Z, dA) of a lattice solution."""
    return lattice_frame(solution.lattice, {"Y": solution.Y, "Z": solution.Z, "dA": solution.dA})
