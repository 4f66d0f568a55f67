"""
Euler-Maruyama solvers for the forward G-SDE.

Two drivers are supported: a PathBundle (one classical Euler solve per
scenario and sample) and a LatticeGrid, where X is carried as a function
of the lattice node by projecting the Euler update along lattice edges.
"""

import logging
import math
from dataclasses import replace
from typing import Optional, Union

import numpy as np

from models.coefficients import ForwardSpec, GrowthBoundedFunction
from models.grids import LatticeGrid, PathBundle
from models.solution import LadderReport
from services.approx import approximated, ladder_schedule
from services.errors import AuditError, ConfigurationError, NumericalError


logger = logging.getLogger(__name__)


Driver = Union[PathBundle, LatticeGrid]
SLACK_MULTIPLIER = 10.0


def comparison_slack(dt: float, *processes, multiplier: float = SLACK_MULTIPLIER) -> float:
    """Tolerance multiplier * dt * (1 + max|X|) for discrete comparison checks."""
    scale = max((float(np.max(np.abs(p))) for p in processes if np.size(p)), default=0.0)
    return multiplier * dt * (1.0 + scale)


def _check_finite(values: np.ndarray, step: int, label: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"{label}: non-finite values at step {step}", step=step)


def _coefficients(spec: ForwardSpec, t: float, x, y):
    state = {"x": x, "y": y}
    b = spec.b.call_named(t, **state)
    h = spec.h.call_named(t, **state)
    sigma = spec.sigma.call_named(t, x=x)
    return b, h, sigma


def _require_y(spec: ForwardSpec, y_input) -> None:
    if spec.needs_y and y_input is None:
        raise ConfigurationError("Forward coefficients depend on y but no y input was supplied")


def euler_forward(spec: ForwardSpec, bundle: PathBundle, y_input=None) -> np.ndarray:
    """
    X_{k+1} = X_k + b dt + h d<B> + sigma dB per scenario and sample.

    Args:
        spec: Forward coefficients
        bundle: Simulated paths
        y_input: Y process broadcastable to bundle.B, required when b or h use y

    Returns:
        X with the shape of bundle.B
    """
    _require_y(spec, y_input)
    shape = bundle.B.shape
    if y_input is not None:
        try:
            y_input = np.broadcast_to(np.asarray(y_input, dtype=float), shape)
        except ValueError as exc:
            raise ConfigurationError(f"y input not aligned with the bundle: {exc}") from exc
    else:
        y_input = np.zeros(shape)

    X = np.empty(shape)
    X[..., 0] = spec.x0
    dt = bundle.grid.dt
    dB = bundle.dB
    dqv = np.broadcast_to(bundle.dqv, dB.shape)
    for k in range(bundle.grid.n_steps):
        t = bundle.grid.times[k]
        b, h, sigma = _coefficients(spec, t, X[..., k], y_input[..., k])
        X[..., k + 1] = X[..., k] + b * dt[k] + h * dqv[..., k] + sigma * dB[..., k]
        _check_finite(X[..., k + 1], k + 1, "euler_forward")
    return X


def _transition_weights(grid: LatticeGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Reference transition probabilities (down, stay, up) at sigma_hi.

    Boundary nodes do not move, matching the zero second difference there.
    """
    r = grid.stability_ratio
    n = grid.n_nodes
    down = np.full(n, 0.5 * r)
    up = np.full(n, 0.5 * r)
    stay = np.full(n, 1.0 - r)
    for edge in (0, n - 1):
        down[edge], up[edge], stay[edge] = 0.0, 0.0, 1.0
    return down, stay, up


def _fill_unreachable(layer: np.ndarray, mass: np.ndarray) -> np.ndarray:
    """Nearest-reachable extension of a layer outside the support of `mass`."""
    reached = np.flatnonzero(mass > 0.0)
    if reached.size == layer.size:
        return layer
    idx = np.arange(layer.size)
    return np.interp(idx, reached, layer[reached])


def _initial_mass(grid: LatticeGrid) -> np.ndarray:
    mass = np.zeros(grid.n_nodes)
    mass[grid.root_index] = 1.0
    return mass


def forward_lattice_step(spec: ForwardSpec, grid: LatticeGrid, k: int, x_layer: np.ndarray,
                         y_layer: np.ndarray, mass: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    One projected Euler step from layer k to k + 1.

    Returns:
        (X_{k+1}, reference-walk mass at k + 1)
    """
    down, stay, up = _transition_weights(grid)
    dt, dx = grid.dt, grid.dx
    b, h, sigma = _coefficients(spec, grid.times[k], x_layer, y_layer)
    base = x_layer + b * dt + h * grid.band.var_hi * dt

    numerator = mass * stay * base
    new_mass = mass * stay
    # j -> j + 1 moves B up by dx; j -> j - 1 moves it down.
    numerator[1:] += (mass * up * (base + sigma * dx))[:-1]
    new_mass[1:] += (mass * up)[:-1]
    numerator[:-1] += (mass * down * (base - sigma * dx))[1:]
    new_mass[:-1] += (mass * down)[1:]

    layer = np.where(new_mass > 0.0, numerator / np.where(new_mass > 0.0, new_mass, 1.0), 0.0)
    return _fill_unreachable(layer, new_mass), new_mass


def euler_forward_lattice(spec: ForwardSpec, grid: LatticeGrid, y_nodes=None) -> np.ndarray:
    """
    Forward Euler carried on lattice nodes.

    Each node value at t_{k+1} is the mass-weighted average of the Euler
    updates X_k(j) + b dt + h sigma_hi^2 dt + sigma (x_i - x_j) arriving from
    the neighbouring nodes j, with masses from the reference walk at
    sigma_hi started at the root. Nodes the walk has not reached take the
    value of the nearest reached node.

    Returns:
        X of shape (N + 1, n_nodes)
    """
    _require_y(spec, y_nodes)
    if y_nodes is None:
        y_nodes = np.zeros(grid.shape)
    y_nodes = np.broadcast_to(np.asarray(y_nodes, dtype=float), grid.shape)

    mass = _initial_mass(grid)
    X = np.empty(grid.shape)
    X[0] = spec.x0
    for k in range(grid.n_steps):
        X[k + 1], mass = forward_lattice_step(spec, grid, k, X[k], y_nodes[k], mass)
        _check_finite(X[k + 1], k + 1, "euler_forward_lattice")
    return X


def forward_replay_residuals(spec: ForwardSpec, grid: LatticeGrid, X, y_nodes=None) -> np.ndarray:
    """X_{k+1} minus one projected Euler step from the given (X_k, Y_k), per node."""
    _require_y(spec, y_nodes)
    X = np.asarray(X, dtype=float)
    y_nodes = np.zeros(grid.shape) if y_nodes is None else np.broadcast_to(np.asarray(y_nodes, dtype=float), grid.shape)
    residuals = np.zeros(grid.shape)
    residuals[0] = X[0] - spec.x0
    mass = _initial_mass(grid)
    for k in range(grid.n_steps):
        step, mass = forward_lattice_step(spec, grid, k, X[k], y_nodes[k], mass)
        residuals[k + 1] = X[k + 1] - step
    return residuals


def run_forward(spec: ForwardSpec, driver: Driver, y_input=None) -> np.ndarray:
    """Dispatch to the path or lattice Euler solver."""
    if isinstance(driver, LatticeGrid):
        return euler_forward_lattice(spec, driver, y_input)
    return euler_forward(spec, driver, y_input)


def _driver_dt(driver: Driver) -> float:
    if isinstance(driver, LatticeGrid):
        return driver.dt
    return float(np.max(driver.grid.dt)) if driver.grid.n_steps else 0.0


def _driver_mask(driver: Driver, shape) -> np.ndarray:
    if isinstance(driver, LatticeGrid):
        return driver.reachable_mask()
    return np.ones(shape, dtype=bool)


def solve_forward_monotone(spec: ForwardSpec, driver: Driver, y_input=None, n_levels: int = 8,
                           tol: float = 1e-6, slack_multiplier: float = SLACK_MULTIPLIER,
                           grid_options: Optional[dict] = None) -> tuple[np.ndarray, LadderReport]:
    """
    Solve the forward equation through the Lipschitz ladder b_k, h_k.

    Level-wise solutions must be nondecreasing in k up to the comparison
    slack; the ladder stops once the sup-norm change drops below tol.

    Raises:
        AuditError: When a level decreases by more than the slack, which
            signals a broken monotonicity or growth declaration
    """
    grid_options = grid_options or {}
    growth = max(spec.growth, spec.b.growth, spec.h.growth)
    levels = ladder_schedule(growth, n_levels)

    report = LadderReport(levels=[], deltas=[], violations=[], converged=False)
    previous = None
    X = None
    for n in levels:
        level_spec = replace(
            spec,
            b=approximated(spec.b, n, **grid_options),
            h=approximated(spec.h, n, **grid_options),
        )
        X = run_forward(level_spec, driver, y_input)
        report.levels.append(n)
        if previous is None:
            report.deltas.append(math.inf)
            report.violations.append(0.0)
            previous = X
            continue

        mask = _driver_mask(driver, X.shape)
        violation = float(np.max(np.where(mask, previous - X, 0.0)))
        delta = float(np.max(np.where(mask, np.abs(X - previous), 0.0)))
        report.deltas.append(delta)
        report.violations.append(max(violation, 0.0))
        slack = comparison_slack(_driver_dt(driver), X, multiplier=slack_multiplier)
        logger.debug(f"Ladder level n={n}: delta={delta:.3e}, violation={violation:.3e}")
        if violation > slack:
            raise AuditError(
                f"Forward ladder decreased by {violation:.3e} at level n={n} "
                f"(slack {slack:.3e}); check the monotonicity and growth declarations"
            )
        previous = X
        if delta < tol:
            report.converged = True
            break

    if not report.converged:
        logger.warning(f"Forward ladder did not reach tol={tol} within {len(levels)} levels")
    return X, report


def envelope_coefficient(K: float) -> GrowthBoundedFunction:
    """Drift K(1 + |x| + |u|) of the dominating forward equation."""
    return GrowthBoundedFunction(
        func=lambda t, x, y: K * (1.0 + np.abs(x) + np.abs(y)),
        variables=("x", "y"),
        growth=K,
        lipschitz=K,
        monotone={"y": "increasing"},
        name=f"envelope_drift(K={K})",
    )


def envelope_forward(K: float, upper, sigma: GrowthBoundedFunction, x0: float,
                     driver: Driver) -> np.ndarray:
    """
    S = x0 + K int (1 + |S| + |U|) ds + int sigma(S) dB.

    Args:
        K: Envelope constant
        upper: U process aligned with the driver
        sigma: Diffusion coefficient of the problem
        x0: Initial value
        driver: PathBundle or LatticeGrid
    """
    spec = ForwardSpec(
        x0=x0,
        b=envelope_coefficient(K),
        h=GrowthBoundedFunction.constant(0.0, ("x",), name="zero"),
        sigma=sigma,
        growth=K,
    )
    return run_forward(spec, driver, upper)


def gronwall_bound(spec: ForwardSpec, horizon: float, qv_total: float, y_max: float,
                   abs_increments: float) -> float:
    """
    A-priori bound on sup_k |X_k| for one Euler path.

    With |b|, |h| <= M(1 + |x| + |y|) and |sigma| <= M(1 + |x|), the Euler
    recursion gives 1 + |X_{k+1}| <= (1 + |X_k|)(1 + M(dt + dqv + |dB|))
    + M |Y| (dt + dqv), hence
    sup|X| <= (1 + |x0| + M y_max (T + QV_T)) exp(M (T + QV_T + sum|dB|)) - 1.
    """
    M = max(spec.growth, spec.b.growth, spec.h.growth, spec.sigma.growth)
    time_mass = horizon + qv_total
    return (1.0 + abs(spec.x0) + M * y_max * time_mass) * math.exp(M * (time_mass + abs_increments)) - 1.0
