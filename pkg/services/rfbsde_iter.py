"""
Monotone iteration for the reflected forward-backward G-system.

Envelopes first (Y0 and U, then X0 and S), then alternate: freeze
X^{n-1} in the backward drivers, solve the reflected backward equation
through the Lipschitz ladder, and solve the forward equation driven by Y^n.
Everything runs on one lattice.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from models.band import VolatilityBand
from models.coefficients import BackwardSpec, CoupledProblem, TerminalTransform
from models.grids import LatticeGrid
from models.solution import (
    BackwardSolution,
    IterationRecord,
    IterationReport,
    ResidualReport,
    SolutionQuadruple,
)
from services.approx import ladder_schedule
from services.errors import AuditError, ConfigurationError
from services.fsde import (
    SLACK_MULTIPLIER,
    comparison_slack,
    envelope_forward,
    forward_replay_residuals,
    solve_forward_monotone,
)
from services.gcore import g_function
from services.glattice import (
    LatticeConfig,
    additive_total,
    build_lattice,
    first_difference,
    second_difference,
)
from services.rbsde import envelope_pair, martingale_defect, solve_rbsde_lattice


logger = logging.getLogger(__name__)


Z_NORM_GUARD = 4.0
TRANSFORM_SWEEP = 401


@dataclass(frozen=True)
class InnerConfig:
    """
    Settings of the inner (ladder) solves.

    Attributes:
        n_levels: Maximum ladder levels per inner solve
        tol_ratio: Inner tolerance as a fraction of the outer tolerance
        slack_multiplier: Multiplier of the O(dt) comparison slack
        grid_options: Inf-convolution grid options
        strict: Raise on monotonicity or envelope breaches instead of warning
    """
    n_levels: int = 6
    tol_ratio: float = 0.1
    slack_multiplier: float = SLACK_MULTIPLIER
    grid_options: dict = field(default_factory=dict)
    strict: bool = True

    def __post_init__(self):
        if self.n_levels < 1:
            raise ConfigurationError(f"n_levels must be >= 1, got {self.n_levels}")
        if not 0.0 < self.tol_ratio <= 1.0:
            raise ConfigurationError(f"tol_ratio must be in (0, 1], got {self.tol_ratio}")


def _sup(mask: np.ndarray, values: np.ndarray) -> float:
    return float(np.max(np.where(mask, values, -np.inf)))


def _sup_abs(mask: np.ndarray, values: np.ndarray) -> float:
    return float(np.max(np.where(mask, np.abs(values), 0.0)))


def z_norm(solution: BackwardSolution) -> float:
    """Ê[sum_{k < N} |Z_k|^2 dt] at the lattice root."""
    grid = solution.lattice
    running = solution.Z ** 2 * grid.dt
    running[-1] = 0.0
    return additive_total(grid, running)


def _solve_backward_ladder(spec: BackwardSpec, grid: LatticeGrid, x_nodes: np.ndarray,
                           growth: float, tol: float, inner: InnerConfig) -> BackwardSolution:
    """Reflected backward solve with X frozen, through the driver ladder when needed."""
    if spec.driver_f.lipschitz is not None and spec.driver_g.lipschitz is not None:
        return solve_rbsde_lattice(spec, grid.band, None, x_nodes=x_nodes, grid=grid)

    mask = grid.reachable_mask()
    previous = None
    solution = None
    for level in ladder_schedule(growth, inner.n_levels):
        solution = solve_rbsde_lattice(spec, grid.band, None, x_nodes=x_nodes, ladder_level=level,
                                       grid_options=inner.grid_options, grid=grid)
        if previous is not None:
            violation = _sup(mask, previous.Y - solution.Y)
            slack = comparison_slack(grid.dt, solution.Y, multiplier=inner.slack_multiplier)
            if violation > slack:
                message = f"Backward ladder decreased by {violation:.3e} at level n={level:g}"
                if inner.strict:
                    raise AuditError(message)
                logger.warning(message)
            if _sup_abs(mask, solution.Y - previous.Y) < tol:
                break
        previous = solution
    return solution


def _audit_record(record: IterationRecord, slack: float, strict: bool) -> None:
    breaches = []
    if record.violation_x > slack:
        breaches.append(f"X decreased by {record.violation_x:.3e}")
    if record.violation_y > slack:
        breaches.append(f"Y decreased by {record.violation_y:.3e}")
    if record.margin_s < -slack:
        breaches.append(f"X above S by {-record.margin_s:.3e}")
    if record.margin_u < -slack:
        breaches.append(f"Y above U by {-record.margin_u:.3e}")
    if record.margin_l < -1e-12:
        breaches.append(f"Y below L by {-record.margin_l:.3e}")
    if not breaches:
        return
    message = f"Iteration {record.iteration} (slack {slack:.3e}): " + "; ".join(breaches)
    if strict:
        raise AuditError(f"{message}; check the monotonicity flags and that K bounds the true growth")
    logger.warning(message)


def solve_rfbgsde(problem: CoupledProblem, band: VolatilityBand, config: LatticeConfig,
                  tol: float = 1e-5, max_outer: int = 20,
                  inner: Optional[InnerConfig] = None) -> tuple[SolutionQuadruple, IterationReport]:
    """
    Solve the coupled reflected system by monotone iteration.

    Args:
        problem: Coefficients, barrier and the constants M <= K
        band: Volatility band
        config: Lattice resolution
        tol: Outer stopping tolerance on max(sup|X^n - X^{n-1}|, sup|Y^n - Y^{n-1}|)
        max_outer: Maximum outer iterations
        inner: Ladder settings

    Returns:
        (last iterate with the envelopes, iteration report). A run that
        exhausts max_outer is returned with report.converged = False.

    Raises:
        ConfigurationError: If L exceeds its declared ceiling
        AuditError: On monotone-chain or envelope breaches beyond the slack
            when inner.strict is set
    """
    inner = inner or InnerConfig()
    if max_outer < 1:
        raise ConfigurationError(f"max_outer must be >= 1, got {max_outer}")
    grid = build_lattice(band, config)
    forward = problem.forward
    backward = replace(problem.backward, growth=problem.envelope)

    horizon = grid.times[-1]
    for t in grid.times:
        backward.check_barrier(t, grid.nodes)
    gap = backward.terminal_gap(horizon, grid.nodes)
    if gap < 0.0:
        logger.warning(f"Terminal value below the barrier by up to {-gap:.3g}; Y_T = max(xi, L_T)")

    mask = grid.reachable_mask()
    inner_tol = tol * inner.tol_ratio
    forward_options = dict(n_levels=inner.n_levels, tol=inner_tol,
                           slack_multiplier=inner.slack_multiplier, grid_options=inner.grid_options)
    logger.info(
        f"Solving '{problem.name}': {grid.n_steps} steps, {grid.n_nodes} nodes, "
        f"M={problem.growth}, K={problem.envelope}, tol={tol}"
    )

    lower_start, upper = envelope_pair(backward, band, config, grid=grid)
    X_prev, ladder = solve_forward_monotone(forward, grid, lower_start.Y, **forward_options)
    S = envelope_forward(problem.envelope, upper.Y, forward.sigma, forward.x0, grid)
    Y_prev = lower_start.Y

    report = IterationReport()
    solution = lower_start
    X = X_prev
    for n in range(1, max_outer + 1):
        solution = _solve_backward_ladder(backward, grid, X_prev, problem.growth, inner_tol, inner)
        Y = solution.Y
        X, ladder = solve_forward_monotone(forward, grid, Y, **forward_options)

        slack = comparison_slack(grid.dt, X, Y, multiplier=inner.slack_multiplier)
        record = IterationRecord(
            iteration=n,
            delta_x=_sup_abs(mask, X - X_prev),
            delta_y=_sup_abs(mask, Y - Y_prev),
            violation_x=max(_sup(mask, X_prev - X), 0.0),
            violation_y=max(_sup(mask, Y_prev - Y), 0.0),
            margin_s=-_sup(mask, X - S),
            margin_u=-_sup(mask, Y - upper.Y),
            margin_l=-_sup(mask, solution.L - Y),
            defect=martingale_defect(solution).defect,
            z_norm=z_norm(solution),
        )
        report.append(record)
        report.slack = max(report.slack, slack)
        logger.debug(
            f"Outer iteration {n}: dX={record.delta_x:.3e} dY={record.delta_y:.3e} "
            f"S-margin={record.margin_s:.3e} U-margin={record.margin_u:.3e} Z-norm={record.z_norm:.4g}"
        )
        _audit_record(record, slack, inner.strict)

        if report.z_norm_guard is None:
            report.z_norm_guard = Z_NORM_GUARD * record.z_norm
        elif record.z_norm > report.z_norm_guard:
            logger.warning(f"Z-norm {record.z_norm:.4g} exceeds the guard {report.z_norm_guard:.4g}")

        if max(record.delta_x, record.delta_y) < tol:
            report.converged = True
            # Iterate n reproduced iterate n - 1.
            report.converged_iteration = n - 1
            break
        X_prev, Y_prev = X, Y

    if report.converged:
        logger.info(f"Converged at iteration {report.converged_iteration}: Y0={solution.y0:.6f}")
    else:
        logger.warning(f"No convergence within {max_outer} outer iterations at tol={tol}")

    quadruple = SolutionQuadruple(X=X, backward=solution, S=S, lower_start=lower_start,
                                  upper_envelope=upper, X_levels=ladder)
    return quadruple, report


def backward_replay_residuals(spec: BackwardSpec, grid: LatticeGrid, X, Y, Z, dA) -> np.ndarray:
    """
    Y_k - (Y_{k+1} + dt G(D^2 Y_{k+1} + 2g) + dt f + dA_k) per node, with
    the drivers evaluated at the solution's own (X_k, Y_k, Z_k).
    """
    residuals = np.empty(grid.shape)
    residuals[-1] = Y[-1] - (spec.terminal_values(grid.nodes) + dA[-1])
    for k in range(grid.n_steps):
        t = grid.times[k]
        state = {"x": X[k], "y": Y[k], "z": Z[k]}
        g_val = spec.driver_g.call_named(t, **state)
        f_val = spec.driver_f.call_named(t, **state)
        curvature = second_difference(Y[k + 1], grid.dx)
        replay = Y[k + 1] + grid.dt * g_function(curvature + 2.0 * g_val, grid.band) + grid.dt * f_val
        residuals[k] = Y[k] - (replay + dA[k])
    return residuals


def residual_check(problem: CoupledProblem, solution: SolutionQuadruple) -> ResidualReport:
    """
    Replay both discrete equations on the solution's own (X, Y, Z, A).

    Residuals are sup-norms over reachable nodes. The reflection entry is
    the smallest node gap Y - L.
    """
    grid = solution.lattice
    mask = grid.reachable_mask()
    X, Y, Z, dA = solution.X, solution.Y, solution.Z, solution.dA

    forward = forward_replay_residuals(problem.forward, grid, X, Y if problem.forward.needs_y else None)
    backward = backward_replay_residuals(problem.backward, grid, X, Y, Z, dA)
    z_gap = np.zeros(grid.shape)
    for k in range(grid.n_steps):
        z_gap[k] = Z[k] - first_difference(Y[k + 1], grid.dx)

    report = ResidualReport(
        forward=_sup_abs(mask, forward),
        backward=_sup_abs(mask, backward),
        z=_sup_abs(mask, z_gap),
        reflection_gap=float(np.min(np.where(mask, Y - solution.backward.L, np.inf))),
        defect=martingale_defect(solution.backward).defect,
    )
    logger.info("Residuals: " + ", ".join(report.as_lines()))
    return report


def apply_terminal_transform(problem: CoupledProblem, transform: TerminalTransform,
                             grid: LatticeGrid) -> CoupledProblem:
    """
    Replace the terminal value xi by transform(xi).

    The transform must declare a finite bound. Boundedness, monotonicity
    and transform(xi) >= L_T are audited on the terminal lattice nodes.

    Raises:
        ConfigurationError: If the transform declares no bound
        AuditError: If an audit fails on the lattice
    """
    if transform.bound is None or not np.isfinite(transform.bound):
        raise ConfigurationError(f"Terminal transform '{transform.name}' must declare a finite bound")

    backward = problem.backward
    xi = backward.terminal_values(grid.nodes)
    transformed = np.asarray(transform.func(xi), dtype=float)
    excess = float(np.max(np.abs(transformed))) - transform.bound
    if excess > 1e-12:
        raise AuditError(f"Terminal transform '{transform.name}' exceeds its bound by {excess:.3g}")

    sweep = np.linspace(float(np.min(xi)), float(np.max(xi)), TRANSFORM_SWEEP)
    drop = float(np.max(-np.diff(np.asarray(transform.func(sweep), dtype=float)), initial=0.0))
    if drop > 1e-12:
        raise AuditError(f"Terminal transform '{transform.name}' decreases by {drop:.3g}")

    gap = float(np.min(transformed - backward.barrier(grid.times[-1], grid.nodes)))
    if gap < 0.0:
        raise AuditError(
            f"Transformed terminal value falls below the barrier by {-gap:.3g}"
        )

    original = backward.terminal
    new_backward = replace(backward, terminal=lambda b: transform.func(original(b)))
    logger.info(f"Applied terminal transform '{transform.name}' (bound {transform.bound})")
    return replace(problem, backward=new_backward, terminal_transform=transform)
