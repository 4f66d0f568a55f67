"""
Inf-convolution approximation of continuous linear-growth coefficients.

f_n(x) = inf_y { f(y) + n |x - y| } is n-Lipschitz, nondecreasing in n,
bounded above by f and converges to f. The infimum is taken over a finite
candidate grid around each query point, refined by a few zoom passes.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from models.coefficients import GrowthBoundedFunction
from services.errors import AuditError, ConfigurationError


logger = logging.getLogger(__name__)


MAX_GRID_ARITY = 3
DEFAULT_CELLS = {1: 256, 2: 24, 3: 8}
QUERY_CHUNK = 256


@dataclass(frozen=True)
class InfConvApprox:
    """
    Lipschitz level n applied to a base coefficient.

    Attributes:
        base: Coefficient to approximate
        n: Lipschitz level, at least the growth constant M
        cells: Grid cells per half-axis; defaults by arity
        zoom_passes: Local refinements around the best candidate
        max_radius: Search radius used when n equals M exactly
        candidates: Explicit candidate set, required for arity > 3
        t: Time at which the base is frozen
    """
    base: GrowthBoundedFunction
    n: float
    cells: Optional[int] = None
    zoom_passes: int = 3
    max_radius: float = 100.0
    candidates: Optional[np.ndarray] = field(default=None, repr=False)
    t: float = 0.0

    def __post_init__(self):
        if self.n < self.base.growth:
            raise ConfigurationError(
                f"Lipschitz level n={self.n} below growth constant M={self.base.growth} "
                f"for {self.base.label}"
            )
        if self.base.arity > MAX_GRID_ARITY and self.candidates is None and not self.is_exact:
            raise ConfigurationError(
                f"{self.base.label} has arity {self.base.arity}; supply an explicit candidate set"
            )

    @property
    def is_exact(self) -> bool:
        """f_n = f when f is already n-Lipschitz."""
        return self.base.lipschitz is not None and self.base.lipschitz <= self.n

    @property
    def cells_per_axis(self) -> int:
        return self.cells or DEFAULT_CELLS.get(self.base.arity, 8)


def _unit_offsets(arity: int, cells: int) -> np.ndarray:
    """Lexicographically ordered offsets in [-1, 1]^m, centre included."""
    axis = np.linspace(-1.0, 1.0, 2 * cells + 1)
    mesh = np.meshgrid(*([axis] * arity), indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=-1)


def _search_radius(approx: InfConvApprox, points: np.ndarray, f_points: np.ndarray) -> np.ndarray:
    """Radius beyond which n|x - y| cannot beat f(x); padded by one cell."""
    M = approx.base.growth
    norms = np.linalg.norm(points, axis=-1)
    numerator = M * (1.0 + norms) + f_points + 1.0
    gap = approx.n - M
    if gap > 0.0:
        radius = numerator / gap
    else:
        radius = np.full(points.shape[0], approx.max_radius) * (1.0 + norms)
    radius = np.maximum(radius, 1e-9)
    return radius * (1.0 + 1.0 / approx.cells_per_axis)


def _objective(approx: InfConvApprox, x: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """f(y) + n|x - y| for candidates of shape (q, C, m)."""
    q, c, m = candidates.shape
    values = approx.base.evaluate(candidates.reshape(-1, m), t=approx.t).reshape(q, c)
    return values + approx.n * np.linalg.norm(candidates - x[:, None, :], axis=-1)


def _grid_minimum(approx: InfConvApprox, x: np.ndarray) -> np.ndarray:
    f_x = approx.base.evaluate(x, t=approx.t)
    radius = _search_radius(approx, x, f_x)
    offsets = _unit_offsets(approx.base.arity, approx.cells_per_axis)

    best_value = f_x.copy()
    centre = x.copy()
    for _ in range(approx.zoom_passes + 1):
        candidates = centre[:, None, :] + radius[:, None, None] * offsets[None, :, :]
        values = _objective(approx, x, candidates)
        idx = np.argmin(values, axis=1)
        rows = np.arange(x.shape[0])
        improved = values[rows, idx] < best_value
        best_value = np.where(improved, values[rows, idx], best_value)
        centre = np.where(improved[:, None], candidates[rows, idx], centre)
        radius = 2.0 * radius / approx.cells_per_axis
    return best_value


def _candidate_minimum(approx: InfConvApprox, x: np.ndarray) -> np.ndarray:
    candidates = np.asarray(approx.candidates, dtype=float)
    f_c = approx.base.evaluate(candidates, t=approx.t)
    dist = np.linalg.norm(x[:, None, :] - candidates[None, :, :], axis=-1)
    values = np.min(f_c[None, :] + approx.n * dist, axis=1)
    return np.minimum(values, approx.base.evaluate(x, t=approx.t))


def inf_convolve(approx: InfConvApprox, x) -> np.ndarray:
    """
    Evaluate f_n at one point (shape (m,)) or many points (shape (q, m)).

    Returns:
        Array of shape (q,); the result never exceeds f(x)
    """
    points = np.atleast_2d(np.asarray(x, dtype=float))
    if points.shape[-1] != approx.base.arity:
        points = points.reshape(-1, approx.base.arity)
    if approx.is_exact:
        return approx.base.evaluate(points, t=approx.t)

    minimum = _candidate_minimum if approx.candidates is not None else _grid_minimum
    out = np.empty(points.shape[0])
    for start in range(0, points.shape[0], QUERY_CHUNK):
        chunk = points[start:start + QUERY_CHUNK]
        out[start:start + QUERY_CHUNK] = minimum(approx, chunk)
    return out


def approximated(base: GrowthBoundedFunction, n: float, **grid_options) -> GrowthBoundedFunction:
    """
    Wrap f_n as a coefficient so the solvers can call it like the base.

    The result declares Lipschitz constant n, keeps the growth constant and
    the monotonicity flags of the base.
    """
    if base.lipschitz is not None and base.lipschitz <= n:
        return base

    def func(t, *args):
        shape = np.shape(args[0]) if args else ()
        t_value = float(np.asarray(t).reshape(-1)[0]) if np.size(t) else 0.0
        points = np.stack([np.asarray(a, dtype=float).reshape(-1) for a in args], axis=-1)
        approx = InfConvApprox(base=base, n=n, t=t_value, **grid_options)
        return inf_convolve(approx, points).reshape(shape)

    return replace(base, func=func, lipschitz=float(n), name=f"{base.label}_n{n:g}")


def ladder_schedule(growth: float, n_levels: int) -> list[float]:
    """Levels max(ceil(M), 2) * 2^j, j = 0..n_levels-1."""
    first = max(math.ceil(growth), 2)
    return [float(first * 2 ** j) for j in range(n_levels)]


def lipschitz_audit(approx: InfConvApprox, pairs) -> float:
    """
    Max |f_n(x) - f_n(x')| / |x - x'| over sample pairs.

    Args:
        pairs: Array of shape (P, 2, m)
    """
    pairs = np.asarray(pairs, dtype=float)
    if pairs.ndim == 2:
        pairs = pairs[..., None]
    first = inf_convolve(approx, pairs[:, 0, :])
    second = inf_convolve(approx, pairs[:, 1, :])
    dist = np.linalg.norm(pairs[:, 0, :] - pairs[:, 1, :], axis=-1)
    keep = dist > 0.0
    if not np.any(keep):
        return 0.0
    return float(np.max(np.abs(first[keep] - second[keep]) / dist[keep]))


def monotone_ladder(base: GrowthBoundedFunction, levels: Sequence[float], points,
                    **grid_options) -> np.ndarray:
    """
    Values f_n(x) for every level (rows) and query point (columns).

    Raises:
        ConfigurationError: If a level is below the growth constant
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[-1] != base.arity:
        points = points.reshape(-1, base.arity)
    rows = [inf_convolve(InfConvApprox(base=base, n=float(n), **grid_options), points) for n in levels]
    return np.vstack(rows)


@dataclass
class LadderAudit:
    """Checks (i)-(iv) of the inf-convolution ladder plus monotonicity transfer."""
    levels: list[float]
    growth_excess: float
    monotone_violation: float
    domination_violation: float
    lipschitz_ratios: list[float]
    top_gap: float
    transfer_violation: dict[str, float]

    def passed(self, tol: float = 1e-9) -> bool:
        lipschitz_ok = all(
            ratio <= n * (1.0 + 1e-6) + tol for ratio, n in zip(self.lipschitz_ratios, self.levels)
        )
        transfer_ok = all(v <= tol for v in self.transfer_violation.values())
        return (self.growth_excess <= tol and self.monotone_violation <= tol
                and self.domination_violation <= tol and lipschitz_ok and transfer_ok)


def audit_ladder(base: GrowthBoundedFunction, levels: Sequence[float], points,
                 transfer_step: float = 1e-2, **grid_options) -> LadderAudit:
    """
    Audit the ladder on a set of points.

    Growth (i) and domination by f (ii) are checked pointwise, monotonicity
    in n (ii) along the level axis, Lipschitz ratios (iii) on consecutive
    point pairs, and the top-level gap (iv) is reported. Monotonicity
    transfer compares f_n(x + h e_j) with f_n(x) for each argument declared
    increasing.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[-1] != base.arity:
        points = points.reshape(-1, base.arity)
    values = monotone_ladder(base, levels, points, **grid_options)
    f_values = base.evaluate(points)
    bound = base.growth * (1.0 + np.linalg.norm(points, axis=-1))

    growth_excess = float(np.max(np.abs(values) - bound[None, :]))
    monotone_violation = float(np.max(values[:-1] - values[1:])) if len(levels) > 1 else 0.0
    domination_violation = float(np.max(values - f_values[None, :]))
    top_gap = float(np.max(np.abs(values[-1] - f_values)))

    pairs = np.stack((points[:-1], points[1:]), axis=1)
    ratios = [
        lipschitz_audit(InfConvApprox(base=base, n=float(n), **grid_options), pairs) if len(points) > 1 else 0.0
        for n in levels
    ]

    transfer = {}
    for j, name in enumerate(base.variables):
        if base.monotone.get(name) != "increasing":
            continue
        shifted = points.copy()
        shifted[:, j] += transfer_step
        shifted_values = monotone_ladder(base, levels, shifted, **grid_options)
        transfer[name] = float(max(0.0, np.max(values - shifted_values)))

    audit = LadderAudit(
        levels=[float(n) for n in levels],
        growth_excess=max(growth_excess, 0.0),
        monotone_violation=max(monotone_violation, 0.0),
        domination_violation=max(domination_violation, 0.0),
        lipschitz_ratios=ratios,
        top_gap=top_gap,
        transfer_violation=transfer,
    )
    logger.debug(f"Ladder audit for {base.label}: {audit}")
    return audit


def require_audit(audit: LadderAudit, tol: float = 1e-9) -> None:
    """Raise AuditError when the ladder audit fails."""
    if not audit.passed(tol):
        raise AuditError(f"Inf-convolution ladder audit failed: {audit}")
