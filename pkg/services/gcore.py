"""
G-function and sublinear expectations over finite measure families.

Ê[X] = max over members P of E_P[X]; every expectation here is either an
exact finite sum or a seeded Monte-Carlo average, never both implicitly.
"""

import logging
from typing import Callable

import numpy as np

from models.band import MeasureFamily, VolatilityBand
from models.grids import TimeGrid
from services.errors import ConfigurationError


logger = logging.getLogger(__name__)


NORM_MODES = ("m", "s")


def g_function(a, band: VolatilityBand):
    """
    G(a) = 1/2 (sigma_hi^2 a^+ - sigma_lo^2 a^-).

    Accepts scalars or arrays; returns the same kind.
    """
    a = np.asarray(a, dtype=float)
    value = 0.5 * (band.var_hi * np.maximum(a, 0.0) - band.var_lo * np.maximum(-a, 0.0))
    return float(value) if value.ndim == 0 else value


def sublinear_expectation(payoff: Callable[[np.ndarray], np.ndarray], family: MeasureFamily) -> float:
    """
    Ê[payoff] as the maximum of classical expectations over the family.

    Raises:
        ConfigurationError: If the family is empty
    """
    if family is None or len(family) == 0:
        raise ConfigurationError("sublinear_expectation needs a non-empty family")
    best = -np.inf
    for member in family.members:
        best = max(best, member.expectation(payoff))
    return float(best)


def scenario_expectation(values) -> tuple[float, float, int]:
    """
    Sublinear expectation of a per-scenario sample matrix.

    Args:
        values: Array of shape (n_scenarios, n_samples)

    Returns:
        (estimate, standard error of the maximizing scenario, its index)
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if values.shape[0] == 0 or values.shape[1] == 0:
        raise ConfigurationError("scenario_expectation needs at least one scenario and sample")
    means = np.mean(values, axis=1)
    best = int(np.argmax(means))
    n = values.shape[1]
    stderr = float(np.std(values[best], ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(means[best]), stderr, best


def discrete_norm(process, p: float, grid: TimeGrid, mode: str = "m") -> float:
    """
    Discrete M^p or S^p norm of a sampled process.

    mode "m": (Ê[(sum_k |eta_k|^2 dt_k)^(p/2)])^(1/p) with left endpoints.
    mode "s": (Ê[max_k |eta_k|^p])^(1/p).

    Args:
        process: Samples of shape (n_scenarios, n_samples, N + 1) or
            anything broadcastable to it (e.g. a single path of length N + 1)
        p: Exponent, at least 1
        grid: Time grid of the process
        mode: "m" or "s"
    """
    if p < 1.0:
        raise ConfigurationError(f"discrete_norm needs p >= 1, got {p}")
    if mode not in NORM_MODES:
        raise ConfigurationError(f"Unknown norm mode '{mode}', expected one of {NORM_MODES}")

    eta = np.asarray(process, dtype=float)
    if eta.shape[-1] != grid.n_steps + 1:
        raise ConfigurationError(
            f"Process has {eta.shape[-1]} time points, grid has {grid.n_steps + 1}"
        )
    while eta.ndim < 3:
        eta = eta[None, ...]

    if mode == "m":
        energy = np.sum(eta[..., :-1] ** 2 * grid.dt, axis=-1)
        per_sample = energy ** (p / 2.0)
    else:
        per_sample = np.max(np.abs(eta), axis=-1) ** p

    value, _, _ = scenario_expectation(per_sample)
    return float(value ** (1.0 / p))
