"""
Scenario-control representation of G-Brownian motion.

Each control is a piecewise-constant volatility in the band; under it B is
a classical Gaussian martingale and <B> = int sigma^2 ds is deterministic.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from models.band import VolatilityBand
from models.grids import PathBundle, ScenarioControl, TimeGrid
from services.errors import ConfigurationError
from services.gcore import scenario_expectation


logger = logging.getLogger(__name__)


def constant_control(grid: TimeGrid, sigma: float, label: str = "") -> ScenarioControl:
    return ScenarioControl(grid, np.full(grid.n_steps, sigma), label=label or f"const({sigma})")


def alternating_control(grid: TimeGrid, band: VolatilityBand) -> ScenarioControl:
    """sigma_lo on even steps, sigma_hi on odd steps."""
    sigma = np.where(np.arange(grid.n_steps) % 2 == 0, band.sigma_lo, band.sigma_hi)
    return ScenarioControl(grid, sigma, label="alternating")


def bang_bang_family(grid: TimeGrid, band: VolatilityBand, depth: int = 1) -> list[ScenarioControl]:
    """
    All controls taking sigma_lo or sigma_hi on each of `depth` equal blocks.

    depth 1 gives the two constant extremes; depth d gives 2^d controls.
    """
    if depth < 1:
        raise ConfigurationError(f"family depth must be >= 1, got {depth}")
    if band.is_collapsed:
        return [constant_control(grid, band.sigma_hi)]
    blocks = np.array_split(np.arange(grid.n_steps), depth)
    controls = []
    for pattern in itertools.product((0, 1), repeat=depth):
        sigma = np.empty(grid.n_steps)
        for choice, block in zip(pattern, blocks):
            sigma[block] = band.sigma_hi if choice else band.sigma_lo
        label = "".join("H" if choice else "L" for choice in pattern)
        controls.append(ScenarioControl(grid, sigma, label=label))
    return controls


def _scenario_stream(seed: int, scenario_id: int) -> np.random.Generator:
    """Counter-based Philox stream keyed by (seed, scenario)."""
    sequence = np.random.SeedSequence(seed, spawn_key=(scenario_id,))
    return np.random.Generator(np.random.Philox(sequence))


def simulate_paths(controls: Sequence[ScenarioControl] | ScenarioControl, n_samples: int,
                   seed: int, band: VolatilityBand | None = None) -> PathBundle:
    """
    Simulate B and <B> under each control.

    Args:
        controls: One control or a family sharing one grid
        n_samples: Samples per scenario
        seed: Root seed; scenario j always uses the stream (seed, j)
        band: If given, every control is validated against it

    Returns:
        PathBundle with B of shape (n_scenarios, n_samples, N + 1)
    """
    if isinstance(controls, ScenarioControl):
        controls = [controls]
    controls = list(controls)
    if not controls:
        raise ConfigurationError("simulate_paths needs at least one control")
    if n_samples < 1:
        raise ConfigurationError(f"n_samples must be >= 1, got {n_samples}")

    grid = controls[0].grid
    for control in controls:
        if not control.grid.same_as(grid):
            raise ConfigurationError("All controls must share one time grid")
        if band is not None:
            control.validate(band)
        if np.any(control.sigma_steps < 0.0):
            raise ConfigurationError(f"Control '{control.label}' has negative volatility")

    n_steps = grid.n_steps
    B = np.zeros((len(controls), n_samples, n_steps + 1))
    qv = np.zeros((len(controls), n_steps + 1))
    for j, control in enumerate(controls):
        qv[j] = control.qv_path
        if n_steps == 0:
            continue
        normals = _scenario_stream(seed, j).standard_normal((n_samples, n_steps))
        B[j, :, 1:] = np.cumsum(normals * np.sqrt(control.qv_increments), axis=1)

    logger.debug(f"Simulated {len(controls)} scenarios x {n_samples} samples x {n_steps} steps")
    return PathBundle(grid=grid, controls=controls, B=B, qv=qv, seed=seed, band=band)


def _left_endpoints(eta, bundle: PathBundle) -> np.ndarray:
    """Broadcast an integrand to (n_scenarios, n_samples, N) using left endpoints."""
    eta = np.asarray(eta, dtype=float)
    n = bundle.grid.n_steps
    if eta.ndim == 0:
        return np.full(bundle.B.shape[:-1] + (n,), float(eta))
    if eta.shape[-1] == n + 1:
        eta = eta[..., :-1]
    elif eta.shape[-1] != n:
        raise ConfigurationError(
            f"Integrand has {eta.shape[-1]} time points; grid needs {n} or {n + 1}"
        )
    try:
        return np.broadcast_to(eta, bundle.B.shape[:-1] + (n,))
    except ValueError as exc:
        raise ConfigurationError(f"Integrand not aligned with the bundle: {exc}") from exc


def ito_integral(eta, bundle: PathBundle) -> np.ndarray:
    """Per-sample sum eta_k (B_{k+1} - B_k); shape (n_scenarios, n_samples)."""
    return np.sum(_left_endpoints(eta, bundle) * bundle.dB, axis=-1)


def ito_process(eta, bundle: PathBundle) -> np.ndarray:
    """Running Itô integral on the grid, starting at 0."""
    increments = _left_endpoints(eta, bundle) * bundle.dB
    zero = np.zeros(increments.shape[:-1] + (1,))
    return np.concatenate((zero, np.cumsum(increments, axis=-1)), axis=-1)


def qv_integral(eta, bundle: PathBundle) -> np.ndarray:
    """Per-sample Riemann-Stieltjes sum eta_k (<B>_{k+1} - <B>_k)."""
    return np.sum(_left_endpoints(eta, bundle) * bundle.dqv, axis=-1)


def time_integral(eta, bundle: PathBundle) -> np.ndarray:
    """Per-sample sum eta_k dt_k."""
    return np.sum(_left_endpoints(eta, bundle) * bundle.grid.dt, axis=-1)


def ito_identity_defect(bundle: PathBundle) -> np.ndarray:
    """Per-sample B_T^2 - 2 int B dB - <B>_T, which vanishes as dt -> 0."""
    B_T = bundle.B[..., -1]
    return B_T ** 2 - 2.0 * ito_integral(bundle.B, bundle) - bundle.qv[:, -1][:, None]


@dataclass
class QVBoundReport:
    """sigma_lo^2 Ê[int|eta|dt] <= Ê[|int eta d<B>|] <= sigma_hi^2 Ê[int|eta|dt]."""
    lower: float
    middle: float
    upper: float

    @property
    def holds(self) -> bool:
        tol = 1e-12 * max(1.0, abs(self.upper))
        return self.lower - tol <= self.middle <= self.upper + tol


def qv_bound_check(eta, bundle: PathBundle, band: VolatilityBand) -> QVBoundReport:
    """Evaluate both sides of the d<B>-integral bound on the bundle."""
    base, _, _ = scenario_expectation(time_integral(np.abs(_left_endpoints(eta, bundle)), bundle))
    middle, _, _ = scenario_expectation(np.abs(qv_integral(eta, bundle)))
    return QVBoundReport(lower=band.var_lo * base, middle=middle, upper=band.var_hi * base)


def gaussian_abs_moment(p: float) -> float:
    """E|N(0,1)|^p."""
    return 2.0 ** (p / 2.0) * math.gamma((p + 1.0) / 2.0) / math.sqrt(math.pi)


@dataclass
class BDGReport:
    """Two-sided B-D-G style comparison with explicit constants."""
    p: float
    energy: float
    lhs: float
    mid: float
    rhs: float
    mid_stderr: float
    lower_constant: float
    upper_constant: float

    @property
    def lower_ratio(self) -> float:
        """mid / energy; the lower constant times sigma_lo^p should not exceed it."""
        return self.mid / self.energy if self.energy > 0.0 else 0.0

    def ordering_holds(self, n_stderr: float = 3.0) -> bool:
        slack = n_stderr * self.mid_stderr + 1e-12
        return self.lhs <= self.mid + slack and self.mid <= self.rhs + slack


def bdg_diagnostic(eta, controls: Sequence[ScenarioControl], band: VolatilityBand, p: float,
                   n_samples: int, seed: int, lower_constant: float | None = None,
                   upper_constant: float | None = None) -> BDGReport:
    """
    Compare sigma_lo^p c_p Ê[(int eta^2 ds)^(p/2)] <= Ê[sup|int eta dB|^p]
    <= sigma_hi^p C_p Ê[(int eta^2 ds)^(p/2)].

    The default constants (c_p = 1 and Doob's constant times the Gaussian
    absolute moment) are valid for deterministic integrands; the report
    carries the raw quantities so other constants can be checked.

    Args:
        eta: Integrand; an array aligned to the grid or a callable of
            (t, B) evaluated at left endpoints
    """
    if p < 2.0:
        raise ConfigurationError(f"bdg_diagnostic needs p >= 2, got {p}")
    bundle = simulate_paths(controls, n_samples, seed, band=band)
    if callable(eta):
        eta = eta(bundle.grid.times, bundle.B)

    integrand = _left_endpoints(eta, bundle)
    energy_samples = np.sum(integrand ** 2 * bundle.grid.dt, axis=-1) ** (p / 2.0)
    energy, _, _ = scenario_expectation(energy_samples)
    sup_samples = np.max(np.abs(ito_process(integrand, bundle)), axis=-1) ** p
    mid, stderr, _ = scenario_expectation(sup_samples)

    c_lo = 1.0 if lower_constant is None else lower_constant
    c_hi = (p / (p - 1.0)) ** p * gaussian_abs_moment(p) if upper_constant is None else upper_constant
    report = BDGReport(
        p=p,
        energy=energy,
        lhs=band.sigma_lo ** p * c_lo * energy,
        mid=mid,
        rhs=band.sigma_hi ** p * c_hi * energy,
        mid_stderr=stderr,
        lower_constant=c_lo,
        upper_constant=c_hi,
    )
    logger.info(f"BDG diagnostic p={p}: lhs={report.lhs:.4g} mid={report.mid:.4g} rhs={report.rhs:.4g}")
    return report


def paths_frame(bundle: PathBundle, max_samples: int | None = None) -> pd.DataFrame:
    """Long table (scenario, sample, t, B, QV)."""
    n_samples = bundle.n_samples if max_samples is None else min(max_samples, bundle.n_samples)
    n_points = bundle.grid.n_steps + 1
    scen, samp, step = np.meshgrid(
        np.arange(bundle.n_scenarios), np.arange(n_samples), np.arange(n_points), indexing="ij"
    )
    return pd.DataFrame({
        "scenario": scen.reshape(-1),
        "sample": samp.reshape(-1),
        "t": bundle.grid.times[step.reshape(-1)],
        "B": bundle.B[:, :n_samples, :].reshape(-1),
        "QV": bundle.qv_paths()[:, :n_samples, :].reshape(-1),
    })
