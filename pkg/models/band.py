"""
Volatility band and finite measure families.

The band [sigma_lo, sigma_hi] fixes the G-function and the scenario set;
a MeasureFamily is the finite stand-in for the set of priors.
"""

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from services.errors import ConfigurationError


PROBABILITY_TOLERANCE = 1e-12


@dataclass(frozen=True)
class VolatilityBand:
    """Uncertainty interval for the volatility of B."""
    sigma_lo: float
    sigma_hi: float

    def __post_init__(self):
        if not (0.0 < self.sigma_lo <= self.sigma_hi):
            raise ConfigurationError(
                f"Invalid volatility band [{self.sigma_lo}, {self.sigma_hi}]: "
                "need 0 < sigma_lo <= sigma_hi"
            )

    @property
    def var_lo(self) -> float:
        return self.sigma_lo ** 2

    @property
    def var_hi(self) -> float:
        return self.sigma_hi ** 2

    @property
    def is_collapsed(self) -> bool:
        """True when there is no volatility uncertainty."""
        return self.sigma_lo == self.sigma_hi

    def contains(self, sigma) -> bool:
        sigma = np.asarray(sigma, dtype=float)
        return bool(np.all((sigma >= self.sigma_lo) & (sigma <= self.sigma_hi)))

    def extremes(self) -> tuple[float, float]:
        return (self.sigma_lo, self.sigma_hi)


@dataclass(frozen=True)
class DiscreteLaw:
    """A classical law with finitely many outcomes."""
    outcomes: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        outcomes = np.asarray(self.outcomes, dtype=float)
        probs = np.asarray(self.probabilities, dtype=float)
        if outcomes.shape[0] != probs.shape[0]:
            raise ConfigurationError(
                f"Law has {outcomes.shape[0]} outcomes but {probs.shape[0]} probabilities"
            )
        if probs.size == 0:
            raise ConfigurationError("Law has no outcomes")
        if np.any(probs < 0.0):
            raise ConfigurationError("Law has negative probabilities")
        total = float(np.sum(probs))
        if abs(total - 1.0) > PROBABILITY_TOLERANCE:
            raise ConfigurationError(f"Law probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "probabilities", probs)

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[float, float]]) -> "DiscreteLaw":
        """Build from (outcome, probability) pairs."""
        outcomes = [value for value, _ in pairs]
        probs = [prob for _, prob in pairs]
        return cls(np.array(outcomes, dtype=float), np.array(probs, dtype=float))

    @classmethod
    def empirical(cls, samples) -> "DiscreteLaw":
        """Uniform weights over Monte-Carlo samples."""
        samples = np.asarray(samples, dtype=float)
        n = samples.shape[0]
        if n == 0:
            raise ConfigurationError("Empirical law needs at least one sample")
        probs = np.full(n, 1.0 / n)
        # Renormalise so the sum is 1 to machine precision.
        probs[-1] = 1.0 - float(np.sum(probs[:-1]))
        return cls(samples, probs)

    def expectation(self, payoff) -> float:
        """Classical expectation of payoff(outcomes)."""
        values = np.asarray(payoff(self.outcomes), dtype=float)
        return float(np.dot(self.probabilities, values))


@dataclass(frozen=True)
class MeasureFamily:
    """Finite family of classical laws over a shared outcome space."""
    members: tuple[DiscreteLaw, ...] = field(default_factory=tuple)
    label: str = ""

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ConfigurationError("Measure family is empty")
        object.__setattr__(self, "members", members)

    def __len__(self) -> int:
        return len(self.members)

    @classmethod
    def from_sample_matrix(cls, samples, label: str = "") -> "MeasureFamily":
        """One empirical law per row of a (n_scenarios, n_samples) array."""
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        return cls(tuple(DiscreteLaw.empirical(row) for row in samples), label=label)
