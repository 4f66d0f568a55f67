"""Shared fixtures for the gdesk test suite."""

import numpy as np
import pytest

from models.band import VolatilityBand
from models.coefficients import ForwardSpec, GrowthBoundedFunction
from models.grids import TimeGrid
from services.glattice import LatticeConfig, build_lattice


@pytest.fixture
def band():
    return VolatilityBand(0.5, 1.0)


@pytest.fixture
def collapsed_band():
    return VolatilityBand(0.7, 0.7)


@pytest.fixture
def coarse_config():
    return LatticeConfig(horizon=1.0, n_steps=50)


@pytest.fixture
def coarse_grid(band, coarse_config):
    return build_lattice(band, coarse_config)


@pytest.fixture
def time_grid():
    return TimeGrid.uniform(1.0, 100)


@pytest.fixture
def zero():
    return GrowthBoundedFunction.constant(0.0, ("x",), name="zero")


@pytest.fixture
def unit_sigma():
    return GrowthBoundedFunction.constant(1.0, ("x",), name="unit_sigma")


@pytest.fixture
def brownian_spec(zero, unit_sigma):
    """X = B: no drift, unit diffusion."""
    return ForwardSpec(x0=0.0, b=zero, h=zero, sigma=unit_sigma, growth=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
