"""Tests for the G-function and finite-family sublinear expectations."""

import numpy as np
import pytest

from models.band import DiscreteLaw, MeasureFamily, VolatilityBand
from models.grids import TimeGrid
from services.errors import ConfigurationError
from services.gcore import (
    discrete_norm,
    g_function,
    scenario_expectation,
    sublinear_expectation,
)


def test_g_function_values(band):
    assert g_function(2.0, band) == pytest.approx(1.0)
    assert g_function(-2.0, band) == pytest.approx(-0.25)
    assert g_function(0.0, band) == 0.0


def test_g_function_keeps_array_shape(band):
    values = g_function(np.array([[1.0, -1.0], [0.0, 4.0]]), band)
    assert isinstance(values, np.ndarray)
    np.testing.assert_allclose(values, [[0.5, -0.125], [0.0, 2.0]])


def test_g_function_is_sublinear(band, rng):
    a, b = rng.normal(size=(2, 500))
    assert np.all(g_function(a + b, band) <= g_function(a, band) + g_function(b, band) + 1e-15)


def test_invalid_band_rejected():
    with pytest.raises(ConfigurationError):
        VolatilityBand(1.0, 0.5)
    with pytest.raises(ConfigurationError):
        VolatilityBand(0.0, 1.0)


def test_sublinear_expectation_takes_family_maximum():
    narrow = DiscreteLaw.from_pairs([(-1.0, 0.5), (1.0, 0.5)])
    wide = DiscreteLaw.from_pairs([(-2.0, 0.5), (2.0, 0.5)])
    family = MeasureFamily((narrow, wide))
    assert sublinear_expectation(lambda x: x ** 2, family) == pytest.approx(4.0)
    assert -sublinear_expectation(lambda x: -x ** 2, family) == pytest.approx(1.0)


def test_empty_family_rejected():
    with pytest.raises(ConfigurationError):
        MeasureFamily(())


def test_law_probabilities_must_sum_to_one():
    with pytest.raises(ConfigurationError):
        DiscreteLaw.from_pairs([(0.0, 0.5), (1.0, 0.4)])


def _random_family(rng, n_outcomes=6, n_members=3):
    members = tuple(
        DiscreteLaw(np.arange(n_outcomes, dtype=float), rng.dirichlet(np.ones(n_outcomes)))
        for _ in range(n_members)
    )
    return MeasureFamily(members)


def _payoff(values):
    return lambda outcomes: values[outcomes.astype(int)]


def test_sublinear_expectation_axioms(rng):
    family = _random_family(rng)
    tol = 1e-12
    for _ in range(1000):
        X, Y = rng.normal(scale=3.0, size=(2, 6))
        c = rng.normal()
        lam = rng.uniform(0.0, 5.0)
        E = lambda v: sublinear_expectation(_payoff(v), family)

        assert E(X) <= E(X + np.abs(Y)) + tol
        assert E(np.full(6, c)) == pytest.approx(c, abs=tol)
        assert E(X + Y) <= E(X) + E(Y) + tol
        assert E(lam * X) == pytest.approx(lam * E(X), abs=tol * (1.0 + abs(E(X)) * lam))
        assert E(X + c) == pytest.approx(E(X) + c, abs=tol * (1.0 + abs(E(X)) + abs(c)))


def test_scenario_expectation_reports_maximizing_row():
    values = np.array([[1.0, 3.0], [4.0, 6.0], [0.0, 0.0]])
    estimate, stderr, index = scenario_expectation(values)
    assert estimate == 5.0
    assert index == 1
    assert stderr == pytest.approx(1.0)


def test_discrete_norms():
    grid = TimeGrid.uniform(1.0, 4)
    assert discrete_norm(np.ones(5), 2.0, grid, mode="m") == pytest.approx(1.0)
    assert discrete_norm(np.array([0.0, 1.0, -3.0, 2.0, 0.0]), 2.0, grid, mode="s") == pytest.approx(3.0)


def test_discrete_norm_rejects_bad_inputs():
    grid = TimeGrid.uniform(1.0, 4)
    with pytest.raises(ConfigurationError):
        discrete_norm(np.ones(5), 0.5, grid)
    with pytest.raises(ConfigurationError):
        discrete_norm(np.ones(5), 2.0, grid, mode="q")
    with pytest.raises(ConfigurationError):
        discrete_norm(np.ones(3), 2.0, grid)
