"""Tests for the explicit G-heat lattice."""

import logging

import numpy as np
import pytest

from services.errors import ConfigurationError
from services.glattice import (
    LatticeConfig,
    additive_expectation,
    additive_total,
    build_lattice,
    check_stability,
    classical_heat_step,
    conditional_expectation_step,
    lattice_frame,
    second_difference,
    solve_gheat,
)


def test_unstable_spacing_rejected(band):
    with pytest.raises(ConfigurationError, match="unstable"):
        build_lattice(band, LatticeConfig(horizon=1.0, n_steps=50, dx=0.01))


def test_narrow_domain_warns(band, caplog):
    with caplog.at_level(logging.WARNING):
        build_lattice(band, LatticeConfig(horizon=1.0, n_steps=20, width_sigmas=3.0))
    assert "tail mass" in caplog.text
    caplog.clear()
    with caplog.at_level(logging.WARNING):
        build_lattice(band, LatticeConfig(horizon=1.0, n_steps=20))
    assert "tail mass" not in caplog.text


def test_stability_ratio_of_default_lattice(band, coarse_grid):
    assert coarse_grid.stability_ratio == pytest.approx(0.5)
    assert check_stability(band, coarse_grid.dt, coarse_grid.dx) == pytest.approx(0.5)


def test_lattice_covers_the_domain(band, coarse_grid):
    assert coarse_grid.nodes[coarse_grid.root_index] == pytest.approx(0.0)
    assert coarse_grid.nodes[-1] >= 6.0 - 1e-9
    assert coarse_grid.nodes[0] <= -6.0 + 1e-9


def test_second_difference_is_zero_at_boundary():
    x = np.linspace(-1.0, 1.0, 11)
    d2 = second_difference(x ** 2, x[1] - x[0])
    assert d2[0] == 0.0 and d2[-1] == 0.0
    np.testing.assert_allclose(d2[1:-1], 2.0)


def test_square_payoff_upper_and_lower_values(band):
    config = LatticeConfig(horizon=1.0, n_steps=200)
    upper = solve_gheat(lambda x: x ** 2, band, config)
    lower = solve_gheat(lambda x: -x ** 2, band, config)
    assert upper.root_value == pytest.approx(1.0, rel=0.02)
    assert -lower.root_value == pytest.approx(0.25, rel=0.02)


def test_collapsed_band_matches_classical_heat(collapsed_band, rng):
    grid = build_lattice(collapsed_band, LatticeConfig(horizon=1.0, n_steps=40))
    layer = rng.normal(size=grid.n_nodes)
    for _ in range(5):
        g_step = conditional_expectation_step(layer, collapsed_band, grid.dt, grid.dx)
        heat = classical_heat_step(layer, collapsed_band.sigma_hi, grid.dt, grid.dx)
        np.testing.assert_allclose(g_step, heat, rtol=0.0, atol=1e-12)
        layer = g_step


def test_convex_payoff_uses_upper_volatility(band, coarse_grid):
    layer = np.abs(coarse_grid.nodes)
    classical = layer.copy()
    for _ in range(coarse_grid.n_steps):
        layer = conditional_expectation_step(layer, band, coarse_grid.dt, coarse_grid.dx)
        classical = classical_heat_step(classical, band.sigma_hi, coarse_grid.dt, coarse_grid.dx)
    np.testing.assert_allclose(layer, classical, rtol=0.0, atol=1e-12)


def test_quadratic_term_shifts_curvature(band, coarse_grid):
    layer = np.zeros(coarse_grid.n_nodes)
    stepped = conditional_expectation_step(layer, band, coarse_grid.dt, coarse_grid.dx,
                                           quadratic_term=np.full(coarse_grid.n_nodes, 1.0))
    # G(2) = 1 for this band
    np.testing.assert_allclose(stepped, coarse_grid.dt)


def test_additive_total_of_constant(coarse_grid):
    running = np.full(coarse_grid.shape, 0.3)
    assert additive_total(coarse_grid, running) == pytest.approx((coarse_grid.n_steps + 1) * 0.3)


def test_additive_profile_ends_at_total(coarse_grid, rng):
    running = rng.uniform(-1.0, 1.0, size=coarse_grid.shape)
    profile = additive_expectation(coarse_grid, running)
    assert profile[0] == 0.0
    assert profile[-1] == pytest.approx(additive_total(coarse_grid, running), abs=1e-12)


def test_reachable_mask_grows_one_node_per_step(coarse_grid):
    mask = coarse_grid.reachable_mask()
    assert mask.shape == coarse_grid.shape
    assert mask[0].sum() == 1
    assert mask[0, coarse_grid.root_index]
    assert mask[5].sum() == 11
    assert mask[-1].sum() == min(2 * coarse_grid.n_steps + 1, coarse_grid.n_nodes)


def test_lattice_frame_is_long_format(coarse_grid):
    surface = np.ones(coarse_grid.shape)
    frame = lattice_frame(coarse_grid, {"u": surface})
    assert list(frame.columns) == ["t", "x", "u"]
    assert len(frame) == (coarse_grid.n_steps + 1) * coarse_grid.n_nodes
    assert frame["t"].iloc[-1] == pytest.approx(1.0)


def test_one_step_operator_is_a_sublinear_expectation(band, coarse_grid, rng):
    dt, dx = coarse_grid.dt, coarse_grid.dx

    def step(layer):
        return conditional_expectation_step(layer, band, dt, dx)

    for _ in range(50):
        v = rng.normal(size=coarse_grid.n_nodes)
        w = rng.normal(size=coarse_grid.n_nodes)
        c = rng.normal()
        lam = rng.uniform(0.1, 5.0)
        below = v - np.abs(w)

        assert np.all(step(v) >= step(below) - 1e-12)
        np.testing.assert_allclose(step(v + c), step(v) + c, rtol=0.0, atol=1e-12)
        np.testing.assert_allclose(step(lam * v), lam * step(v), rtol=0.0, atol=1e-12)
        assert np.all(step(v + w) <= step(v) + step(w) + 1e-12)


def test_constant_and_linear_layers_are_unchanged(band, coarse_grid):
    nodes = coarse_grid.nodes
    for layer in (np.full(nodes.size, 0.7), 2.0 * nodes - 1.0):
        stepped = conditional_expectation_step(layer, band, coarse_grid.dt, coarse_grid.dx)
        np.testing.assert_allclose(stepped, layer, rtol=0.0, atol=1e-12)


def test_composed_steps_reproduce_the_solve_on_a_window(band, coarse_config):
    lattice = solve_gheat(np.cos, band, coarse_config)
    grid = lattice.grid
    layer = lattice.values[-1]
    for _ in range(grid.n_steps // 2):
        layer = conditional_expectation_step(layer, band, grid.dt, grid.dx)
    np.testing.assert_allclose(layer, lattice.values[grid.n_steps - grid.n_steps // 2], rtol=0.0, atol=1e-12)


def test_two_half_steps_against_one_full_step(band):
    # smooth data with concave curvature on |x| < 1, where G is linear at sigma_lo
    dx = 0.1
    nodes = dx * np.arange(-30, 31)
    interior = np.abs(nodes) < 1.0
    layer = np.cos(nodes)

    def gap(dt):
        twice = conditional_expectation_step(conditional_expectation_step(layer, band, dt, dx), band, dt, dx)
        once = conditional_expectation_step(layer, band, 2.0 * dt, dx)
        return np.max(np.abs(twice - once)[interior])

    coarse, fine = gap(0.002), gap(0.001)
    assert coarse <= band.var_lo ** 2 / 4.0 * 0.002 ** 2 * 1.01
    assert coarse / fine == pytest.approx(4.0, rel=1e-4)


def test_symmetric_linear_payoffs_have_zero_value(band):
    config = LatticeConfig(horizon=1.0, n_steps=200)
    up = solve_gheat(lambda x: x, band, config)
    down = solve_gheat(lambda x: -x, band, config)
    assert abs(up.root_value) <= up.grid.dx
    assert abs(down.root_value) <= up.grid.dx
