"""Tests for scenario controls, simulated paths and the path diagnostics."""

import numpy as np
import pytest

from models.grids import TimeGrid
from services.errors import ConfigurationError
from services.gpaths import (
    alternating_control,
    bang_bang_family,
    bdg_diagnostic,
    constant_control,
    gaussian_abs_moment,
    ito_identity_defect,
    ito_integral,
    ito_process,
    paths_frame,
    qv_bound_check,
    qv_integral,
    simulate_paths,
)


def test_family_labels(band, time_grid):
    family = bang_bang_family(time_grid, band, depth=2)
    assert [c.label for c in family] == ["LL", "LH", "HL", "HH"]


def test_collapsed_band_has_one_control(collapsed_band, time_grid):
    assert len(bang_bang_family(time_grid, collapsed_band, depth=3)) == 1


def test_family_depth_must_be_positive(band, time_grid):
    with pytest.raises(ConfigurationError):
        bang_bang_family(time_grid, band, depth=0)


def test_alternating_control(band):
    control = alternating_control(TimeGrid.uniform(1.0, 4), band)
    np.testing.assert_array_equal(control.sigma_steps, [0.5, 1.0, 0.5, 1.0])


def test_control_outside_band_rejected(band, time_grid):
    control = constant_control(time_grid, 2.0)
    with pytest.raises(ConfigurationError, match="leaves the band"):
        simulate_paths([control], 10, seed=1, band=band)


def test_quadratic_variation_stays_in_band(band, time_grid):
    bundle = simulate_paths(bang_bang_family(time_grid, band, depth=3), 10, seed=7, band=band)
    T = time_grid.horizon
    assert np.all(bundle.qv[:, -1] >= band.var_lo * T - 1e-12)
    assert np.all(bundle.qv[:, -1] <= band.var_hi * T + 1e-12)
    assert np.all(np.diff(bundle.qv, axis=-1) >= 0.0)


def test_simulation_is_seed_deterministic(band, time_grid):
    family = bang_bang_family(time_grid, band, depth=2)
    first = simulate_paths(family, 50, seed=99)
    second = simulate_paths(family, 50, seed=99)
    other = simulate_paths(family, 50, seed=100)
    np.testing.assert_array_equal(first.B, second.B)
    assert not np.array_equal(first.B, other.B)


def test_scenario_stream_does_not_depend_on_family_size(band, time_grid):
    small = simulate_paths(bang_bang_family(time_grid, band, depth=1), 20, seed=3)
    large = simulate_paths(bang_bang_family(time_grid, band, depth=2), 20, seed=3)
    # scenario 0 is sigma_lo throughout in both families
    np.testing.assert_array_equal(small.B[0], large.B[0])


def test_ito_identity_defect_is_discrete_qv_gap(band, time_grid):
    bundle = simulate_paths(bang_bang_family(time_grid, band), 200, seed=11)
    defect = ito_identity_defect(bundle)
    realized = np.sum(bundle.dB ** 2, axis=-1)
    np.testing.assert_allclose(defect + bundle.qv[:, -1][:, None], realized, atol=1e-10)


def test_ito_identity_defect_shrinks_in_mean(band):
    grid = TimeGrid.uniform(1.0, 400)
    bundle = simulate_paths(bang_bang_family(grid, band), 500, seed=5)
    assert np.all(np.abs(np.mean(ito_identity_defect(bundle), axis=1)) < 0.05)


def test_qv_bound_for_positive_integrand(band, time_grid):
    bundle = simulate_paths(bang_bang_family(time_grid, band, depth=2), 100, seed=8)
    report = qv_bound_check(1.0 + bundle.B ** 2, bundle, band)
    assert report.holds
    assert report.lower <= report.upper


def test_ito_process_starts_at_zero(band, time_grid):
    bundle = simulate_paths(bang_bang_family(time_grid, band), 5, seed=2)
    process = ito_process(1.0, bundle)
    assert np.all(process[..., 0] == 0.0)
    np.testing.assert_allclose(process[..., -1], bundle.B[..., -1], atol=1e-12)


def test_gaussian_abs_moment():
    assert gaussian_abs_moment(2.0) == pytest.approx(1.0)
    assert gaussian_abs_moment(1.0) == pytest.approx(np.sqrt(2.0 / np.pi))


def test_bdg_ordering(band, time_grid):
    report = bdg_diagnostic(1.0, bang_bang_family(time_grid, band), band, p=2.0,
                            n_samples=2000, seed=17)
    assert report.energy == pytest.approx(1.0)
    assert report.ordering_holds()
    assert report.lhs == pytest.approx(0.25)


def test_bdg_needs_p_at_least_two(band, time_grid):
    with pytest.raises(ConfigurationError):
        bdg_diagnostic(1.0, bang_bang_family(time_grid, band), band, p=1.5, n_samples=10, seed=1)


def test_paths_frame_caps_samples(band, time_grid):
    bundle = simulate_paths(bang_bang_family(time_grid, band), 30, seed=4)
    frame = paths_frame(bundle, max_samples=10)
    assert list(frame.columns) == ["scenario", "sample", "t", "B", "QV"]
    assert len(frame) == 2 * 10 * (time_grid.n_steps + 1)


def test_terminal_variance_under_upper_volatility(band):
    grid = TimeGrid.uniform(1.0, 4)
    n = 100_000
    bundle = simulate_paths(constant_control(grid, band.sigma_hi), n, seed=97, band=band)
    variance = np.var(bundle.B[0, :, -1], ddof=1)
    stderr = band.var_hi * np.sqrt(2.0 / (n - 1))
    assert abs(variance - band.var_hi) <= 3.0 * stderr


def test_empty_grid_gives_zero_paths():
    bundle = simulate_paths(constant_control(TimeGrid.uniform(1.0, 0), 1.0), 5, seed=1)
    assert bundle.B.shape == (1, 5, 1)
    assert np.all(bundle.B == 0.0)
    assert np.all(bundle.qv == 0.0)


def test_qv_integral_on_alternating_control(band):
    grid = TimeGrid.uniform(1.0, 10)
    bundle = simulate_paths(alternating_control(grid, band), 3, seed=5, band=band)
    np.testing.assert_allclose(qv_integral(1.0, bundle), (band.var_lo + band.var_hi) / 2.0, rtol=1e-12)


def test_qv_integral_is_linear(band, time_grid, rng):
    bundle = simulate_paths(bang_bang_family(time_grid, band, depth=2), 20, seed=8, band=band)
    eta = rng.normal(size=bundle.B.shape)
    zeta = rng.normal(size=bundle.B.shape)
    np.testing.assert_allclose(qv_integral(2.5, bundle), 2.5 * bundle.qv[:, -1][:, None] * np.ones((1, 20)))
    np.testing.assert_allclose(qv_integral(eta + 3.0 * zeta, bundle),
                               qv_integral(eta, bundle) + 3.0 * qv_integral(zeta, bundle), atol=1e-12)


def test_ito_integral_ignores_future_integrand(band, time_grid, rng):
    bundle = simulate_paths(bang_bang_family(time_grid, band), 50, seed=13, band=band)
    eta = rng.normal(size=bundle.B.shape)
    m = 40
    perturbed = eta.copy()
    perturbed[..., m:] += rng.normal(size=perturbed[..., m:].shape)
    np.testing.assert_array_equal(ito_process(eta, bundle)[..., :m + 1], ito_process(perturbed, bundle)[..., :m + 1])

    terminal_only = eta.copy()
    terminal_only[..., -1] = 1e6
    np.testing.assert_array_equal(ito_integral(eta, bundle), ito_integral(terminal_only, bundle))
