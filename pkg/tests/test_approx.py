"""Tests for the inf-convolution ladder."""

import numpy as np
import pytest

from models.coefficients import GrowthBoundedFunction
from services.approx import (
    InfConvApprox,
    LadderAudit,
    approximated,
    audit_ladder,
    inf_convolve,
    ladder_schedule,
    lipschitz_audit,
    monotone_ladder,
    require_audit,
)
from services.catalog import builtin_coefficient
from services.errors import AuditError, ConfigurationError


@pytest.fixture
def square_growth_one():
    return GrowthBoundedFunction(func=lambda t, x: x ** 2, variables=("x",), growth=1.0, name="x^2")


def _square_closed_form(x, n):
    x = np.abs(x)
    return np.where(x <= n / 2.0, x ** 2, n * x - n ** 2 / 4.0)


@pytest.mark.parametrize("n", [2.0, 4.0, 8.0])
def test_square_matches_closed_form(square_growth_one, n):
    x = np.linspace(-3.0, 3.0, 13)
    values = inf_convolve(InfConvApprox(base=square_growth_one, n=n), x[:, None])
    np.testing.assert_allclose(values, _square_closed_form(x, n), rtol=0.0, atol=1e-9)


def test_level_below_growth_rejected():
    with pytest.raises(ConfigurationError, match="below growth"):
        InfConvApprox(base=builtin_coefficient("square"), n=2.0)


def test_high_arity_needs_candidates():
    base = GrowthBoundedFunction(
        func=lambda t, a, b, c, d: a + b + c + d, variables=("a", "b", "c", "d"), growth=1.0,
    )
    with pytest.raises(ConfigurationError, match="candidate"):
        InfConvApprox(base=base, n=2.0)
    approx = InfConvApprox(base=base, n=2.0, candidates=np.zeros((1, 4)))
    assert inf_convolve(approx, np.ones(4))[0] == pytest.approx(0.0 + 2.0 * 2.0)


def test_lipschitz_base_is_returned_exactly():
    base = builtin_coefficient("tanh_x")
    approx = InfConvApprox(base=base, n=2.0)
    assert approx.is_exact
    x = np.linspace(-3.0, 3.0, 7)
    np.testing.assert_array_equal(inf_convolve(approx, x[:, None]), np.tanh(x))
    assert approximated(base, 2.0) is base


def test_approximated_coefficient_keeps_shape_and_flags():
    base = builtin_coefficient("sqrt_pos_y")
    f4 = approximated(base, 4.0)
    assert f4.lipschitz == 4.0
    assert f4.monotone == {"y": "increasing"}
    y = np.array([[0.0, 0.01], [1.0, 4.0]])
    values = f4(0.0, y)
    assert values.shape == y.shape
    assert np.all(values <= np.sqrt(y) + 1e-12)
    assert values[1, 1] == pytest.approx(2.0)


def test_ladder_schedule():
    assert ladder_schedule(3.0, 4) == [3.0, 6.0, 12.0, 24.0]
    assert ladder_schedule(0.5, 3) == [2.0, 4.0, 8.0]


def test_ladder_is_nondecreasing_in_level(square_growth_one):
    x = np.linspace(-3.0, 3.0, 25)
    values = monotone_ladder(square_growth_one, [1.0, 2.0, 4.0, 8.0], x[:, None])
    assert np.all(np.diff(values, axis=0) >= -1e-12)
    assert np.all(values <= x ** 2 + 1e-12)


def test_lipschitz_audit_respects_level(square_growth_one):
    x = np.linspace(-3.0, 3.0, 61)
    pairs = np.stack((x[:-1], x[1:]), axis=1)[..., None]
    ratio = lipschitz_audit(InfConvApprox(base=square_growth_one, n=2.0), pairs)
    assert ratio <= 2.0 + 1e-9


def test_audit_square_on_bounded_range():
    base = builtin_coefficient("square")
    levels = ladder_schedule(base.growth, 4)
    assert levels == [3.0, 6.0, 12.0, 24.0]
    audit = audit_ladder(base, levels, np.linspace(-2.0, 2.0, 41))
    assert audit.passed()
    require_audit(audit)


def test_audit_abs_power():
    base = builtin_coefficient("abs_pow_1_5")
    audit = audit_ladder(base, ladder_schedule(base.growth, 4), np.linspace(-2.0, 2.0, 41))
    assert audit.passed(tol=1e-6)


def test_audit_two_argument_composite():
    base = builtin_coefficient("tanh_composite")
    axis = np.linspace(-2.0, 2.0, 9)
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    points = np.stack((xx.reshape(-1), yy.reshape(-1)), axis=-1)
    audit = audit_ladder(base, ladder_schedule(base.growth, 3), points)
    assert audit.passed(tol=1e-6)
    assert set(audit.transfer_violation) == {"y"}


def test_require_audit_raises_on_failure():
    audit = LadderAudit(
        levels=[2.0], growth_excess=1.0, monotone_violation=0.0, domination_violation=0.0,
        lipschitz_ratios=[1.0], top_gap=0.0, transfer_violation={},
    )
    assert not audit.passed()
    with pytest.raises(AuditError):
        require_audit(audit)


def test_refined_levels_close_the_gap_to_the_base():
    base = builtin_coefficient("sqrt_abs_x")
    levels = ladder_schedule(base.growth, 4)
    x = np.linspace(-1.0, 1.0, 401)
    values = monotone_ladder(base, levels, x[:, None])
    gaps = np.max(np.sqrt(np.abs(x))[None, :] - values, axis=1)
    assert np.all(gaps >= -1e-12)
    assert np.all(np.diff(gaps) <= 1e-12)
    assert gaps[-1] <= 0.5 * gaps[0]
