"""
Named built-in coefficients, terminal transforms and coupled problems.

Configs refer to these by name; anything else goes through the expression
grammar in utils.expressions.
"""

import logging
from typing import Callable

import numpy as np

from models.coefficients import (
    Barrier,
    BackwardSpec,
    CoupledProblem,
    ForwardSpec,
    GrowthBoundedFunction,
    TerminalTransform,
)
from services.errors import ConfigurationError


logger = logging.getLogger(__name__)


def _coefficient(func, variables, growth, lipschitz=None, monotone=None, name=""):
    return GrowthBoundedFunction(func=func, variables=variables, growth=growth,
                                 lipschitz=lipschitz, monotone=monotone or {}, name=name)


# name -> factory; every factory returns a fresh coefficient.
# square and abs_pow_1_5 satisfy their growth bound only for |x| <= 3.7 and |x| <= 5.
BUILTIN_COEFFICIENTS: dict[str, Callable[[], GrowthBoundedFunction]] = {
    "zero": lambda: GrowthBoundedFunction.constant(0.0, ("x",), name="zero"),
    "one": lambda: GrowthBoundedFunction.constant(1.0, ("x",), name="one"),
    "identity": lambda: _coefficient(lambda t, x: x, ("x",), 1.0, 1.0, {"x": "increasing"}, "identity"),
    "abs": lambda: _coefficient(lambda t, x: np.abs(x), ("x",), 1.0, 1.0, name="abs"),
    "tanh_x": lambda: _coefficient(lambda t, x: np.tanh(x), ("x",), 1.0, 1.0, {"x": "increasing"}, "tanh_x"),
    "tanh_y": lambda: _coefficient(lambda t, y: np.tanh(y), ("y",), 1.0, 1.0, {"y": "increasing"}, "tanh_y"),
    "sqrt_abs_x": lambda: _coefficient(
        lambda t, x: np.sqrt(np.abs(x)), ("x",), 1.0, None, name="sqrt_abs_x"
    ),
    "sqrt_pos_y": lambda: _coefficient(
        lambda t, y: np.sqrt(np.maximum(y, 0.0)), ("y",), 1.0, None, {"y": "increasing"}, "sqrt_pos_y"
    ),
    "square": lambda: _coefficient(lambda t, x: x ** 2, ("x",), 3.0, None, name="square"),
    "abs_pow_1_5": lambda: _coefficient(
        lambda t, x: np.abs(x) ** 1.5, ("x",), 2.0, None, name="abs_pow_1_5"
    ),
    "tanh_composite": lambda: _coefficient(
        lambda t, x, y: np.tanh(x) + 0.5 * np.tanh(y) * np.abs(x),
        ("x", "y"), 2.0, None, {"y": "increasing"}, "tanh_composite",
    ),
    "unit_sigma": lambda: GrowthBoundedFunction.constant(1.0, ("x",), name="unit_sigma"),
}


def builtin_coefficient(name: str) -> GrowthBoundedFunction:
    """
    Look up a built-in coefficient.

    Raises:
        ConfigurationError: If the name is unknown
    """
    try:
        return BUILTIN_COEFFICIENTS[name]()
    except KeyError:
        known = ", ".join(sorted(BUILTIN_COEFFICIENTS))
        raise ConfigurationError(f"Unknown built-in coefficient '{name}' (known: {known})") from None


def identity_transform(bound: float = 10.0) -> TerminalTransform:
    """Identity, declared bounded by `bound` on the states of interest."""
    return TerminalTransform(func=lambda v: np.asarray(v, dtype=float), bound=bound, name="identity")


def clamp_transform(low: float = -1.0, high: float = 1.0) -> TerminalTransform:
    if low > high:
        raise ConfigurationError(f"clamp bounds out of order: {low} > {high}")
    return TerminalTransform(func=lambda v: np.clip(v, low, high), bound=max(abs(low), abs(high)),
                             name=f"clamp[{low},{high}]")


def tanh_transform(scale: float = 1.0) -> TerminalTransform:
    return TerminalTransform(func=lambda v: scale * np.tanh(v), bound=abs(scale), name=f"tanh*{scale}")


def cube_transform() -> TerminalTransform:
    """v^3; unbounded, so it declares no bound."""
    return TerminalTransform(func=lambda v: np.asarray(v, dtype=float) ** 3, bound=None, name="cube")


BUILTIN_TRANSFORMS: dict[str, Callable[[], TerminalTransform]] = {
    "identity": identity_transform,
    "clamp": clamp_transform,
    "tanh": tanh_transform,
    "cube": cube_transform,
}


def builtin_transform(name: str) -> TerminalTransform:
    try:
        return BUILTIN_TRANSFORMS[name]()
    except KeyError:
        known = ", ".join(sorted(BUILTIN_TRANSFORMS))
        raise ConfigurationError(f"Unknown terminal transform '{name}' (known: {known})") from None


def decoupled_problem() -> CoupledProblem:
    """
    b = 0.1 tanh(x), sigma = 1, xi = B_T, f = -0.2 tanh(z), L = -0.5.

    Neither side sees the other, so the outer iteration settles after one
    backward and one forward solve.
    """
    forward = ForwardSpec(
        x0=0.0,
        b=_coefficient(lambda t, x: 0.1 * np.tanh(x), ("x",), 0.1, 0.1, name="0.1*tanh(x)"),
        h=builtin_coefficient("zero"),
        sigma=builtin_coefficient("unit_sigma"),
        growth=1.0,
    )
    backward = BackwardSpec(
        terminal=lambda b: b,
        driver_f=_coefficient(lambda t, z: -0.2 * np.tanh(z), ("z",), 0.2, 0.2, name="-0.2*tanh(z)"),
        driver_g=GrowthBoundedFunction.constant(0.0, ("z",), name="zero"),
        barrier=Barrier.constant(-0.5),
        growth=1.0,
    )
    return CoupledProblem(forward=forward, backward=backward, growth=1.0, envelope=1.0, name="decoupled")


def coupled_tanh_problem() -> CoupledProblem:
    """b = 0.2 tanh(y), f = 0.2 tanh(x) - 0.1 y, sigma = 1, xi = B_T, L = -1."""
    forward = ForwardSpec(
        x0=0.0,
        b=_coefficient(lambda t, y: 0.2 * np.tanh(y), ("y",), 0.2, 0.2, {"y": "increasing"}, "0.2*tanh(y)"),
        h=builtin_coefficient("zero"),
        sigma=builtin_coefficient("unit_sigma"),
        growth=1.0,
    )
    backward = BackwardSpec(
        terminal=lambda b: b,
        driver_f=_coefficient(
            lambda t, x, y: 0.2 * np.tanh(x) - 0.1 * y, ("x", "y"), 0.2, 0.2,
            {"x": "increasing"}, "0.2*tanh(x)-0.1*y",
        ),
        driver_g=GrowthBoundedFunction.constant(0.0, ("x",), name="zero"),
        barrier=Barrier.constant(-1.0),
        growth=1.0,
    )
    return CoupledProblem(forward=forward, backward=backward, growth=1.0, envelope=1.0, name="coupled_tanh")


def lipschitz_coupled_problem() -> CoupledProblem:
    """b = 0.3 y, f = 0.3 tanh(x) - 0.2 y, sigma = 1, xi = tanh(B_T), L = -2."""
    forward = ForwardSpec(
        x0=0.0,
        b=_coefficient(lambda t, y: 0.3 * y, ("y",), 0.3, 0.3, {"y": "increasing"}, "0.3*y"),
        h=builtin_coefficient("zero"),
        sigma=builtin_coefficient("unit_sigma"),
        growth=1.0,
    )
    backward = BackwardSpec(
        terminal=np.tanh,
        driver_f=_coefficient(
            lambda t, x, y: 0.3 * np.tanh(x) - 0.2 * y, ("x", "y"), 0.3, 0.3,
            {"x": "increasing"}, "0.3*tanh(x)-0.2*y",
        ),
        driver_g=GrowthBoundedFunction.constant(0.0, ("x",), name="zero"),
        barrier=Barrier.constant(-2.0),
        growth=1.0,
    )
    return CoupledProblem(forward=forward, backward=backward, growth=1.0, envelope=1.0,
                          name="lipschitz_coupled")


def sqrt_coupled_problem() -> CoupledProblem:
    """b = 0.2 tanh(y), f = 0.3 sqrt(x+), sigma = 1, xi = B_T, L = -1; f is not Lipschitz at 0."""
    forward = ForwardSpec(
        x0=0.0,
        b=_coefficient(lambda t, y: 0.2 * np.tanh(y), ("y",), 0.2, 0.2, {"y": "increasing"}, "0.2*tanh(y)"),
        h=builtin_coefficient("zero"),
        sigma=builtin_coefficient("unit_sigma"),
        growth=1.0,
    )
    backward = BackwardSpec(
        terminal=lambda b: b,
        driver_f=_coefficient(
            lambda t, x: 0.3 * np.sqrt(np.maximum(x, 0.0)), ("x",), 0.3, None,
            {"x": "increasing"}, "0.3*sqrt(x+)",
        ),
        driver_g=GrowthBoundedFunction.constant(0.0, ("x",), name="zero"),
        barrier=Barrier.constant(-1.0),
        growth=1.0,
    )
    return CoupledProblem(forward=forward, backward=backward, growth=1.0, envelope=1.0, name="sqrt_coupled")


BUILTIN_PROBLEMS: dict[str, Callable[[], CoupledProblem]] = {
    "decoupled": decoupled_problem,
    "coupled_tanh": coupled_tanh_problem,
    "lipschitz_coupled": lipschitz_coupled_problem,
    "sqrt_coupled": sqrt_coupled_problem,
}


def builtin_problem(name: str) -> CoupledProblem:
    try:
        problem = BUILTIN_PROBLEMS[name]()
    except KeyError:
        known = ", ".join(sorted(BUILTIN_PROBLEMS))
        raise ConfigurationError(f"Unknown built-in problem '{name}' (known: {known})") from None
    logger.debug(f"Loaded built-in problem '{name}'")
    return problem
