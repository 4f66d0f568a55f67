"""
Problem data: coefficient functions, barriers and the coupled problem.

Coefficients are evaluable handles with declared structure (growth
constant, optional Lipschitz constant, monotonicity per argument).
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from services.errors import ConfigurationError


logger = logging.getLogger(__name__)


VALID_MONOTONICITY = ("increasing", "decreasing")


@dataclass(frozen=True)
class GrowthBoundedFunction:
    """
    A continuous coefficient with linear growth.

    The callable is invoked as func(t, *args) with one array per entry of
    `variables`; time is never part of the approximated arguments.

    Attributes:
        func: Vectorised callable
        variables: Argument names after t, e.g. ("x", "y")
        growth: Linear-growth constant M, |f(v)| <= M(1 + |v|)
        lipschitz: Declared Lipschitz constant in the variables, if any
        monotone: Declared monotonicity per argument name
        name: Label used in logs and reports
    """
    func: Callable[..., np.ndarray]
    variables: tuple[str, ...]
    growth: float
    lipschitz: Optional[float] = None
    monotone: dict[str, str] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if self.growth < 0.0:
            raise ConfigurationError(f"{self.label}: growth constant must be >= 0")
        if self.lipschitz is not None and self.lipschitz < 0.0:
            raise ConfigurationError(f"{self.label}: Lipschitz constant must be >= 0")
        for arg, kind in self.monotone.items():
            if arg not in self.variables:
                raise ConfigurationError(f"{self.label}: monotone flag on unknown argument '{arg}'")
            if kind not in VALID_MONOTONICITY:
                raise ConfigurationError(f"{self.label}: unknown monotonicity '{kind}'")

    @property
    def label(self) -> str:
        return self.name or "coefficient"

    @property
    def arity(self) -> int:
        return len(self.variables)

    def depends_on(self, variable: str) -> bool:
        return variable in self.variables

    def __call__(self, t, *args) -> np.ndarray:
        if len(args) != self.arity:
            raise ConfigurationError(
                f"{self.label} expects {self.arity} arguments {self.variables}, got {len(args)}"
            )
        arrays = np.broadcast_arrays(*[np.asarray(a, dtype=float) for a in args]) if args else []
        value = np.asarray(self.func(t, *arrays), dtype=float)
        if arrays:
            value = np.broadcast_to(value, arrays[0].shape).copy()
        return value

    def evaluate(self, points, t: float = 0.0) -> np.ndarray:
        """Evaluate on an (n, m) array of points."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[-1] != self.arity:
            raise ConfigurationError(
                f"{self.label}: points have {points.shape[-1]} columns, arity is {self.arity}"
            )
        return self(t, *np.moveaxis(points, -1, 0))

    def call_named(self, t, **state) -> np.ndarray:
        """Call with arguments picked by name from `state`."""
        missing = [v for v in self.variables if v not in state]
        if missing:
            raise ConfigurationError(f"{self.label} needs {missing} but they were not supplied")
        return self(t, *[state[v] for v in self.variables])

    @classmethod
    def constant(cls, value: float, variables: tuple[str, ...], name: str = "") -> "GrowthBoundedFunction":
        """Constant coefficient; nondecreasing in every argument."""
        return cls(
            func=lambda t, *args: np.full(np.shape(args[0]) if args else (), value),
            variables=variables,
            growth=abs(value),
            lipschitz=0.0,
            monotone={v: "increasing" for v in variables},
            name=name or f"const({value})",
        )


@dataclass(frozen=True)
class Barrier:
    """Lower obstacle L(t, b) with a declared upper bound c."""
    func: Callable[[float, np.ndarray], np.ndarray]
    ceiling: float
    name: str = ""

    def __call__(self, t, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        return np.broadcast_to(np.asarray(self.func(t, b), dtype=float), b.shape).copy()

    @classmethod
    def constant(cls, level: float) -> "Barrier":
        return cls(func=lambda t, b: np.full(np.shape(b), level), ceiling=level, name=f"L={level}")

    @classmethod
    def inactive(cls) -> "Barrier":
        """Barrier far below any value of interest."""
        return cls.constant(-1e9)


@dataclass(frozen=True)
class TerminalTransform:
    """Bounded nondecreasing continuous map applied to the terminal value."""
    func: Callable[[np.ndarray], np.ndarray]
    bound: Optional[float]
    name: str = ""


@dataclass(frozen=True)
class ForwardSpec:
    """
    Forward G-SDE X = x0 + int b ds + int h d<B> + int sigma dB.

    b and h take (x, y) or a subset; sigma takes (x,) or nothing.
    """
    x0: float
    b: GrowthBoundedFunction
    h: GrowthBoundedFunction
    sigma: GrowthBoundedFunction
    growth: float

    def __post_init__(self):
        if self.sigma.depends_on("y"):
            raise ConfigurationError("sigma must not depend on y")
        if self.sigma.lipschitz is None:
            raise ConfigurationError("sigma needs a declared Lipschitz constant")
        for coeff in (self.b, self.h):
            if coeff.depends_on("y") and coeff.monotone.get("y") != "increasing":
                raise ConfigurationError(f"{coeff.label} must be declared increasing in y")

    @property
    def needs_y(self) -> bool:
        return self.b.depends_on("y") or self.h.depends_on("y")


@dataclass(frozen=True)
class BackwardSpec:
    """
    Reflected backward equation data.

    Attributes:
        terminal: xi as a function of the terminal B-state
        driver_f: ds driver of (x, y, z) or a subset
        driver_g: d<B> driver of (x, y, z) or a subset
        barrier: Lower obstacle L
        growth: Growth constant K of the envelope equations
    """
    terminal: Callable[[np.ndarray], np.ndarray]
    driver_f: GrowthBoundedFunction
    driver_g: GrowthBoundedFunction
    barrier: Barrier
    growth: float = 1.0

    def __post_init__(self):
        for coeff in (self.driver_f, self.driver_g):
            if coeff.depends_on("x") and coeff.monotone.get("x") != "increasing":
                raise ConfigurationError(f"{coeff.label} must be declared increasing in x")

    def terminal_values(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        return np.broadcast_to(np.asarray(self.terminal(b), dtype=float), b.shape).copy()

    def check_barrier(self, t, b, tol: float = 1e-12) -> None:
        """Audit L <= c on the supplied states."""
        level = self.barrier(t, b)
        excess = float(np.max(level - self.barrier.ceiling))
        if excess > tol:
            raise ConfigurationError(
                f"Barrier {self.barrier.name} exceeds its ceiling {self.barrier.ceiling} by {excess:.3g}"
            )

    def terminal_gap(self, horizon: float, b) -> float:
        """min over states of xi - L_T; negative means xi < L_T somewhere."""
        return float(np.min(self.terminal_values(b) - self.barrier(horizon, b)))


@dataclass(frozen=True)
class CoupledProblem:
    """Full coefficient tuple of the reflected forward-backward system."""
    forward: ForwardSpec
    backward: BackwardSpec
    growth: float
    envelope: float
    name: str = ""
    terminal_transform: Optional[TerminalTransform] = None

    def __post_init__(self):
        if self.envelope < self.growth:
            raise ConfigurationError(
                f"Envelope constant K={self.envelope} must be >= growth constant M={self.growth}"
            )

    @property
    def is_decoupled(self) -> bool:
        return not self.forward.needs_y and not (
            self.backward.driver_f.depends_on("x") or self.backward.driver_g.depends_on("x")
        )
