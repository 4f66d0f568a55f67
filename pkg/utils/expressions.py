"""
Arithmetic expression grammar for coefficient functions.

Expressions use + - * /, parentheses, numeric constants, pi, the functions
tanh, exp, abs, min, max and the variables t, x, y, z. They are parsed with
sympy and compiled to numpy functions with lambdify.
"""

import logging
import re
from typing import Callable, Optional

import numpy as np
import sympy as sp
from sympy.printing.numpy import NumPyPrinter

from models.coefficients import GrowthBoundedFunction
from services.errors import ConfigurationError


logger = logging.getLogger(__name__)


VARIABLES = ("t", "x", "y", "z")
FUNCTIONS = ("tanh", "exp", "abs", "min", "max")
CONSTANTS = ("pi",)
ALLOWED_CHARS = re.compile(r"^[0-9a-z_+\-*/()., ]*$")
IDENTIFIER = re.compile(r"[a-z_][a-z_0-9]*")
NUMBER = re.compile(r"\d+\.?\d*(?:e[+-]?\d+)?|\.\d+(?:e[+-]?\d+)?")

_SYMBOLS = {name: sp.Symbol(name, real=True) for name in VARIABLES}
_NAMESPACE = {
    **_SYMBOLS,
    "tanh": sp.tanh,
    "exp": sp.exp,
    "abs": sp.Abs,
    "min": sp.Min,
    "max": sp.Max,
    "pi": sp.pi,
}


def _check_tokens(text: str) -> None:
    if not text.strip():
        raise ConfigurationError("Empty coefficient expression")
    if not ALLOWED_CHARS.match(text):
        raise ConfigurationError(f"Expression '{text}' contains characters outside the grammar")
    if "**" in text:
        raise ConfigurationError(f"Expression '{text}': powers are not part of the grammar")
    stripped = NUMBER.sub(" ", text)
    for name in IDENTIFIER.findall(stripped):
        if name not in VARIABLES + FUNCTIONS + CONSTANTS:
            raise ConfigurationError(f"Expression '{text}': unknown name '{name}'")


def parse_expression(text: str) -> sp.Expr:
    """
    Parse an expression string into a sympy expression.

    Raises:
        ConfigurationError: On unknown names, characters or syntax errors
    """
    _check_tokens(text)
    try:
        expr = sp.sympify(text, locals=_NAMESPACE)
    except (sp.SympifyError, SyntaxError, TypeError) as e:
        raise ConfigurationError(f"Cannot parse expression '{text}': {e}") from e
    if not isinstance(expr, sp.Expr):
        raise ConfigurationError(f"Expression '{text}' is not arithmetic")
    return expr


class _ArrayPrinter(NumPyPrinter):
    """numpy printer whose max/min broadcast scalars against arrays."""

    def _fold(self, name: str, args) -> str:
        func = self._module_format(f"{self._module}.{name}")
        code = self._print(args[0])
        for arg in args[1:]:
            code = f"{func}({code}, {self._print(arg)})"
        return code

    def _print_Max(self, expr):
        return self._fold("maximum", expr.args)

    def _print_Min(self, expr):
        return self._fold("minimum", expr.args)


def compile_expression(text: str, variables: tuple[str, ...]) -> Callable[..., np.ndarray]:
    """
    Compile an expression into func(t, *args) over the given variables.

    Raises:
        ConfigurationError: If the expression uses a variable not in
            `variables` (t is always available)
    """
    expr = parse_expression(text)
    used = sorted(s.name for s in expr.free_symbols)
    extra = [name for name in used if name != "t" and name not in variables]
    if extra:
        raise ConfigurationError(f"Expression '{text}' uses {extra}; allowed here: {variables}")

    symbols = [_SYMBOLS[name] for name in ("t",) + tuple(variables)]
    printer = _ArrayPrinter({"fully_qualified_modules": False, "inline": True,
                             "allow_unknown_functions": False, "user_functions": {}})
    compiled = sp.lambdify(symbols, expr, modules="numpy", printer=printer)

    def func(t, *args):
        return np.asarray(compiled(t, *args), dtype=float)

    return func


def expression_variables(text: str, allowed: tuple[str, ...]) -> tuple[str, ...]:
    """Variables of `allowed` that occur in the expression, in `allowed` order."""
    used = {s.name for s in parse_expression(text).free_symbols}
    return tuple(name for name in allowed if name in used)


def coefficient_from_expression(text: str, allowed: tuple[str, ...], growth: float,
                                lipschitz: Optional[float] = None,
                                monotone: Optional[dict[str, str]] = None,
                                name: str = "") -> GrowthBoundedFunction:
    """
    Build a coefficient from an expression.

    The coefficient takes only the variables the expression uses; a
    constant expression takes the first allowed variable so it still
    broadcasts against the state.
    """
    variables = expression_variables(text, allowed) or allowed[:1]
    func = compile_expression(text, variables)
    logger.debug(f"Compiled coefficient '{name or text}' over {variables}")
    return GrowthBoundedFunction(
        func=func,
        variables=variables,
        growth=float(growth),
        lipschitz=None if lipschitz is None else float(lipschitz),
        monotone={k: v for k, v in (monotone or {}).items() if k in variables},
        name=name or text,
    )
