"""Smooth test functions with analytic derivatives, and the standard suites."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import sympy as sp

_X = sp.Symbol("x", real=True)


@dataclass(frozen=True)
class SmoothFunction:
    """A vectorised function with its first ``len(derivs) - 1`` derivatives."""

    name: str
    derivs: tuple[Callable[[np.ndarray], np.ndarray], ...] = field(repr=False)
    positive: bool = False
    lipschitz: float | None = None

    def __call__(self, x):
        return self.d(0, x)

    @property
    def max_order(self) -> int:
        return len(self.derivs) - 1

    def d(self, k: int, x) -> np.ndarray:
        if k > self.max_order:
            raise ValueError(f"{self.name}: derivative of order {k} not available")
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.derivs[k](x), dtype=float), x.shape).copy()

    def derivatives(self, x, order: int) -> np.ndarray:
        return np.stack([self.d(k, x) for k in range(order + 1)])

    @classmethod
    def from_expr(cls, expr, name: str | None = None, order: int = 4, **kw) -> SmoothFunction:
        """Build from a sympy expression (or string) in the variable ``x``."""
        if isinstance(expr, str):
            expr = sp.sympify(expr, locals={"x": _X})
        fns = []
        cur = expr
        for _ in range(order + 1):
            fns.append(sp.lambdify(_X, cur, modules="numpy"))
            cur = sp.diff(cur, _X)
        return cls(name=name or str(expr), derivs=tuple(fns), **kw)

    @classmethod
    def constant(cls, c: float, order: int = 4) -> SmoothFunction:
        return cls.from_expr(sp.Float(c), name=f"const({c:g})", order=order, positive=c > 0,
                             lipschitz=0.0)


def laguerre_poly(n: int, p: float, order: int = 4) -> SmoothFunction:
    """Orthonormal generalised Laguerre polynomial of parameter ``p - 1``."""
    alpha = sp.nsimplify(p - 1)
    raw = sp.assoc_laguerre(n, alpha, _X)
    norm = sp.sqrt(sp.gamma(n + alpha + 1) / (sp.factorial(n) * sp.gamma(alpha + 1)))
    return SmoothFunction.from_expr(sp.expand(raw / norm), name=f"ell_{n}", order=order)


def hermite_poly(n: int, order: int = 4) -> SmoothFunction:
    """Orthonormal probabilists' Hermite polynomial ``He_n / sqrt(n!)``."""
    he = sp.hermite_prob(n, _X) if hasattr(sp, "hermite_prob") else _hermite_prob(n)
    return SmoothFunction.from_expr(sp.expand(he / sp.sqrt(sp.factorial(n))), name=f"He_{n}",
                                    order=order)


def _hermite_prob(n):
    return sp.expand(2 ** sp.Rational(-n, 2) * sp.hermite(n, _X / sp.sqrt(2)))


def function_suite(space: str, p: float = 1.5) -> list[SmoothFunction]:
    """Ten smooth test functions for a model space.

    Polynomials of degree <= 4, an exponential, tanh and a bump-modulated
    sinusoid; the Laguerre suite swaps in ``2 sqrt(x)`` and Laguerre
    eigenfunctions.
    """
    f = SmoothFunction.from_expr
    if space == "ou":
        return [
            f("x", lipschitz=1.0),
            f("x**2"),
            f("x**3 - 3*x"),
            f("x**4 - 2*x**2"),
            f("exp(-x)", positive=True),
            f("tanh(x)", lipschitz=1.0),
            f("2 + tanh(x)", positive=True, lipschitz=1.0),
            f("sin(2*x)*exp(-x**2/8)"),
            f("1 + x**2", positive=True),
            hermite_poly(2),
        ]
    return [
        f("x"),
        f("x**2"),
        f("x**3 - 3*x"),
        f("x**4/24"),
        f("exp(-x)", positive=True),
        f("2*sqrt(x)", positive=True, lipschitz=1.0),
        f("2 + tanh(x - 2)", positive=True),
        f("sin(2*x)*exp(-x/2)"),
        laguerre_poly(1, p),
        laguerre_poly(2, p),
    ]
