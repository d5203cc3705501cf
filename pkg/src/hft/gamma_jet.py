r"""
Iterated carre du champ operators on truncated Taylor jets.

The recursion

.. math::
    \Gamma_0(f, h) = f h, \qquad
    \Gamma_{n+1}(f, h) = \tfrac12\bigl(L\Gamma_n(f, h) - \Gamma_n(f, Lh) - \Gamma_n(h, Lf)\bigr)

is evaluated exactly in truncated-Taylor arithmetic. A jet of order ``m`` at
``x`` stores ``c_k = f^{(k)}(x) / k!`` for ``k <= m``; products truncate at the
smaller order and ``L`` lowers the order by two. The input jet is padded with
zeros up to order ``2n`` (its polynomial extension), which is exact because
``Gamma_n`` only sees derivatives up to order ``n``.

Jets are vectorised: ``coeffs`` has shape ``(m + 1,) + batch``, so a whole
sample set goes through the recursion at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np

from .exceptions import DomainError, JetOrderError
from .model_spaces import Generator1D

DEFAULT_ORDER = 4
_REQUIRED_ORDER = {0: 0, 1: 1, 2: 2, 3: 4}


class Jet:
    """Truncated Taylor expansion at ``x`` (possibly a batch of points)."""

    __slots__ = ("x", "coeffs")

    def __init__(self, x, coeffs):
        self.x = np.asarray(x, dtype=float)
        self.coeffs = np.asarray(coeffs, dtype=float)

    @classmethod
    def from_derivatives(cls, x, derivs) -> Jet:
        derivs = np.asarray(derivs, dtype=float)
        fact = np.array([factorial(k) for k in range(derivs.shape[0])], dtype=float)
        return cls(x, derivs / fact.reshape((-1,) + (1,) * (derivs.ndim - 1)))

    @property
    def order(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def value(self) -> np.ndarray:
        return self.coeffs[0]

    def derivatives(self) -> np.ndarray:
        fact = np.array([factorial(k) for k in range(self.order + 1)], dtype=float)
        return self.coeffs * fact.reshape((-1,) + (1,) * (self.coeffs.ndim - 1))

    def truncate(self, order: int) -> Jet:
        return Jet(self.x, self.coeffs[: order + 1])

    def pad(self, order: int) -> Jet:
        if order <= self.order:
            return self
        extra = np.zeros((order - self.order,) + self.coeffs.shape[1:])
        return Jet(self.x, np.concatenate([self.coeffs, extra]))

    def deriv(self) -> Jet:
        k = np.arange(1, self.order + 1, dtype=float).reshape((-1,) + (1,) * (self.coeffs.ndim - 1))
        return Jet(self.x, self.coeffs[1:] * k)

    def __add__(self, other):
        if isinstance(other, Jet):
            m = min(self.order, other.order)
            return Jet(self.x, self.coeffs[: m + 1] + other.coeffs[: m + 1])
        out = self.coeffs.copy()
        out[0] = out[0] + other
        return Jet(self.x, out)

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.x, -self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.x, self.coeffs * other)
        m = min(self.order, other.order)
        a, b = self.coeffs, other.coeffs
        out = np.zeros((m + 1,) + np.broadcast_shapes(a.shape[1:], b.shape[1:]))
        for k in range(m + 1):
            for i in range(k + 1):
                out[k] += a[i] * b[k - i]
        return Jet(self.x, out)

    __rmul__ = __mul__

    def __repr__(self):
        return f"Jet(order={self.order}, x={self.x!r})"


def apply_generator(gen: Generator1D, jet: Jet) -> Jet:
    """Jet of ``L f`` (order drops by two)."""
    if jet.order < 2:
        raise JetOrderError("applying L needs a jet of order >= 2")
    m = jet.order - 2
    a_c, b_c = gen.coeff_jets(jet.x, m)
    d1 = jet.deriv()
    d2 = d1.deriv()
    return Jet(jet.x, a_c) * d2 + Jet(jet.x, b_c) * d1.truncate(m)


def gamma_jet(gen: Generator1D, n: int, f: Jet, h: Jet | None = None) -> Jet:
    """Jet of ``Gamma_n(f, h)``; order is ``min order - 2n``."""
    if n == 0:
        return f * (f if h is None else h)
    if h is None or h is f:
        g = gamma_jet(gen, n - 1, f)
        return 0.5 * (apply_generator(gen, g) - 2.0 * gamma_jet(gen, n - 1, f, apply_generator(gen, f)))
    g = gamma_jet(gen, n - 1, f, h)
    lf = apply_generator(gen, f)
    lh = apply_generator(gen, h)
    return 0.5 * (apply_generator(gen, g) - gamma_jet(gen, n - 1, f, lh) - gamma_jet(gen, n - 1, h, lf))


def _check_order(jet: Jet, n: int) -> None:
    if n not in _REQUIRED_ORDER:
        raise ValueError(f"Gamma_n is only supported for n in 0..3, got {n}")
    if jet.order < _REQUIRED_ORDER[n]:
        raise JetOrderError(
            f"Gamma_{n} needs a jet of order >= {_REQUIRED_ORDER[n]}, got {jet.order}"
        )


def gamma_n_recursive(gen: Generator1D, fjet: Jet, n: int, hjet: Jet | None = None) -> np.ndarray:
    """``Gamma_n(f)(x)`` (or ``Gamma_n(f, h)(x)``) through the recursion."""
    _check_order(fjet, n)
    f = fjet.truncate(2 * n).pad(2 * n)
    if hjet is None:
        return gamma_jet(gen, n, f).value
    _check_order(hjet, n)
    h = hjet.truncate(2 * n).pad(2 * n)
    return gamma_jet(gen, n, f, h).value


def gamma_polarized(gen: Generator1D, fjet: Jet, hjet: Jet, n: int) -> np.ndarray:
    """``Gamma_n(f, h) = (Gamma_n(f + h) - Gamma_n(f - h)) / 4``."""
    return 0.25 * (gamma_n_recursive(gen, fjet + hjet, n) - gamma_n_recursive(gen, fjet - hjet, n))


def laguerre_gamma_explicit(p: float, derivs, x, n: int) -> np.ndarray:
    """Closed forms of ``Gamma_1..Gamma_3`` for the 1D Laguerre generator.

    ``derivs`` is ``(f', f'', f''')``.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("Laguerre closed forms need x > 0")
    f1, f2, f3 = (np.asarray(d, dtype=float) for d in derivs)
    if n == 1:
        return x * f1**2
    if n == 2:
        return x**2 * f2**2 + x * f1 * f2 + 0.5 * (p + x) * f1**2
    if n == 3:
        return (
            x**3 * f3**2
            + 3.0 * x**2 * f2 * f3
            + 1.5 * (p + x) * x * f2**2
            + 1.5 * x * f2**2
            + 1.5 * x * f1 * f2
            + 0.25 * (3.0 * p + x) * f1**2
        )
    raise ValueError(f"closed forms exist for n in 1..3, got {n}")


def ou_gamma_explicit(derivs, n: int) -> np.ndarray:
    """Closed forms for Ornstein-Uhlenbeck: ``Gamma_n = sum_k C(n-1, k-1) (f^{(k)})^2``."""
    f1, f2, f3 = (np.asarray(d, dtype=float) for d in derivs)
    if n == 1:
        return f1**2
    if n == 2:
        return f2**2 + f1**2
    if n == 3:
        return f3**2 + 3.0 * f2**2 + f1**2
    raise ValueError(f"closed forms exist for n in 1..3, got {n}")


def sample_jets(gen: Generator1D, n_samples: int, seed: int, order: int = DEFAULT_ORDER,
                coeff_range: float = 10.0, x_range: tuple[float, float] | None = None) -> Jet:
    """Seeded random jets with Taylor coefficients uniform in ``[-coeff_range, coeff_range]``.

    Base points are uniform over ``x_range`` (default: the central part of the
    support, ``[-10, 10]`` for OU and ``(0, 40)`` otherwise), half of them
    log-uniform for half-line spaces so that the boundary region is covered.
    """
    rng = np.random.default_rng(seed)
    if x_range is None:
        x_range = (-10.0, 10.0) if gen.kind == "ou" else (max(gen.support[0], 1e-6), 40.0)
    lo, hi = x_range
    x = rng.uniform(lo, hi, n_samples)
    if lo > 0:
        half = n_samples // 2
        x[:half] = np.exp(rng.uniform(np.log(lo), np.log(hi), half))
    coeffs = rng.uniform(-coeff_range, coeff_range, (order + 1, n_samples))
    return Jet(x, coeffs)


@dataclass
class GammaReport:
    """Minimal margin of ``Gamma_{n+1} - rho Gamma_n`` over a sample set."""

    n: int
    rho: float
    value: float
    margin: float
    witnesses: list[tuple[float, list[float]]] = field(default_factory=list)
    n_samples: int = 0
    seed: int | None = None
    tolerance: float = 1e-9

    @property
    def passed(self) -> bool:
        return self.margin >= -self.tolerance

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "rho": self.rho,
            "value": self.value,
            "margin": self.margin,
            "status": "PASS" if self.passed else "FAIL",
            "n_samples": self.n_samples,
            "seed": self.seed,
            "witnesses": [{"x": x, "coeffs": c} for x, c in self.witnesses],
        }


def certify_curvature(gen: Generator1D, n: int, rho: float, samples: Jet,
                      n_witnesses: int = 5, seed: int | None = None) -> GammaReport:
    """Sampled check of ``Gamma_{n+1} >= rho Gamma_n`` (``n`` in 1..2)."""
    if n not in (1, 2):
        raise ValueError("curvature certification covers n = 1 (CD) and n = 2")
    upper = gamma_n_recursive(gen, samples, n + 1)
    lower = gamma_n_recursive(gen, samples, n)
    margins = upper - rho * lower
    idx = np.argsort(margins)[:n_witnesses]
    witnesses = [(float(samples.x[i]), samples.coeffs[:, i].tolist()) for i in idx]
    worst = int(idx[0])
    return GammaReport(
        n=n,
        rho=rho,
        value=float(upper[worst]),
        margin=float(margins[worst]),
        witnesses=witnesses,
        n_samples=int(margins.size),
        seed=seed,
    )
