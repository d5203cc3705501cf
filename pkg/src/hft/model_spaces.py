r"""
One-dimensional weighted model spaces and log-Lipschitz potentials.

A model space is a diffusion generator ``L f = a f'' + b f'`` on an interval
together with its invariant probability density. The intrinsic metric is
``a(x)^{-1} dx^2``, so the distance between two points is
``|int a^{-1/2}|`` and the carre du champ is ``a (f')^2``. It is often
convenient to work in the *metric coordinate* ``s = int a^{-1/2} dx`` in which
the metric is Euclidean: ``s = x`` for Ornstein-Uhlenbeck and ``s = 2 sqrt(x)``
for Laguerre.

Two spaces come with closed forms:

* Ornstein-Uhlenbeck, ``a = 1``, ``b = -x``, standard Gaussian law,
  curvature constants ``rho1 = rho2 = 1``.
* Laguerre with parameter ``p >= 3/2``, ``a = x``, ``b = p - x``, gamma law
  ``x^{p-1} e^{-x} / Gamma(p)``, curvature constants ``rho1 = rho2 = 1/2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator
from scipy.special import gammaln

from .exceptions import DomainError, QuadratureError

ArrayFn = Callable[[np.ndarray], np.ndarray]

OU_HALF_WIDTH = 12.0
LAGUERRE_LEFT = 1e-10
DEFAULT_CERT_POINTS = 4096


@dataclass(frozen=True)
class Generator1D:
    """Elliptic diffusion generator ``a f'' + b f'`` with its invariant law.

    ``kind`` is ``"ou"``, ``"laguerre"`` or ``"custom"``. The callables are
    vectorised over numpy arrays. ``support`` is the truncated interval used
    for quadrature and grids; ``(lo, hi)`` is the true open domain.
    """

    kind: str
    lo: float
    hi: float
    a: ArrayFn
    b: ArrayFn
    da: ArrayFn
    log_density: ArrayFn
    rho1: float
    rho2: float
    support: tuple[float, float]
    p: float | None = None
    to_metric: ArrayFn | None = field(default=None, repr=False)
    from_metric: ArrayFn | None = field(default=None, repr=False)
    taylor: Callable[[np.ndarray, int], tuple[np.ndarray, np.ndarray]] | None = field(
        default=None, repr=False
    )

    @property
    def label(self) -> str:
        if self.kind == "laguerre":
            return f"laguerre(p={self.p:g})"
        return self.kind

    def density(self, x) -> np.ndarray:
        return np.exp(self.log_density(np.asarray(x, dtype=float)))

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all((x > self.lo) & (x < self.hi)))

    def check_points(self, x, what: str = "point") -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)) or not self.contains(x):
            raise DomainError(f"{what} outside the domain ({self.lo}, {self.hi}) of {self.label}")
        return x

    def metric(self, x) -> np.ndarray:
        """Metric coordinate ``s(x)``."""
        return self.to_metric(np.asarray(x, dtype=float))

    def inverse_metric(self, s) -> np.ndarray:
        return self.from_metric(np.asarray(s, dtype=float))

    def metric_jacobian(self, x) -> tuple[np.ndarray, np.ndarray]:
        """First and second derivatives of ``s(x)``."""
        x = np.asarray(x, dtype=float)
        a = self.a(x)
        ds = a ** -0.5
        d2s = -0.5 * a ** -1.5 * self.da(x)
        return ds, d2s

    def coeff_jets(self, x, order: int) -> tuple[np.ndarray, np.ndarray]:
        """Taylor coefficients of ``a`` and ``b`` at ``x`` up to ``order``.

        Shape ``(order + 1,) + x.shape``.
        """
        x = np.asarray(x, dtype=float)
        if self.taylor is not None:
            return self.taylor(x, order)
        return _fd_taylor(self.a, x, order), _fd_taylor(self.b, x, order)

    def metric_grid(self, n: int, support: tuple[float, float] | None = None) -> np.ndarray:
        """``n`` points equispaced in the metric coordinate over ``support``."""
        lo, hi = support or self.support
        s = np.linspace(self.metric(lo), self.metric(hi), n)
        x = self.inverse_metric(s)
        x[0], x[-1] = lo, hi
        return x


def _fd_taylor(fn: ArrayFn, x: np.ndarray, order: int, h: float = 1e-2) -> np.ndarray:
    # Taylor coefficients from a local polynomial fit on a symmetric stencil.
    m = max(order + 2, 5)
    offsets = h * np.arange(-m, m + 1)
    out = np.zeros((order + 1,) + x.shape)
    flat = x.ravel()
    for j, x0 in enumerate(flat):
        vals = fn(x0 + offsets)
        coeffs = np.polynomial.polynomial.polyfit(offsets, vals, min(2 * m, order + 4))
        out.reshape(order + 1, -1)[:, j] = coeffs[: order + 1]
    return out


def _ou_taylor(x: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    a = np.zeros((order + 1,) + x.shape)
    b = np.zeros_like(a)
    a[0] = 1.0
    b[0] = -x
    if order >= 1:
        b[1] = -1.0
    return a, b


def make_ou() -> Generator1D:
    """Ornstein-Uhlenbeck generator ``f'' - x f'`` with the standard Gaussian law."""
    log_norm = 0.5 * math.log(2.0 * math.pi)
    return Generator1D(
        kind="ou",
        lo=-math.inf,
        hi=math.inf,
        a=lambda x: np.ones_like(np.asarray(x, dtype=float)),
        b=lambda x: -np.asarray(x, dtype=float),
        da=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        log_density=lambda x: -0.5 * np.asarray(x, dtype=float) ** 2 - log_norm,
        rho1=1.0,
        rho2=1.0,
        support=(-OU_HALF_WIDTH, OU_HALF_WIDTH),
        to_metric=lambda x: np.asarray(x, dtype=float) * 1.0,
        from_metric=lambda s: np.asarray(s, dtype=float) * 1.0,
        taylor=_ou_taylor,
    )


def make_laguerre(p: float) -> Generator1D:
    """Laguerre generator ``x f'' + (p - x) f'`` with the gamma law of shape ``p``.

    Only ``p >= 3/2`` is accepted: below that the generator is not
    essentially self-adjoint on compactly supported smooth functions and a
    boundary condition at 0 would have to be chosen.
    """
    p = float(p)
    if not p >= 1.5:
        raise DomainError(
            f"Laguerre parameter p={p} unsupported: need p >= 3/2 for essential self-adjointness"
        )
    log_norm = gammaln(p)

    def log_density(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return (p - 1.0) * np.log(x) - x - log_norm

    def taylor(x, order):
        a = np.zeros((order + 1,) + x.shape)
        b = np.zeros_like(a)
        a[0] = x
        b[0] = p - x
        if order >= 1:
            a[1] = 1.0
            b[1] = -1.0
        return a, b

    return Generator1D(
        kind="laguerre",
        lo=0.0,
        hi=math.inf,
        a=lambda x: np.asarray(x, dtype=float) * 1.0,
        b=lambda x: p - np.asarray(x, dtype=float),
        da=lambda x: np.ones_like(np.asarray(x, dtype=float)),
        log_density=log_density,
        rho1=0.5,
        rho2=0.5,
        support=(LAGUERRE_LEFT, max(80.0, 20.0 * p)),
        p=p,
        to_metric=lambda x: 2.0 * np.sqrt(np.asarray(x, dtype=float)),
        from_metric=lambda s: 0.25 * np.asarray(s, dtype=float) ** 2,
        taylor=taylor,
    )


def make_custom(
    a: ArrayFn,
    b: ArrayFn,
    log_density: ArrayFn,
    rho1: float,
    rho2: float,
    lo: float,
    hi: float,
    support: tuple[float, float],
    da: ArrayFn | None = None,
    n_table: int = 20001,
) -> Generator1D:
    """Generator with user supplied coefficients.

    The metric coordinate is tabulated by cumulative quadrature of
    ``a^{-1/2}`` and inverted by monotone interpolation; the coefficient
    Taylor jets fall back to local polynomial fits.
    """
    if rho1 <= 0 or rho2 <= 0:
        raise DomainError("curvature constants must be positive")
    xs = np.linspace(support[0], support[1], n_table)
    if np.any(a(xs) <= 0):
        raise DomainError("diffusion coefficient must be positive on the support")
    integrand = a(xs) ** -0.5
    s_tab = integrate.cumulative_simpson(integrand, x=xs, initial=0.0)
    fwd = PchipInterpolator(xs, s_tab, extrapolate=True)
    inv = PchipInterpolator(s_tab, xs, extrapolate=True)
    if da is None:
        def da(x, _h=1e-6):
            x = np.asarray(x, dtype=float)
            return (a(x + _h) - a(x - _h)) / (2 * _h)
    mass, _ = integrate.quad(lambda x: float(np.exp(log_density(np.array(x)))), *support, limit=200)
    if abs(mass - 1.0) > 1e-8:
        raise DomainError(f"invariant density integrates to {mass!r}, not 1")
    return Generator1D(
        kind="custom", lo=lo, hi=hi, a=a, b=b, da=da, log_density=log_density,
        rho1=rho1, rho2=rho2, support=support, to_metric=fwd, from_metric=inv,
    )


def metric_distance(gen: Generator1D, x, y) -> np.ndarray:
    """Intrinsic distance ``|int_x^y a^{-1/2}|``."""
    x = gen.check_points(x)
    y = gen.check_points(y)
    return np.abs(gen.metric(y) - gen.metric(x))


def carre_du_champ(gen: Generator1D, df, x) -> np.ndarray:
    """``Gamma(f)(x) = a(x) f'(x)^2``."""
    return gen.a(np.asarray(x, dtype=float)) * np.asarray(df, dtype=float) ** 2


@dataclass(frozen=True)
class Potential:
    """Log-Lipschitz potential ``V`` defining ``nu = e^{-V} mu``.

    ``V``, ``dV`` (and optionally ``d2V``) describe the raw potential;
    ``normalization_shift`` is added so that ``e^{-V - shift}`` is a
    probability density against ``mu``. ``K`` is the certified Lipschitz
    constant in the generator metric.
    """

    V: ArrayFn
    dV: ArrayFn
    K: float
    normalization_shift: float = 0.0
    d2V: ArrayFn | None = None
    name: str = "custom"

    def value(self, x) -> np.ndarray:
        return self.V(np.asarray(x, dtype=float)) + self.normalization_shift

    def density(self, x) -> np.ndarray:
        """``f = e^{-V}`` after normalisation."""
        return np.exp(-self.value(x))

    def density_derivatives(self, x, order: int = 2) -> list[np.ndarray]:
        """``[f, f', f'']`` up to ``order`` for ``f = e^{-V}``."""
        x = np.asarray(x, dtype=float)
        f = self.density(x)
        out = [f]
        if order >= 1:
            dv = self.dV(x)
            out.append(-dv * f)
        if order >= 2:
            if self.d2V is None:
                raise ValueError(f"potential {self.name!r} has no second derivative")
            out.append((dv**2 - self.d2V(x)) * f)
        return out

    @property
    def is_zero(self) -> bool:
        return self.K == 0.0


def zero_potential() -> Potential:
    zero = lambda x: np.zeros_like(np.asarray(x, dtype=float))  # noqa: E731
    return Potential(V=zero, dV=zero, d2V=zero, K=0.0, name="zero")


def linear_potential(k: float) -> Potential:
    """``V(x) = k x``; on the OU space its Lipschitz constant is ``|k|``."""
    return Potential(
        V=lambda x: k * np.asarray(x, dtype=float),
        dV=lambda x: np.full_like(np.asarray(x, dtype=float), k),
        d2V=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        K=abs(k),
        name=f"linear({k:g})",
    )


def sqrt_potential(c: float) -> Potential:
    """``V(x) = 2 c sqrt(x)``; on a Laguerre space its Lipschitz constant is ``|c|``."""
    return Potential(
        V=lambda x: 2.0 * c * np.sqrt(np.asarray(x, dtype=float)),
        dV=lambda x: c / np.sqrt(np.asarray(x, dtype=float)),
        d2V=lambda x: -0.5 * c * np.asarray(x, dtype=float) ** -1.5,
        K=abs(c),
        name=f"sqrt({c:g})",
    )


def tabulated_potential(x, v, dv, name: str = "tabulated") -> Potential:
    """Potential given by samples ``(x, V, V')``, interpolated by monotone cubics.

    ``K`` is left at 0 until :func:`certify_lipschitz` is run on a generator.
    """
    x = np.asarray(x, dtype=float)
    order = np.argsort(x)
    vi = PchipInterpolator(x[order], np.asarray(v, dtype=float)[order], extrapolate=True)
    dvi = PchipInterpolator(x[order], np.asarray(dv, dtype=float)[order], extrapolate=True)
    d2vi = dvi.derivative()
    return Potential(V=vi, dV=dvi, d2V=d2vi, K=0.0, name=name)


def certify_lipschitz(gen: Generator1D, pot: Potential, grid=None) -> float:
    """Grid supremum of ``sqrt(a) |V'|``, the Lipschitz constant in the metric."""
    if grid is None:
        grid = gen.metric_grid(DEFAULT_CERT_POINTS)
    grid = np.asarray(grid, dtype=float)
    if grid.size < 100:
        raise DomainError("Lipschitz certification needs at least 100 grid points")
    gen.check_points(grid, "certification grid")
    dv = np.asarray(pot.dV(grid), dtype=float)
    if not np.all(np.isfinite(dv)):
        raise DomainError(f"non-finite derivative of potential {pot.name!r} on the grid")
    return float(np.max(np.sqrt(gen.a(grid)) * np.abs(dv)))


def normalizing_constant(gen: Generator1D, pot: Potential, tol: float = 1e-12) -> float:
    """``Z = int e^{-V} dmu`` for the raw potential, by adaptive quadrature."""
    lo, hi = gen.support

    def integrand(x):
        return float(np.exp(-pot.V(np.array(x)) + gen.log_density(np.array(x))))

    s_lo, s_hi = float(gen.metric(lo)), float(gen.metric(hi))
    breaks = gen.inverse_metric(np.linspace(s_lo, s_hi, 9)[1:-1])
    total = 0.0
    edges = np.concatenate([[lo], breaks, [hi]])
    for left, right in zip(edges[:-1], edges[1:]):
        val, err, *rest = integrate.quad(
            integrand, left, right, epsabs=tol * 1e-2, epsrel=tol, limit=400, full_output=1
        )
        if len(rest) > 1 and err > 1e-9 * max(1.0, abs(val)):
            raise QuadratureError(f"normalisation quadrature did not converge: {rest[1]}")
        total += val
    return total


def normalize_potential(gen: Generator1D, pot: Potential) -> Potential:
    """Shift ``V`` by ``log Z`` so that ``int e^{-V} dmu = 1``."""
    if pot.is_zero and pot.name == "zero":
        return replace(pot, normalization_shift=0.0)
    z = normalizing_constant(gen, pot)
    if not np.isfinite(z) or z <= 0:
        raise QuadratureError(f"normalising constant is {z!r}")
    return replace(pot, normalization_shift=math.log(z))


def prepare_potential(gen: Generator1D, pot: Potential, grid=None) -> Potential:
    """Certify ``K`` on ``grid`` and normalise."""
    k = certify_lipschitz(gen, pot, grid)
    return normalize_potential(gen, replace(pot, K=k))
