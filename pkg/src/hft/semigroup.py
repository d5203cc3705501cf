r"""
Evaluation of the heat semigroup ``P_t = e^{tL}`` on the model spaces.

Three interchangeable backends share one interface,
``evaluator.pt(f, t, x, deriv=k)`` returning ``d^k/dx^k (P_t f)(x)``:

``MehlerEvaluator`` (Ornstein-Uhlenbeck)
    Gauss-Hermite quadrature of the Mehler formula
    ``P_t f(x) = E f(x e^{-t} + sqrt(1 - e^{-2t}) Z)``. Derivatives are taken
    under the integral (each one brings a factor ``e^{-t}``), or against
    Hermite weights when ``f`` has no analytic derivative.
``SpectralEvaluator`` (Laguerre)
    ``P_t f = sum_n e^{-nt} <f, l_n> l_n`` with orthonormal Laguerre
    polynomials; coefficients by a Gauss-Laguerre rule with at least ``2N``
    nodes.
``FiniteDifferenceEvaluator`` (any space)
    Crank-Nicolson for ``u_t = L u`` written in divergence form
    ``(W u_s)_s / W`` on a grid uniform in the metric coordinate ``s``, with
    zero flux at both ends. The scheme conserves the discrete ``mu``-mass
    exactly and is symmetric in the discrete ``L^2(mu)`` product.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermeval
from scipy.interpolate import CubicSpline
from scipy.linalg import cho_solve_banded, cholesky_banded

from .exceptions import DomainError, HFTError, TruncationError
from .functions import SmoothFunction
from .model_spaces import Generator1D
from .quadrature import gauss_hermite, gauss_laguerre, gauss_legendre, laguerre_orthonormal
from .reports import VerificationReport, status_from

T_SCHEDULE = (0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0)
POSITIVITY_FLOOR = 1e-300

FnLike = SmoothFunction | Callable[[np.ndarray], np.ndarray]


def _eval(f: FnLike, x: np.ndarray, k: int = 0) -> np.ndarray:
    if isinstance(f, SmoothFunction):
        return f.d(k, x)
    if k:
        raise ValueError("derivatives need a SmoothFunction")
    return np.asarray(f(x), dtype=float)


def _has_deriv(f: FnLike, k: int) -> bool:
    return k == 0 or (isinstance(f, SmoothFunction) and f.max_order >= k)


class SemigroupEvaluator:
    """Common interface; see the module docstring for the backends."""

    backend: str = "abstract"

    def __init__(self, gen: Generator1D):
        self.gen = gen

    def pt(self, f: FnLike, t: float, x, deriv: int = 0) -> np.ndarray:
        raise NotImplementedError

    def pt_derivs(self, f: FnLike, t: float, x, order: int) -> np.ndarray:
        """Stack of ``d^k P_t f`` for ``k = 0..order``."""
        return np.stack([self.pt(f, t, x, k) for k in range(order + 1)])

    def pt_schedule(self, f: FnLike, times: Sequence[float], x, deriv: int = 0) -> np.ndarray:
        return np.stack([self.pt(f, t, x, deriv) for t in times])

    def schedule_derivs(self, f: FnLike, times: Sequence[float], x, order: int = 0) -> np.ndarray:
        """``d^k P_t f(x)`` for every time; shape ``(len(times), order+1) + x.shape``."""
        return np.stack([self.pt_derivs(f, t, x, order) for t in times])

    def fingerprint(self) -> dict:
        return {"backend": self.backend, "space": self.gen.label}

    @staticmethod
    def _check_time(t: float) -> float:
        t = float(t)
        if not t >= 0:
            raise DomainError(f"time must be non-negative, got {t}")
        return t


class MehlerEvaluator(SemigroupEvaluator):
    backend = "mehler"

    def __init__(self, gen: Generator1D, order: int = 128):
        if gen.kind != "ou":
            raise DomainError("the Mehler backend is specific to Ornstein-Uhlenbeck")
        super().__init__(gen)
        self.order = order
        self.nodes, self.weights = gauss_hermite(order)

    def pt(self, f, t, x, deriv=0):
        t = self._check_time(t)
        x = np.asarray(x, dtype=float)
        if t == 0.0:
            return _eval(f, x, deriv)
        et = math.exp(-t)
        sigma = math.sqrt(-math.expm1(-2.0 * t))
        y = x[..., None] * et + sigma * self.nodes
        if _has_deriv(f, deriv):
            vals = _eval(f, y, deriv)
            if not np.all(np.isfinite(vals)):
                raise HFTError("non-finite function values at Mehler nodes")
            return et**deriv * (vals @ self.weights)
        # d^k/dx^k E f(x e^{-t} + sigma Z) = (e^{-t}/sigma)^k E[f(.) He_k(Z)]
        he = hermeval(self.nodes, [0] * deriv + [1])
        vals = _eval(f, y)
        return (et / sigma) ** deriv * (vals @ (self.weights * he))

    def fingerprint(self):
        return {**super().fingerprint(), "quadrature_order": self.order}


class SpectralEvaluator(SemigroupEvaluator):
    """Laguerre expansion truncated at ``N``.

    With ``strict=True`` a :class:`TruncationError` is raised whenever
    ``|c_N| e^{-N t}`` exceeds ``tail_tol`` (relative to the largest
    coefficient), carrying an estimate of the order that would suffice.
    """

    backend = "spectral"

    def __init__(self, gen: Generator1D, n_terms: int = 200, tail_tol: float = 1e-12,
                 strict: bool = True, n_nodes: int | None = None):
        if gen.kind != "laguerre":
            raise DomainError("the spectral backend is specific to Laguerre spaces")
        super().__init__(gen)
        self.n_terms = n_terms
        self.alpha = gen.p - 1.0
        self.tail_tol = tail_tol
        self.strict = strict
        # sqrt-type data converge only algebraically under Gauss-Laguerre
        self.n_nodes = n_nodes or max(2 * n_terms, 3000)
        nodes, weights = gauss_laguerre(self.n_nodes, self.alpha)
        # beyond the support cutoff mu has mass below 1e-30, while nested
        # evaluations of truncated series grow like e^{x/2} there
        keep = (weights > 0) & (nodes <= gen.support[1])
        self._nodes = nodes[keep]
        # weight * e^{x/2} pairs with the e^{-x/2}-scaled polynomials
        self._scaled_weights = weights[keep] * np.exp(0.5 * nodes[keep])
        self._basis = laguerre_orthonormal(n_terms, self.alpha, self._nodes, scaled=True)[0]
        self._cache: dict[int, tuple[FnLike, np.ndarray]] = {}

    def coefficients(self, f: FnLike) -> np.ndarray:
        hit = self._cache.get(id(f))
        if hit is not None and hit[0] is f:
            return hit[1]
        vals = _eval(f, self._nodes)
        if not np.all(np.isfinite(vals)):
            raise HFTError("non-finite function values at Laguerre nodes")
        c = self._basis @ (self._scaled_weights * vals)
        self._cache[id(f)] = (f, c)
        return c

    def required_terms(self, f: FnLike, t: float) -> int:
        """Smallest ``N`` whose damped tail coefficient is below tolerance (extrapolated)."""
        c = np.abs(self.coefficients(f))
        scale = max(1.0, float(np.max(c)))
        n = np.arange(c.size)
        damped = c * np.exp(-n * t)
        ok = np.nonzero(damped > self.tail_tol * scale)[0]
        if ok.size == 0:
            return 0
        last = int(ok[-1]) + 1
        if last <= self.n_terms:
            return last
        return last

    def _tail(self, c: np.ndarray, t: float) -> float:
        scale = max(1.0, float(np.max(np.abs(c))))
        k = max(1, min(5, c.size // 10))
        return float(np.max(np.abs(c[-k:])) * math.exp(-(c.size - k) * t)) / scale

    def pt(self, f, t, x, deriv=0):
        t = self._check_time(t)
        x = np.asarray(x, dtype=float)
        c = self.coefficients(f)
        if t == 0.0 and _has_deriv(f, deriv):
            return _eval(f, x, deriv)
        tail = self._tail(c, t)
        if self.strict and tail > self.tail_tol:
            # geometric extrapolation of the tail from the last decade of coefficients
            n = np.arange(c.size)
            damped = np.abs(c) * np.exp(-n * t) + 1e-300
            lo = max(1, c.size - c.size // 4)
            slope = (np.log(damped[-1]) - np.log(damped[lo])) / (c.size - 1 - lo)
            need = None
            if slope < 0:
                need = int(c.size + (math.log(self.tail_tol) - math.log(damped[-1] / max(1.0, np.max(np.abs(c))))) / slope)
            raise TruncationError(
                f"spectral tail {tail:.2e} above {self.tail_tol:.0e} at t={t:g} with N={self.n_terms}",
                required_n=need,
            )
        damp = c * np.exp(-np.arange(c.size) * t)
        basis = laguerre_orthonormal(self.n_terms, self.alpha, x, deriv=deriv)[deriv]
        return np.tensordot(damp, basis, axes=(0, 0))

    def pt_derivs(self, f, t, x, order):
        t = self._check_time(t)
        x = np.asarray(x, dtype=float)
        if t == 0.0 and _has_deriv(f, order):
            return np.stack([_eval(f, x, k) for k in range(order + 1)])
        self.pt(f, t, x[..., :1] if x.ndim else x, 0)  # tail check
        c = self.coefficients(f)
        damp = c * np.exp(-np.arange(c.size) * t)
        basis = laguerre_orthonormal(self.n_terms, self.alpha, x, deriv=order)
        return np.stack([np.tensordot(damp, basis[k], axes=(0, 0)) for k in range(order + 1)])

    def fingerprint(self):
        return {**super().fingerprint(), "truncation": self.n_terms, "nodes": self.n_nodes,
                "tail_tol": self.tail_tol}


class FiniteDifferenceEvaluator(SemigroupEvaluator):
    """Crank-Nicolson in the metric coordinate with zero-flux ends.

    The grid has ``n_points`` cells of equal width in ``s``; node values sit
    at the cell centres. ``rannacher`` implicit-Euler half steps start the
    march to damp the undamped high-frequency modes of Crank-Nicolson.
    """

    backend = "fd"

    def __init__(self, gen: Generator1D, n_points: int = 4096, dt: float = 1e-3,
                 rannacher: int = 2, mass_tol: float = 1e-6, richardson: bool = True):
        super().__init__(gen)
        self.n_points = n_points
        self.dt = dt
        self.rannacher = rannacher
        self.mass_tol = mass_tol
        lo, hi = gen.support
        s_lo = 0.0 if gen.kind == "laguerre" else float(gen.metric(lo))
        s_hi = float(gen.metric(hi))
        h = (s_hi - s_lo) / n_points
        self.h = h
        self.s = s_lo + h * (np.arange(n_points) + 0.5)
        self.x = gen.inverse_metric(self.s)
        faces = s_lo + h * np.arange(n_points + 1)
        w_face = self._weight_s(faces)
        w_face[0] = w_face[-1] = 0.0  # zero flux
        gz, gw = gauss_legendre(8)
        cells = faces[:-1, None] + h * gz
        mass = h * (self._weight_s(cells) @ gw)
        total = mass.sum()
        self.mass = mass / total
        self.flux = w_face[1:-1] / total / h  # k_i, coupling of cells i and i+1
        self._factors: dict[float, np.ndarray] = {}
        self._coarse = None
        if richardson:
            self._coarse = FiniteDifferenceEvaluator(
                gen, n_points // 2, 2 * dt, rannacher, mass_tol, richardson=False)

    def _weight_s(self, s: np.ndarray) -> np.ndarray:
        # density of mu in the metric coordinate
        x = self.gen.inverse_metric(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = self.gen.density(x) * np.sqrt(self.gen.a(x))
        return np.nan_to_num(w, nan=0.0, posinf=0.0)

    def _stiffness_diag(self) -> np.ndarray:
        # S u = k_i (u_{i+1} - u_i) - k_{i-1} (u_i - u_{i-1}); symmetric, zero row sums
        diag = np.zeros(self.n_points)
        diag[:-1] -= self.flux
        diag[1:] -= self.flux
        return diag

    def apply_generator(self, u: np.ndarray) -> np.ndarray:
        """Discrete ``L u`` on the grid."""
        su = self._stiffness_diag() * u
        su[:-1] += self.flux * u[1:]
        su[1:] += self.flux * u[:-1]
        return su / self.mass

    def _factor(self, theta_dt: float) -> np.ndarray:
        key = round(theta_dt, 15)
        fac = self._factors.get(key)
        if fac is None:
            # M - theta dt S, upper banded storage
            ab = np.zeros((2, self.n_points))
            ab[1] = self.mass - theta_dt * self._stiffness_diag()
            ab[0, 1:] = -theta_dt * self.flux
            fac = cholesky_banded(ab)
            self._factors[key] = fac
        return fac

    def _step(self, u: np.ndarray, dt: float, theta: float) -> np.ndarray:
        rhs = self.mass * u
        if theta < 1.0:
            rhs = rhs + (1.0 - theta) * dt * self.mass * self.apply_generator(u)
        return cho_solve_banded((self._factor(theta * dt), False), rhs)

    def evolve(self, values, times: Sequence[float]) -> list[np.ndarray]:
        """March grid values to each of ``times`` (sorted ascending)."""
        u = np.array(values, dtype=float)
        if u.shape != (self.n_points,):
            raise ValueError("grid function has the wrong shape")
        m0 = float(self.mass @ u)
        scale = max(1.0, float(self.mass @ np.abs(u)))
        out = []
        now = 0.0
        started = False
        for target in times:
            target = self._check_time(target)
            if target < now - 1e-15:
                raise ValueError("times must be sorted")
            while target - now > 1e-14:
                step = min(self.dt, target - now)
                if not started and self.rannacher:
                    sub = step / self.rannacher
                    for _ in range(self.rannacher):
                        u = self._step(u, sub, 1.0)
                    started = True
                else:
                    u = self._step(u, step, 0.5)
                now += step
            drift = abs(float(self.mass @ u) - m0)
            if drift > self.mass_tol * scale:
                raise HFTError(f"mass drift {drift:.2e} exceeds {self.mass_tol:.0e}")
            out.append(u.copy())
        return out

    def grid_derivatives(self, u: np.ndarray, order: int) -> list[np.ndarray]:
        """``[u, u_s, u_ss]`` by fourth-order central differences with mirrored ends."""
        out = [u]
        if order == 0:
            return out
        g = np.concatenate([u[1::-1], u, u[:-3:-1]])
        h = self.h
        d1 = (-g[4:] + 8 * g[3:-1] - 8 * g[1:-3] + g[:-4]) / (12 * h)
        out.append(d1)
        if order >= 2:
            d2 = (-g[4:] + 16 * g[3:-1] - 30 * g[2:-2] + 16 * g[1:-3] - g[:-4]) / (12 * h * h)
            out.append(d2)
        if order > 2:
            raise ValueError("finite-difference derivatives are limited to order 2")
        return out

    def interpolate(self, grid_values: Sequence[np.ndarray], x) -> np.ndarray:
        """Convert ``[u, u_s, u_ss]`` on the grid to ``[u, u_x, u_xx]`` at ``x``."""
        x = np.asarray(x, dtype=float)
        s = self.gen.metric(x)
        vals = [CubicSpline(self.s, g)(s) for g in grid_values]
        out = [vals[0]]
        if len(vals) > 1:
            ds, d2s = self.gen.metric_jacobian(x)
            out.append(ds * vals[1])
            if len(vals) > 2:
                out.append(ds**2 * vals[2] + d2s * vals[1])
        return np.stack(out)

    def grid_values(self, f) -> np.ndarray:
        if isinstance(f, np.ndarray):
            return f
        return _eval(f, self.x)

    def _raw_schedule(self, f, times, x, order) -> np.ndarray:
        idx = np.argsort(times)
        slices = self.evolve(self.grid_values(f), [float(times[i]) for i in idx])
        out = np.empty((len(times), order + 1) + np.shape(x))
        for i, u in zip(idx, slices):
            out[i] = self.interpolate(self.grid_derivatives(u, order), x)
        return out

    def schedule_derivs(self, f, times: Sequence[float], x, order: int = 0) -> np.ndarray:
        """``d^k P_t f(x)`` for every time in ``times``; shape ``(len(times), order+1) + x.shape``.

        With ``richardson`` the result combines this grid with a run at twice
        the cell width and twice the time step, ``(4 u_h - u_2h) / 3``, which
        removes the leading ``h^2`` and ``dt^2`` error terms together.
        """
        x = np.asarray(x, dtype=float)
        times = [self._check_time(t) for t in times]
        fine = self._raw_schedule(f, times, x, order)
        if self._coarse is not None and not isinstance(f, np.ndarray):
            coarse = self._coarse._raw_schedule(f, times, x, order)
            fine = (4.0 * fine - coarse) / 3.0
        for i, t in enumerate(times):
            if t == 0.0 and _has_deriv(f, order) and not isinstance(f, np.ndarray):
                fine[i] = np.stack([_eval(f, x, k) for k in range(order + 1)])
        return fine

    def pt_derivs(self, f, t, x, order):
        return self.schedule_derivs(f, [t], x, order)[0]

    def pt(self, f, t, x, deriv=0):
        return self.pt_derivs(f, t, x, deriv)[deriv]

    def pt_schedule(self, f, times, x, deriv=0):
        return self.schedule_derivs(f, times, x, deriv)[:, deriv]

    def fingerprint(self):
        return {**super().fingerprint(), "n_points": self.n_points, "dt": self.dt,
                "richardson": self._coarse is not None}


def make_evaluator(gen: Generator1D, backend: str | None = None, **opts) -> SemigroupEvaluator:
    """Backend by name; the default is Mehler for OU and spectral for Laguerre."""
    backend = backend or {"ou": "mehler", "laguerre": "spectral"}.get(gen.kind, "fd")
    if backend == "mehler":
        return MehlerEvaluator(gen, **opts)
    if backend == "spectral":
        return SpectralEvaluator(gen, **opts)
    if backend in ("fd", "finite_difference"):
        return FiniteDifferenceEvaluator(gen, **opts)
    raise ValueError(f"unknown backend {backend!r}")


def ou_pt(f: FnLike, t: float, x, order: int = 128) -> np.ndarray:
    """Mehler-quadrature value of ``P_t f(x)`` for Ornstein-Uhlenbeck."""
    from .model_spaces import make_ou

    return MehlerEvaluator(make_ou(), order).pt(f, t, x)


def laguerre_pt(f: FnLike, t: float, x, p: float, n_terms: int = 200) -> np.ndarray:
    """Spectral value of ``P_t f(x)`` for the Laguerre space of parameter ``p``."""
    from .model_spaces import make_laguerre

    return SpectralEvaluator(make_laguerre(p), n_terms).pt(f, t, x)


def fd_pt(f, t: float, gen: Generator1D, **opts) -> tuple[np.ndarray, np.ndarray]:
    """Crank-Nicolson solution ``u(t, .)``; returns ``(grid x, values)``."""
    ev = FiniteDifferenceEvaluator(gen, **opts)
    (u,) = ev.evolve(ev.grid_values(f), [t])
    return ev.x, u


def grad_pt(evaluator: SemigroupEvaluator, f: FnLike, t: float, x) -> np.ndarray:
    """``d/dx (P_t f)(x)`` through the backend."""
    return evaluator.pt(f, t, x, deriv=1)


def integrate_mu(gen: Generator1D, g: Callable[[np.ndarray], np.ndarray], n: int = 96) -> float:
    """``int g dmu`` by the Gauss rule of the space (truncated Legendre for custom spaces)."""
    if gen.kind == "ou":
        z, w = gauss_hermite(n)
        return float(np.asarray(g(z)) @ w)
    if gen.kind == "laguerre":
        z, w = gauss_laguerre(n, gen.p - 1.0)
        return float(np.asarray(g(z)) @ w)
    lo, hi = gen.support
    z, w = gauss_legendre(n)
    x = lo + (hi - lo) * z
    return float((np.asarray(g(x)) * gen.density(x)) @ w * (hi - lo))


def mass_check(evaluator: SemigroupEvaluator, f: FnLike, t: float, n: int = 96) -> float:
    """``|int P_t f dmu - int f dmu|``."""
    gen = evaluator.gen
    before = integrate_mu(gen, lambda x: _eval(f, x), n)
    after = integrate_mu(gen, lambda x: evaluator.pt(f, t, x), n)
    return abs(after - before)


def ergodic_limit_check(evaluator: SemigroupEvaluator, f: FnLike, t_schedule: Sequence[float],
                        x=None, rate_fit: tuple[float, float] = (0.5, 5.0)) -> VerificationReport:
    """Decay of ``sup_x |P_t f(x) - int f dmu|`` at the curvature rate.

    The prefactor is anchored at the first schedule time; the check passes
    when every later deviation stays below ``C e^{-rho1 t}``. The log-linear
    fit of the deviation over ``rate_fit`` is reported as the observed rate.
    """
    gen = evaluator.gen
    if x is None:
        x = np.linspace(-2, 2, 9) if gen.kind == "ou" else np.linspace(0.2, 4, 9)
    x = np.asarray(x, dtype=float)
    mean = integrate_mu(gen, lambda y: _eval(f, y))
    times = np.asarray(sorted(t_schedule), dtype=float)
    dev = np.array([np.max(np.abs(evaluator.pt(f, t, x) - mean)) for t in times])
    scale = max(1.0, abs(mean))
    if np.all(dev <= 1e-12 * scale):
        return VerificationReport("ergodic_limit", "PASS", 0.0, details={"rate": math.inf,
                                  "deviation": dev.tolist(), "times": times.tolist()},
                                  fingerprint=evaluator.fingerprint())
    c = dev[0] * math.exp(gen.rho1 * times[0])
    envelope = c * np.exp(-gen.rho1 * times)
    slack = envelope * (1 + 1e-6) + 1e-12 * scale - dev
    sel = (times >= rate_fit[0]) & (times <= rate_fit[1]) & (dev > 1e-14 * scale)
    rate = float("nan")
    if sel.sum() >= 2:
        rate = float(-np.polyfit(times[sel], np.log(dev[sel]), 1)[0])
    worst = int(np.argmin(slack))
    return VerificationReport(
        name="ergodic_limit",
        status=status_from(bool(np.all(slack >= 0))),
        margin=float(slack[worst]),
        witness={"t": float(times[worst])},
        fingerprint=evaluator.fingerprint(),
        details={"rate": rate, "deviation": dev.tolist(), "times": times.tolist(), "mean": mean},
    )


def symmetry_check(evaluator: SemigroupEvaluator, f: FnLike, h: FnLike, t: float,
                   n: int = 96, tol: float = 1e-7) -> VerificationReport:
    """``|int f P_t h dmu - int h P_t f dmu|``."""
    gen = evaluator.gen
    left = integrate_mu(gen, lambda x: _eval(f, x) * evaluator.pt(h, t, x), n)
    right = integrate_mu(gen, lambda x: _eval(h, x) * evaluator.pt(f, t, x), n)
    diff = abs(left - right)
    return VerificationReport(
        name="symmetry",
        status=status_from(diff <= tol),
        margin=tol - diff,
        fingerprint={**evaluator.fingerprint(), "t": t, "tol": tol},
        details={"left": left, "right": right, "difference": diff},
    )
