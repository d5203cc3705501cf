"""
Independent oracles and application-level checks.

The one-dimensional Monge map ``F_nu^{-1} o F_mu`` is built from scratch out
of the two densities and serves as the reference for the heat-flow map.
The remaining checks test consequences of the transport theory: transfer
of Poincare and log-Sobolev inequalities, the growth estimate of the
Laguerre transport map, the Herbst moment bound and the pointwise
semigroup gradient inequalities.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.optimize import brentq
from scipy.special import xlogy

from .exceptions import DomainError, QuadratureError
from .functions import SmoothFunction
from .gamma_jet import Jet, gamma_n_recursive
from .model_spaces import Generator1D, Potential
from .heatflow_transport import TransportMapGrid, theorem_bound
from .quadrature import gauss_legendre
from .reports import SKIPPED, VerificationReport, merge, status_from
from .semigroup import SemigroupEvaluator

DensityFn = Callable[[np.ndarray], np.ndarray]


def metric_panels(gen: Generator1D, n_panels: int = 96, order: int = 16,
                  support: tuple[float, float] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes/weights (in ``x``) on panels uniform in the metric.

    For the Laguerre space the change of variable ``x = s^2/4`` removes the
    square-root behaviour of the gamma density at the origin.
    """
    lo, hi = support or gen.support
    s_lo = 0.0 if gen.kind == "laguerre" and lo <= gen.support[0] else float(gen.metric(lo))
    s_hi = float(gen.metric(hi))
    edges = np.linspace(s_lo, s_hi, n_panels + 1)
    z, w = gauss_legendre(order)
    width = np.diff(edges)
    s = (edges[:-1, None] + width[:, None] * z).ravel()
    ws = (width[:, None] * w).ravel()
    x = gen.inverse_metric(s)
    ds, _ = gen.metric_jacobian(x)
    return x, ws / ds


class MeasureCDF:
    """Distribution function of a density on an interval.

    ``cdf`` uses adaptive quadrature between cached breakpoints (the
    cumulative masses at the breakpoints are computed once); ``quantile``
    brackets the target between breakpoints and refines with safeguarded
    Newton steps. ``method="panels"`` swaps the adaptive quadrature for
    fixed composite Gauss-Legendre in the metric coordinate, an independent
    discretisation used to cross-check the first.
    """

    def __init__(self, density: DensityFn, support: tuple[float, float],
                 gen: Generator1D | None = None, n_breaks: int = 64, tol: float = 1e-13,
                 method: str = "quad"):
        self.density_raw = density
        self.support = (float(support[0]), float(support[1]))
        self.gen = gen
        self.tol = tol
        self.method = method
        lo, hi = self.support
        if gen is not None:
            s = np.linspace(float(gen.metric(lo)), float(gen.metric(hi)), n_breaks + 1)
            breaks = gen.inverse_metric(s)
            breaks[0], breaks[-1] = lo, hi
        else:
            breaks = np.linspace(lo, hi, n_breaks + 1)
        self.breaks = breaks
        pieces = np.array([self._raw_mass(a, b) for a, b in zip(breaks[:-1], breaks[1:])])
        self.total = float(pieces.sum())
        if not np.isfinite(self.total) or self.total <= 0:
            raise QuadratureError(f"density has total mass {self.total!r}")
        self.cum = np.concatenate([[0.0], np.cumsum(pieces)]) / self.total

    @classmethod
    def for_measure(cls, gen: Generator1D, pot: Potential | None = None, **kw) -> MeasureCDF:
        """``mu`` (``pot=None``) or ``nu = e^{-V} mu`` on the support of ``gen``."""
        if pot is None:
            dens = gen.density
        else:
            dens = lambda x: pot.density(x) * gen.density(x)  # noqa: E731
        return cls(dens, gen.support, gen=gen, **kw)

    def density(self, x) -> np.ndarray:
        return np.asarray(self.density_raw(np.asarray(x, dtype=float)), dtype=float) / self.total

    def _raw_mass(self, a: float, b: float) -> float:
        if b <= a:
            return 0.0
        if self.method == "panels":
            if self.gen is None:
                raise DomainError("panel quadrature needs a generator for the metric")
            x, w = metric_panels(self.gen, n_panels=4, order=24, support=(a, b))
            return float(np.asarray(self.density_raw(x)) @ w)
        val, err, *rest = integrate.quad(lambda t: float(self.density_raw(np.array(t))), a, b,
                                         epsabs=self.tol, epsrel=self.tol, limit=200,
                                         full_output=1)
        if len(rest) > 1 and err > 1e3 * self.tol * max(1.0, abs(val)):
            raise QuadratureError(f"cdf quadrature on [{a:g}, {b:g}] failed: {rest[1]}")
        return val

    def _cdf1(self, x: float) -> float:
        lo, hi = self.support
        if x <= lo:
            return 0.0
        if x >= hi:
            return 1.0
        k = int(np.searchsorted(self.breaks, x, side="right")) - 1
        return float(self.cum[k] + self._raw_mass(self.breaks[k], x) / self.total)

    def cdf(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        out = np.vectorize(self._cdf1, otypes=[float])(x)
        return float(out) if out.ndim == 0 else out

    def _quantile1(self, u: float, xtol: float) -> float:
        if not 0.0 <= u <= 1.0:
            raise DomainError(f"quantile level {u} outside [0, 1]")
        lo, hi = self.support
        if u == 0.0:
            return lo
        if u == 1.0:
            return hi
        k = int(np.clip(np.searchsorted(self.cum, u, side="right") - 1, 0, len(self.breaks) - 2))
        a, b = self.breaks[k], self.breaks[k + 1]
        ca, cb = self.cum[k], self.cum[k + 1]
        x = a + (b - a) * (u - ca) / (cb - ca) if cb > ca else 0.5 * (a + b)
        for _ in range(30):
            g = self._cdf1(x) - u
            if g > 0:
                b = x
            else:
                a = x
            d = float(self.density(x))
            step = g / d if d > 0 else math.inf
            nxt = x - step
            if not (a < nxt < b):
                nxt = 0.5 * (a + b)
            if abs(nxt - x) <= xtol * max(1.0, abs(x)):
                return nxt
            x = nxt
        # Newton stalled: fall back to plain bracketing
        try:
            return brentq(lambda y: self._cdf1(y) - u, a, b, xtol=xtol, rtol=4 * np.finfo(float).eps)
        except ValueError as exc:
            raise QuadratureError(f"quantile bracketing failed at level {u}") from exc

    def quantile(self, u, xtol: float = 1e-14) -> np.ndarray | float:
        u = np.asarray(u, dtype=float)
        out = np.vectorize(lambda v: self._quantile1(float(v), xtol), otypes=[float])(u)
        return float(out) if out.ndim == 0 else out


def monge_quantile_map(mu: MeasureCDF, nu: MeasureCDF, x) -> np.ndarray | float:
    """``F_nu^{-1}(F_mu(x))``, the monotone rearrangement of ``mu`` onto ``nu``."""
    x = np.asarray(x, dtype=float)
    lo, hi = mu.support
    if np.any((x < lo) | (x > hi)):
        raise DomainError("point outside the support of mu")
    return nu.quantile(mu.cdf(x))


def central_mass_grid(mu: MeasureCDF, n: int, mass: float = 0.99) -> np.ndarray:
    """Points uniform in ``x`` between the ``(1-mass)/2`` and ``(1+mass)/2`` quantiles."""
    a = 0.5 * (1.0 - mass)
    lo, hi = mu.quantile([a, 1.0 - a])
    return np.linspace(lo, hi, n)


def ks_pushforward(tmap: TransportMapGrid, mu: MeasureCDF, nu: MeasureCDF) -> float:
    """``sup_y |F_mu(T^{-1}(y)) - F_nu(y)|`` over the image points ``y = T(x_i)``."""
    return float(np.max(np.abs(mu.cdf(tmap.points) - nu.cdf(tmap.values))))


def compare_transport_to_monge(tmap: TransportMapGrid, mu: MeasureCDF, nu: MeasureCDF,
                               gen: Generator1D | None = None, tol: float = 1e-3,
                               mass: float = 0.99) -> VerificationReport:
    """Sup-norm (and metric) gap between ``T`` and the Monge map on the central mass grid."""
    a = 0.5 * (1.0 - mass)
    lo, hi = mu.quantile([a, 1.0 - a])
    sel = (tmap.points >= lo - 1e-12) & (tmap.points <= hi + 1e-12)
    if not np.any(sel):
        raise DomainError("transport grid misses the central mass interval")
    x = tmap.points[sel]
    t = tmap.values[sel]
    m = monge_quantile_map(mu, nu, x)
    diff = np.abs(t - m)
    i = int(np.argmax(diff))
    details = {"sup_diff": float(diff[i]), "n_points": int(x.size),
               "interval": [float(lo), float(hi)]}
    if gen is not None:
        details["metric_diff"] = float(np.max(np.abs(gen.metric(t) - gen.metric(m))))
    return VerificationReport(
        name="monge_coincidence",
        status=status_from(diff[i] <= tol),
        margin=float(tol - diff[i]),
        witness={"x": float(x[i]), "T": float(t[i]), "monge": float(m[i])},
        fingerprint={"tol": tol, "mass": mass},
        details=details,
    )


def growth_check(tmap: TransportMapGrid, gen: Generator1D, rel_tol: float = 1e-6,
                 restrict_from: float = 1.0) -> VerificationReport:
    """``sup |T'(x)| / sqrt(x)`` against the measured metric Lipschitz constant.

    The verdict uses the whole grid; the supremum over ``x >= restrict_from``
    and the full profile are reported alongside.
    """
    if gen.kind != "laguerre":
        raise DomainError("growth_check is a gamma-only check (Laguerre spaces)")
    x, d = tmap.points, np.abs(tmap.derivative)
    prof = d / np.sqrt(x)
    i = int(np.argmax(prof))
    c_hat = float(prof[i])
    limit = tmap.lipschitz * (1.0 + rel_tol)
    right = x >= restrict_from
    c_right = float(np.max(prof[right])) if np.any(right) else math.nan
    return VerificationReport(
        name="growth",
        status=status_from(c_hat <= limit),
        margin=float(limit - c_hat),
        witness={"x": float(x[i]), "T_prime": float(tmap.derivative[i]), "ratio": c_hat},
        fingerprint={"rel_tol": rel_tol, "grid": [float(x[0]), float(x[-1]), int(x.size)]},
        details={
            "c_hat": c_hat,
            "lipschitz": tmap.lipschitz,
            "theorem_bound": tmap.bound,
            "restricted_from": restrict_from,
            "c_hat_restricted": c_right,
            "restricted_status": status_from(c_right <= limit),
            "profile": {"x": x.tolist(), "ratio": prof.tolist()},
        },
    )


def transfer_constant(rho1: float, rho2: float, k: float) -> float:
    """``C_K = exp(2 sqrt(2 pi / rho2) K e^{K^2 / (2 rho1)})``, the squared Lipschitz bound."""
    return theorem_bound(rho1, rho2, k) ** 2


def _nu_integrator(gen: Generator1D, pot: Potential, n_panels: int = 96, order: int = 16):
    x, w = metric_panels(gen, n_panels, order)
    dens = pot.density(x) * gen.density(x)
    wn = w * dens
    wn = wn / wn.sum()
    return x, wn


def poincare_transfer_check(gen: Generator1D, pot: Potential, transfer_constant_value: float,
                            test_functions: Sequence[SmoothFunction], rel_tol: float = 1e-8
                            ) -> VerificationReport:
    """Poincare and log-Sobolev inequalities for ``nu`` with constant ``C_K / rho1``.

    ``Var(g) <= (C/rho1) int Gamma(g) dnu`` and
    ``Ent(g^2) <= (2C/rho1) int Gamma(g) dnu`` by quadrature.
    """
    if len(test_functions) < 10:
        raise DomainError("the transfer check needs at least 10 test functions")
    x, w = _nu_integrator(gen, pot)
    c = transfer_constant_value / gen.rho1
    rows, worst, witness = [], math.inf, {}
    for g in test_functions:
        gv = g.d(0, x)
        energy = float(w @ (gen.a(x) * g.d(1, x) ** 2))
        mean = float(w @ gv)
        var = float(w @ (gv - mean) ** 2)
        g2 = gv**2
        m2 = float(w @ g2)
        ent = float(w @ xlogy(g2, g2)) - float(xlogy(m2, m2))
        for kind, lhs, rhs in (("poincare", var, c * energy), ("log_sobolev", ent, 2 * c * energy)):
            scale = max(abs(lhs), abs(rhs), 1e-300)
            margin = (rhs - lhs) / scale if scale > 1e-300 else 0.0
            # both sides vanish for constants
            if abs(lhs) <= 1e-14 and abs(rhs) <= 1e-14:
                margin = 0.0
            rows.append({"function": g.name, "kind": kind, "lhs": lhs, "rhs": rhs, "margin": margin})
            if margin < worst:
                worst, witness = margin, {"function": g.name, "kind": kind, "lhs": lhs, "rhs": rhs}
    return VerificationReport(
        name="poincare_transfer",
        status=status_from(worst >= -rel_tol),
        margin=worst,
        witness=witness,
        fingerprint={"transfer_constant": transfer_constant_value, "rel_tol": rel_tol,
                     "potential": pot.name, "space": gen.label},
        details={"rows": rows},
    )


def herbst_bound_ratio(c: float, p: float, q: float, lam: float) -> float:
    """Prefactor ``exp(C^2 (p - q) lam / 2)``."""
    return math.exp(c * c * (p - q) * lam / 2.0)


def herbst_moment_check(evaluator: SemigroupEvaluator, g: SmoothFunction, p: float, q: float,
                        t_schedule: Sequence[float], x, lipschitz: float | None = None,
                        rel_tol: float = 1e-9) -> VerificationReport:
    """``||e^g||_{L^p(m)} <= exp(C^2 (p-q) lam / 2) ||e^g||_{L^q(m)}`` for ``m = P_t^* delta_x``.

    ``lam = (1 - e^{-2 rho1 t}) / rho1`` is the log-Sobolev constant of the
    kernel measure under the curvature bound and ``C`` the metric Lipschitz
    constant of ``g``.
    """
    gen = evaluator.gen
    if not q < p:
        raise DomainError("need q < p")
    c = g.lipschitz if lipschitz is None else lipschitz
    if c is None:
        raise DomainError(f"{g.name}: Lipschitz constant unknown")
    x = gen.check_points(np.asarray(x, dtype=float), "grid")
    ep = lambda y: np.exp(p * g.d(0, y))  # noqa: E731
    eq = lambda y: np.exp(q * g.d(0, y))  # noqa: E731
    worst, witness, skipped = math.inf, {}, []
    for t in t_schedule:
        t = float(t)
        if t == 0.0:
            skipped.append(t)
            continue
        lam = -math.expm1(-2.0 * gen.rho1 * t) / gen.rho1
        log_lhs = np.log(evaluator.pt(ep, t, x)) / p
        log_rhs = np.log(evaluator.pt(eq, t, x)) / q + c * c * (p - q) * lam / 2.0
        margin = log_rhs - log_lhs  # log of the ratio rhs / lhs
        i = int(np.argmin(margin))
        if margin[i] < worst:
            worst = float(margin[i])
            witness = {"t": t, "x": float(x[i]), "log_lhs": float(log_lhs[i]),
                       "log_rhs": float(log_rhs[i])}
    status = status_from(worst >= -rel_tol) if math.isfinite(worst) else SKIPPED
    return VerificationReport(
        name="herbst_moment",
        status=status,
        margin=worst if math.isfinite(worst) else 0.0,
        witness=witness,
        fingerprint={**evaluator.fingerprint(), "function": g.name, "p": p, "q": q,
                     "C": c, "rel_tol": rel_tol, "t_schedule": list(map(float, t_schedule))},
        details={"skipped_times": skipped},
    )


def _gamma_of_function(gen: Generator1D, f: SmoothFunction, n: int) -> Callable:
    """``y -> Gamma_n(f)(y)`` from the analytic derivatives of ``f``."""
    order = max(2 * n, 0)

    def fn(y):
        y = np.asarray(y, dtype=float)
        k = min(order, f.max_order)
        jet = Jet.from_derivatives(y, f.derivatives(y, k)).pad(order)
        return gamma_n_recursive(gen, jet, n)

    return fn


def _gamma_of_pt(evaluator: SemigroupEvaluator, f: SmoothFunction, t: float, x: np.ndarray,
                 n: int) -> np.ndarray:
    d = evaluator.pt_derivs(f, t, x, n)
    jet = Jet.from_derivatives(x, d).pad(2 * n)
    return gamma_n_recursive(evaluator.gen, jet, n)


def semigroup_inequality_suite(evaluator: SemigroupEvaluator, gen: Generator1D,
                               test_functions: Sequence[SmoothFunction],
                               t_schedule: Sequence[float], x, ns: Sequence[int] = (1, 2),
                               tol: float = 1e-7) -> VerificationReport:
    """Pointwise gradient bounds for ``P_t`` on schedule x grid.

    For ``n`` in ``ns`` and ``rho_n`` the curvature constants:

    * ``Gamma_n(P_t f) <= e^{-2 rho_n t} P_t(Gamma_n f)``,
    * ``Gamma_n(P_t f) <= P_t(Gamma_{n-1} f) / (2t)``,
    * ``Gamma_n(P_t f) <= e^{-rho_n t} P_t(Gamma_{n-1} f) / t``.

    The last two are stated for ``t > 0``; at ``t = 0`` they are SKIPPED.
    The local inequalities of :func:`local_inequality_reports` are appended.
    """
    x = gen.check_points(np.asarray(x, dtype=float), "grid")
    rho = {1: gen.rho1, 2: gen.rho2}
    times = [float(t) for t in t_schedule]
    reports = []
    for n in ns:
        if n not in rho:
            raise DomainError("the semigroup suite covers n = 1, 2")
        cases = {"contraction": [], "reverse_half": [], "reverse_exp": []}
        skipped = [t for t in times if t == 0.0]
        for f in test_functions:
            derivs = evaluator.schedule_derivs(f, times, x, n)
            pt_gn = evaluator.pt_schedule(_gamma_of_function(gen, f, n), times, x)
            pt_prev = evaluator.pt_schedule(_gamma_of_function(gen, f, n - 1), times, x)
            for i, t in enumerate(times):
                lhs = gamma_n_recursive(gen, Jet.from_derivatives(x, derivs[i]).pad(2 * n), n)
                cases["contraction"].append((f.name, t, lhs, math.exp(-2 * rho[n] * t) * pt_gn[i]))
                if t == 0.0:
                    continue
                cases["reverse_half"].append((f.name, t, lhs, pt_prev[i] / (2 * t)))
                cases["reverse_exp"].append((f.name, t, lhs, math.exp(-rho[n] * t) * pt_prev[i] / t))
        for key, rows in cases.items():
            name = f"gamma{n}_{key}"
            if not rows:
                reports.append(VerificationReport(name, SKIPPED, 0.0,
                                                  details={"skipped_times": skipped}))
                continue
            rep = _worst(name, rows, x, tol)
            rep.details = {"skipped_times": [] if key == "contraction" else skipped}
            reports.append(rep)
    reports.extend(local_inequality_reports(evaluator, gen, test_functions, times, x, tol))
    fp = {**evaluator.fingerprint(), "tol": tol, "t_schedule": list(map(float, t_schedule)),
          "functions": [f.name for f in test_functions], "grid_n": int(x.size), "ns": list(ns)}
    return merge("semigroup_inequalities", reports, fp)


def _worst(name: str, rows, x: np.ndarray, tol: float) -> VerificationReport:
    worst, witness = math.inf, {}
    for fname, t, lhs, rhs in rows:
        m = rhs - lhs
        i = int(np.argmin(m))
        if m[i] < worst:
            worst = float(m[i])
            witness = {"function": fname, "t": t, "x": float(x[i]),
                       "lhs": float(lhs[i]), "rhs": float(rhs[i])}
    return VerificationReport(name=name, status=status_from(worst >= -tol), margin=worst,
                              witness=witness)


def local_inequality_reports(evaluator: SemigroupEvaluator, gen: Generator1D,
                             test_functions: Sequence[SmoothFunction], times: Sequence[float],
                             x: np.ndarray, tol: float = 1e-7) -> list[VerificationReport]:
    """Local inequalities equivalent to the curvature bound ``rho = rho1``.

    * gradient contraction ``Gamma(P_t f) <= e^{-2 rho t} P_t Gamma(f)``,
    * its square-root form ``sqrt Gamma(P_t f) <= e^{-rho t} P_t sqrt Gamma(f)``,
    * local Poincare ``P_t f^2 - (P_t f)^2 <= lam P_t Gamma(f)``,
    * local log-Sobolev (positive ``f``) ``P_t(f^2 log f^2) - P_t f^2 log P_t f^2 <= 2 lam P_t Gamma(f)``,

    with ``lam = (1 - e^{-2 rho t}) / rho``.
    """
    rho = gen.rho1
    rows = {"local_contraction": [], "local_sqrt_contraction": [], "local_poincare": [],
            "local_log_sobolev": []}
    for f in test_functions:
        gam = lambda y, f=f: gen.a(y) * f.d(1, y) ** 2  # noqa: E731
        d = evaluator.schedule_derivs(f, times, x, 1)
        pt_gam = evaluator.pt_schedule(gam, times, x)
        pt_sqrt = evaluator.pt_schedule(lambda y: np.sqrt(gam(y)), times, x)
        pt_sq = evaluator.pt_schedule(lambda y, f=f: f.d(0, y) ** 2, times, x)
        pt_ent = None
        if f.positive:
            def ent(y, f=f):
                v = f.d(0, y) ** 2
                return xlogy(v, v)
            pt_ent = evaluator.pt_schedule(ent, times, x)
        for i, t in enumerate(times):
            lam = -math.expm1(-2.0 * rho * t) / rho
            grad = gen.a(x) * d[i, 1] ** 2
            rows["local_contraction"].append((f.name, t, grad, math.exp(-2 * rho * t) * pt_gam[i]))
            rows["local_sqrt_contraction"].append(
                (f.name, t, np.sqrt(grad), math.exp(-rho * t) * pt_sqrt[i]))
            rows["local_poincare"].append((f.name, t, pt_sq[i] - d[i, 0] ** 2, lam * pt_gam[i]))
            if pt_ent is not None:
                lhs = pt_ent[i] - xlogy(pt_sq[i], pt_sq[i])
                rows["local_log_sobolev"].append((f.name, t, lhs, 2 * lam * pt_gam[i]))
    return [_worst(name, r, x, tol) for name, r in rows.items() if r]


def lambda_interpolant(evaluator: SemigroupEvaluator, f: SmoothFunction, n: int, t: float,
                       x: float, s_schedule: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """``Lambda_n(s) = P_s(Gamma_n(P_{t-s} f))(x)`` and ``Lambda_{n+1}`` on the schedule."""
    gen = evaluator.gen
    vals, nxt = [], []
    for s in s_schedule:
        s = float(s)
        if not 0.0 <= s <= t:
            raise DomainError("need 0 <= s <= t")
        out = []
        for m in (n, n + 1):
            def inner(y, m=m, r=t - s):
                return _gamma_of_pt(evaluator, f, r, np.asarray(y, dtype=float), m)
            if s == 0.0:
                out.append(float(inner(np.array([x]))[0]))
            else:
                out.append(float(evaluator.pt(inner, s, np.array([x]))[0]))
        vals.append(out[0])
        nxt.append(out[1])
    return np.array(vals), np.array(nxt)


def monotone_interpolant_check(evaluator: SemigroupEvaluator, f: SmoothFunction, n: int,
                               t: float, x: float, s_schedule: Sequence[float],
                               h: float = 1e-3, rel_tol: float = 1e-4,
                               abs_floor: float = 1e-10) -> VerificationReport:
    """``d/ds Lambda_n(s) = 2 Lambda_{n+1}(s)`` by centred differences, and ``Lambda_n`` non-decreasing.

    Relative errors are measured against ``max(|2 Lambda_{n+1}|, abs_floor)``.
    """
    if n not in (0, 1, 2):
        raise DomainError("Lambda_n is checked for n = 0, 1, 2")
    s_schedule = [float(s) for s in s_schedule]
    vals, nxt = lambda_interpolant(evaluator, f, n, t, x, s_schedule)
    worst_rel, witness = 0.0, {}
    slopes = []
    for s, lam_next in zip(s_schedule, nxt):
        lo, hi = max(s - h, 0.0), min(s + h, t)
        pair, _ = lambda_interpolant(evaluator, f, n, t, x, [lo, hi])
        slope = (pair[1] - pair[0]) / (hi - lo)
        target = 2.0 * lam_next
        rel = abs(slope - target) / max(abs(target), abs_floor)
        slopes.append(slope)
        if rel > worst_rel or not witness:
            worst_rel = max(worst_rel, rel)
            witness = {"s": s, "fd_slope": slope, "two_lambda_next": target, "rel_err": rel}
    order = np.argsort(s_schedule)
    steps = np.diff(vals[order])
    scale = max(1.0, float(np.max(np.abs(vals))))
    monotone = bool(np.all(steps >= -1e-10 * scale))
    ok = worst_rel <= rel_tol and monotone
    return VerificationReport(
        name=f"lambda{n}_interpolant",
        status=status_from(ok),
        margin=float(rel_tol - worst_rel),
        witness=witness,
        fingerprint={**evaluator.fingerprint(), "function": f.name, "n": n, "t": t, "x": x,
                     "h": h, "rel_tol": rel_tol, "s_schedule": s_schedule},
        details={"lambda": vals.tolist(), "lambda_next": nxt.tolist(), "fd_slope": slopes,
                 "monotone": monotone, "min_step": float(np.min(steps)) if steps.size else 0.0},
    )
