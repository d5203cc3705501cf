r"""
Heat-flow (diffusion) transport map between ``mu`` and ``nu = e^{-V} mu``.

With ``f = e^{-V}`` and ``V_t = -log P_t f`` the densities ``P_t f`` move from
``nu`` (``t = 0``) to ``mu`` (``t -> inf``) along the gradient field of
``V_t``. In the metric coordinate ``s`` the flow is the Euclidean gradient
flow ``ds/dt = d_s V_t``; in the original coordinate the velocity is
``a(x) d_x V_t``. The map ``T`` pushing ``mu`` to ``nu`` is the inverse
flow at infinite time. Here it is evaluated by integrating the
characteristic backwards from ``y(t_max) = x`` to ``t = 0``; the horizon is
chosen from the decay bound ``|grad V_t| <= K e^{-rho1 t}`` so that the
neglected displacement is below ``horizon_eps``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .exceptions import DomainError, HFTError, MonotonicityError
from .functions import SmoothFunction
from .model_spaces import Generator1D, Potential, metric_distance
from .reports import SKIPPED, VerificationReport, status_from
from .semigroup import (
    POSITIVITY_FLOOR,
    FiniteDifferenceEvaluator,
    SemigroupEvaluator,
    SpectralEvaluator,
    make_evaluator,
)

SMALL_T_MAX_STEP = 0.05


def theorem_bound(rho1: float, rho2: float, k: float) -> float:
    """Lipschitz bound ``exp(sqrt(2 pi / rho2) K e^{K^2 / (2 rho1)})``."""
    if rho1 <= 0 or rho2 <= 0:
        raise DomainError("curvature constants must be positive")
    if k < 0:
        raise DomainError("Lipschitz constant must be non-negative")
    try:
        return math.exp(math.sqrt(2.0 * math.pi / rho2) * k * math.exp(k * k / (2.0 * rho1)))
    except OverflowError:
        return math.inf


def choose_t_max(k: float, rho1: float, eps: float) -> float:
    """Horizon after which the remaining displacement ``(K/rho1) e^{-rho1 t}`` is below ``eps``."""
    if k == 0:
        return 0.0
    if k < 0 or rho1 <= 0 or eps <= 0:
        raise DomainError("need K >= 0, rho1 > 0 and eps > 0")
    return max(0.0, math.log(k / (rho1 * eps)) / rho1)


def potential_function(pot: Potential) -> SmoothFunction:
    """``f = e^{-V}`` (normalised) with two derivatives."""
    derivs = (
        lambda x: pot.density(x),
        lambda x: pot.density_derivatives(x, 1)[1],
        lambda x: pot.density_derivatives(x, 2)[2],
    )
    return SmoothFunction(name=f"exp(-{pot.name})", derivs=derivs, positive=True)


class VelocityField:
    """``d_s V_t`` in the metric coordinate, backed by a semigroup evaluator.

    Mehler and spectral backends are evaluated directly. The
    finite-difference backend is marched once over a time table and
    interpolated (cubic Lagrange in ``t``, cubic spline in ``s``).
    """

    def __init__(self, gen: Generator1D, pot: Potential, evaluator: SemigroupEvaluator,
                 t_max: float):
        self.gen = gen
        self.pot = pot
        self.f = potential_function(pot)
        self.evaluator = evaluator
        self.t_max = t_max
        self._table = None
        if isinstance(evaluator, FiniteDifferenceEvaluator):
            self._build_table()

    def _time_table(self) -> np.ndarray:
        ev = self.evaluator
        step = 2 * ev.dt
        pieces = [np.arange(0.0, 0.1, step), np.arange(0.1, 1.0, 5 * step),
                  np.arange(1.0, 5.0, 25 * step), np.arange(5.0, self.t_max + 0.5, 100 * step)]
        times = np.unique(np.round(np.concatenate(pieces), 12))
        return times[times <= max(self.t_max, 0.0) + 0.2 + 1e-12]

    def _build_table(self):
        ev: FiniteDifferenceEvaluator = self.evaluator
        times = self._time_table()
        vals = ev.schedule_derivs(self.f, times, ev.x, order=1)
        u = np.maximum(vals[:, 0], POSITIVITY_FLOOR)
        ds, _ = self.gen.metric_jacobian(ev.x)
        grad = -(vals[:, 1] / ds) / u
        grad[0] = self._exact_t0(ev.x)
        self._table = (times, ev.s, grad)

    def _exact_t0(self, x):
        return np.sqrt(self.gen.a(x)) * self.pot.dV(x)

    def grad_log(self, t: float, x) -> tuple[np.ndarray, np.ndarray]:
        """``(P_t f, d_x P_t f)`` at ``x``."""
        d = self.evaluator.pt_derivs(self.f, t, x, 1)
        return d[0], d[1]

    def __call__(self, t: float, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self._table is not None:
            return self._from_table(t, s)
        x = self.gen.inverse_metric(s)
        if t == 0.0:
            return self._exact_t0(x)
        u, du = self.grad_log(t, x)
        if np.any(u <= POSITIVITY_FLOOR):
            raise HFTError(f"semigroup value floored to zero at t={t:g}; check domain/quadrature")
        return -np.sqrt(self.gen.a(x)) * du / u

    def _from_table(self, t, s):
        times, grid_s, grad = self._table
        i = int(np.searchsorted(times, t))
        lo = min(max(i - 2, 0), len(times) - 4)
        idx = np.arange(lo, lo + 4)
        tk = times[idx]
        w = np.ones(4)
        for j in range(4):
            for m in range(4):
                if m != j:
                    w[j] *= (t - tk[m]) / (tk[j] - tk[m])
        row = w @ grad[idx]
        return CubicSpline(grid_s, row)(s)


@dataclass
class HeatFlowProblem:
    gen: Generator1D
    pot: Potential
    evaluator: SemigroupEvaluator
    t_max: float
    ode_tol: float = 1e-8
    horizon_eps: float = 1e-6
    grid: np.ndarray | None = None
    _field: VelocityField | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.pot.K > 0:
            need = choose_t_max(self.pot.K, self.gen.rho1, self.horizon_eps)
            if self.t_max < need - 1e-9:
                raise DomainError(f"t_max={self.t_max} below the horizon {need:.4f} for eps={self.horizon_eps}")

    @property
    def field(self) -> VelocityField:
        if self._field is None:
            self._field = VelocityField(self.gen, self.pot, self.evaluator, self.t_max)
        return self._field

    def fingerprint(self) -> dict:
        return {
            **self.evaluator.fingerprint(),
            "potential": self.pot.name,
            "K": self.pot.K,
            "t_max": self.t_max,
            "ode_tol": self.ode_tol,
            "horizon_eps": self.horizon_eps,
            "grid_n": None if self.grid is None else int(len(self.grid)),
        }


def build_problem(gen: Generator1D, pot: Potential, backend: str | None = None,
                  grid=None, ode_tol: float = 1e-8, horizon_eps: float = 1e-6,
                  t_max: float | None = None, evaluator: SemigroupEvaluator | None = None,
                  **backend_opts) -> HeatFlowProblem:
    """Assemble a problem; the default backend is Mehler for OU and FD otherwise."""
    if evaluator is None:
        if backend is None:
            backend = "mehler" if gen.kind == "ou" else "fd"
        if backend == "spectral":
            backend_opts.setdefault("strict", False)
        evaluator = make_evaluator(gen, backend, **backend_opts)
    if t_max is None:
        t_max = choose_t_max(pot.K, gen.rho1, horizon_eps)
    if grid is not None:
        grid = np.asarray(grid, dtype=float)
    return HeatFlowProblem(gen, pot, evaluator, t_max, ode_tol, horizon_eps, grid)


def velocity(problem: HeatFlowProblem, t: float, x) -> np.ndarray:
    """Velocity ``a(x) d_x V_t(x)`` of the heat flow in the original coordinate."""
    x = problem.gen.check_points(x)
    if problem.pot.is_zero:
        return np.zeros_like(x)
    vs = problem.field(t, problem.gen.metric(x))
    return np.sqrt(problem.gen.a(x)) * vs


def velocity_norm(problem: HeatFlowProblem, t: float, x) -> np.ndarray:
    """Metric norm ``|grad V_t| = sqrt(a) |d_x V_t|``."""
    x = problem.gen.check_points(x)
    if problem.pot.is_zero:
        return np.zeros_like(x)
    return np.abs(problem.field(t, problem.gen.metric(x)))


@dataclass
class CharacteristicResult:
    values: np.ndarray
    n_steps: int
    clamped: int


def _integrate(problem: HeatFlowProblem, x: np.ndarray, tol: float) -> CharacteristicResult:
    gen = problem.gen
    s0 = gen.metric(x)
    s_floor = float(gen.metric(gen.support[0])) if gen.kind != "ou" else -math.inf
    clamped = 0

    def rhs(t, s):
        nonlocal clamped
        bad = s < s_floor
        if np.any(bad):
            clamped += int(bad.sum())
            s = np.where(bad, s_floor, s)
        return problem.field(t, s)

    # solve_ivp controls the RMS error over components; scale so each one meets tol
    ctol = tol / math.sqrt(max(s0.size, 1))
    steps = 0
    s = s0
    t_split = min(1.0, problem.t_max)
    segments = [(problem.t_max, t_split, np.inf), (t_split, 0.0, SMALL_T_MAX_STEP)]
    for t_start, t_end, max_step in segments:
        if t_start <= t_end:
            continue
        sol = solve_ivp(rhs, (t_start, t_end), s, method="RK45", rtol=ctol, atol=ctol,
                        max_step=max_step)
        if sol.status != 0:
            raise HFTError(f"characteristic integration failed: {sol.message}")
        s = sol.y[:, -1]
        steps += sol.t.size - 1
    if np.any(s < s_floor):
        clamped += int((s < s_floor).sum())
        s = np.maximum(s, s_floor)
    return CharacteristicResult(gen.inverse_metric(s), steps, clamped)


def transport_eval(problem: HeatFlowProblem, x) -> np.ndarray:
    """``T(x)``: backward characteristic from ``y(t_max) = x`` down to ``y(0)``."""
    x = problem.gen.check_points(x)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    if problem.pot.is_zero or problem.t_max == 0.0:
        out = x.copy()
    else:
        out = _integrate(problem, x, problem.ode_tol).values
    return out[0] if scalar else out


def finite_difference_derivative(x: np.ndarray, y: np.ndarray, width: int = 5) -> np.ndarray:
    """Derivative on an arbitrary sorted grid from local 5-point interpolating polynomials.

    Centred stencils (fourth order) in the interior, shifted ones at the ends.
    """
    n = x.size
    if n < width:
        return np.gradient(y, x)
    half = width // 2
    out = np.empty(n)
    for i in range(n):
        lo = min(max(i - half, 0), n - width)
        xs = x[lo:lo + width] - x[i]
        # weights w with sum w_j xs_j^k = delta_{k1}
        v = np.vander(xs, width, increasing=True).T
        rhs = np.zeros(width)
        rhs[1] = 1.0
        w = np.linalg.solve(v, rhs)
        out[i] = w @ y[lo:lo + width]
    return out


@dataclass
class TransportMapGrid:
    points: np.ndarray
    values: np.ndarray
    derivative: np.ndarray
    lipschitz: float
    bound: float
    horizon_tail: float
    ode_error: float
    clamped: int = 0
    n_steps: int = 0

    def inverse(self, y) -> np.ndarray:
        """``T^{-1}`` by monotone interpolation of the sampled map."""
        return np.interp(y, self.values, self.points)


def transport_grid(problem: HeatFlowProblem, grid=None, error_estimate: bool = True
                   ) -> TransportMapGrid:
    """Evaluate ``T`` on the grid, with ``T'``, Lipschitz estimate and diagnostics.

    The ODE error estimate is the largest change against runs at ``10 ode_tol``
    and ``ode_tol / 10``. Adaptive step control does not make the error
    monotone in the tolerance, so one neighbour on each side is used.
    """
    gen = problem.gen
    pts = np.asarray(grid if grid is not None else problem.grid, dtype=float)
    if pts.ndim != 1 or pts.size < 2 or np.any(np.diff(pts) <= 0):
        raise DomainError("transport grid must be strictly increasing")
    gen.check_points(pts, "transport grid")
    k = problem.pot.K
    if problem.pot.is_zero or problem.t_max == 0.0:
        vals, ode_err, clamped, steps = pts.copy(), 0.0, 0, 0
    else:
        res = _integrate(problem, pts, problem.ode_tol)
        vals, clamped, steps = res.values, res.clamped, res.n_steps
        ode_err = 0.0
        if error_estimate:
            for tol in (10 * problem.ode_tol, problem.ode_tol / 10):
                other = _integrate(problem, pts, tol).values
                ode_err = max(ode_err, float(np.max(np.abs(other - vals))))
    bad = np.nonzero(np.diff(vals) <= 0)[0]
    if bad.size:
        i = int(bad[0])
        raise MonotonicityError(
            f"transport map not increasing between x[{i}]={pts[i]:.6g} and x[{i+1}]={pts[i+1]:.6g}",
            pair=(i, i + 1),
        )
    deriv = finite_difference_derivative(pts, vals)
    tail = (k / gen.rho1) * math.exp(-gen.rho1 * problem.t_max) if k > 0 else 0.0
    tmap = TransportMapGrid(pts, vals, deriv, 0.0, theorem_bound(gen.rho1, gen.rho2, k), tail,
                            ode_err, clamped, steps)
    tmap.lipschitz = lipschitz_estimate(tmap, gen)
    return tmap


def lipschitz_estimate(tmap: TransportMapGrid, gen: Generator1D) -> float:
    """Largest ratio of metric distances over adjacent grid pairs."""
    x, y = tmap.points, tmap.values
    dx = metric_distance(gen, x[:-1], x[1:])
    if np.any(dx <= 0):
        raise DomainError("coincident grid points")
    dy = metric_distance(gen, y[:-1], y[1:])
    return float(np.max(dy / dx))


def _metric_log_derivs(gen: Generator1D, x, u, du, d2u):
    # d_s and d_s^2 of log u, with d_s = sqrt(a) d_x
    a = gen.a(x)
    us = np.sqrt(a) * du
    uss = a * d2u + 0.5 * gen.da(x) * du
    return us / u, uss / u - (us / u) ** 2


def hessian_bound(k: float, rho1: float, rho2: float, t: float) -> float:
    """Integrand ``K e^{K^2/(2 rho1)} t^{-1/2} e^{-rho2 t / 2}`` of the Lipschitz bound."""
    return k * math.exp(k * k / (2.0 * rho1)) * math.exp(-0.5 * rho2 * t) / math.sqrt(t)


def hessian_log_pt_bound_check(problem: HeatFlowProblem, t_schedule: Sequence[float], grid,
                               tol: float = 1e-6) -> VerificationReport:
    """Check ``d_s^2 log P_t f <= K e^{K^2/2rho1} t^{-1/2} e^{-rho2 t/2}`` on schedule x grid.

    ``d_s`` is the unit-speed derivative of the metric, so the left side is
    the Riemannian Hessian of ``log P_t f`` in the unit direction. ``t = 0``
    is skipped because the bound is singular there. The worst ratio of
    ``-d_s^2 log P_t f`` to the bound is reported as ``negated_side_ratio``.
    """
    gen = problem.gen
    x = gen.check_points(np.asarray(grid, dtype=float), "grid")
    k = problem.pot.K
    f = potential_function(problem.pot)
    worst_margin, worst_ratio, witness = math.inf, -math.inf, {}
    lower_side, lower_ratio = math.inf, -math.inf
    times = [float(t) for t in t_schedule]
    active = [t for t in times if t > 0]
    if not active:
        return VerificationReport("hessian_log_pt_bound", SKIPPED, 0.0,
                                  fingerprint=problem.fingerprint())
    sched = problem.evaluator.schedule_derivs(f, active, x, 2)
    for t, d in zip(active, sched):
        _, hess = _metric_log_derivs(gen, x, d[0], d[1], d[2])
        bound = hessian_bound(k, gen.rho1, gen.rho2, t)
        margin = bound + tol - hess
        i = int(np.argmin(margin))
        lower_side = min(lower_side, float(np.min(hess)))
        if margin[i] < worst_margin:
            worst_margin = float(margin[i])
            witness = {"t": t, "x": float(x[i]), "hessian": float(hess[i]), "bound": bound}
        if bound > 0:
            worst_ratio = max(worst_ratio, float(np.max(hess)) / bound)
            lower_ratio = max(lower_ratio, float(np.max(-hess)) / bound)
        elif np.max(np.abs(hess)) > 0:
            worst_ratio = max(worst_ratio, math.inf if np.max(hess) > tol else 0.0)
    return VerificationReport(
        name="hessian_log_pt_bound",
        status=status_from(worst_margin >= 0),
        margin=worst_margin,
        witness=witness,
        fingerprint={**problem.fingerprint(), "tol": tol, "t_schedule": times},
        details={"worst_ratio": worst_ratio, "min_hessian": lower_side,
                 "negated_side_ratio": lower_ratio,
                 "skipped_times": [t for t in times if t <= 0]},
    )


def velocity_decay_check(problem: HeatFlowProblem, t_schedule: Sequence[float], grid,
                         tol: float = 1e-6) -> VerificationReport:
    """``|grad V_t| <= K e^{-rho1 t} + tol`` on schedule x grid."""
    gen = problem.gen
    x = gen.check_points(np.asarray(grid, dtype=float), "grid")
    k = problem.pot.K
    worst, witness = math.inf, {}
    for t in t_schedule:
        v = velocity_norm(problem, float(t), x)
        margin = k * math.exp(-gen.rho1 * t) + tol - v
        i = int(np.argmin(margin))
        if margin[i] < worst:
            worst = float(margin[i])
            witness = {"t": float(t), "x": float(x[i]), "speed": float(v[i])}
    return VerificationReport(
        name="velocity_decay",
        status=status_from(worst >= 0),
        margin=worst,
        witness=witness,
        fingerprint={**problem.fingerprint(), "tol": tol, "t_schedule": list(map(float, t_schedule))},
    )


def spectral_for_schedule(gen: Generator1D, t_min: float, tail_tol: float = 1e-12,
                          n_max: int = 1500) -> SpectralEvaluator:
    """Spectral evaluator with enough terms that ``e^{-N t_min}`` clears ``tail_tol``."""
    n = int(math.ceil(math.log(1.0 / tail_tol) / t_min)) + 10
    return SpectralEvaluator(gen, n_terms=min(max(n, 200), n_max), tail_tol=tail_tol)
