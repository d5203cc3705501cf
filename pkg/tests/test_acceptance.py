"""Acceptance criteria, each at its stated tolerance and runtime limit.

Every test records one ``PASS``/``FAIL`` line; the lines are printed together
in the terminal summary.
"""

import json
import math
import shutil
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import sympy as sp

from hft.cli_harness import GROWTH_GRID
from hft.functions import SmoothFunction, function_suite
from hft.gamma_jet import (
    certify_curvature,
    gamma_n_recursive,
    laguerre_gamma_explicit,
    sample_jets,
)
from hft.heatflow_transport import (
    build_problem,
    spectral_for_schedule,
    theorem_bound,
    transport_grid,
    velocity_decay_check,
)
from hft.model_spaces import (
    linear_potential,
    make_laguerre,
    make_ou,
    prepare_potential,
    sqrt_potential,
)
from hft.oracles_verification import (
    MeasureCDF,
    central_mass_grid,
    compare_transport_to_monge,
    growth_check,
    ks_pushforward,
    poincare_transfer_check,
    semigroup_inequality_suite,
    transfer_constant,
)
from hft.semigroup import FiniteDifferenceEvaluator, MehlerEvaluator, SpectralEvaluator

SCHEDULE = [0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0]
LATTICE_T = [0.1, 0.5, 1.0, 2.0]
SEED = 20240531

_MAPS: dict = {}


class Criterion:
    def __init__(self, record, number, title, limit):
        self.record, self.number, self.title, self.limit = record, number, title, limit
        self.notes = []

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def note(self, text):
        self.notes.append(text)

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.t0
        in_time = self.limit is None or elapsed < self.limit
        ok = exc_type is None and in_time
        extra = "; ".join(self.notes)
        if exc_type is not None:
            extra = (extra + "; " if extra else "") + f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        limit = f" (limit {self.limit:g} s)" if self.limit else ""
        self.record(f"[{'PASS' if ok else 'FAIL'}] {self.number:2d}. {self.title}: "
                    f"{elapsed:.1f} s{limit}; {extra}")
        if exc_type is None and not in_time:
            raise AssertionError(f"runtime {elapsed:.1f} s exceeds {self.limit} s")
        return False


@pytest.fixture
def criterion(acceptance_record):
    def make(number, title, limit=None):
        return Criterion(acceptance_record, number, title, limit)
    return make


def _ou_problem(k):
    ou = make_ou()
    return build_problem(ou, prepare_potential(ou, linear_potential(k)), "mehler")


def _ou_map(k):
    key = ("ou", k)
    if key not in _MAPS:
        grid = np.linspace(-5.0, 5.0, 201)
        _MAPS[key] = transport_grid(_ou_problem(k), grid)
    return _MAPS[key]


def _gamma_measures(c):
    lag = make_laguerre(1.5)
    pot = prepare_potential(lag, sqrt_potential(c))
    return lag, pot, MeasureCDF.for_measure(lag), MeasureCDF.for_measure(lag, pot)


def _gamma_central_map(c):
    key = ("gamma_central", c)
    if key not in _MAPS:
        lag, pot, mu, _ = _gamma_measures(c)
        grid = central_mass_grid(mu, 60)
        _MAPS[key] = transport_grid(build_problem(lag, pot, "fd", grid=grid))
    return _MAPS[key]


def _gamma_growth_map(c):
    key = ("gamma_growth", c)
    if key not in _MAPS:
        lag, pot, _, _ = _gamma_measures(c)
        lo, hi, n = GROWTH_GRID
        grid = lag.inverse_metric(np.linspace(lag.metric(lo), lag.metric(hi), n))
        _MAPS[key] = transport_grid(build_problem(lag, pot, "fd", grid=grid), error_estimate=False)
    return _MAPS[key]


def _symbolic_ou_gamma3():
    # Gamma_n(f, g) = (L Gamma_{n-1}(f, g) - Gamma_{n-1}(Lf, g) - Gamma_{n-1}(f, Lg)) / 2
    x = sp.Symbol("x")
    f = sp.Function("f")(x)
    L = lambda u: sp.diff(u, x, 2) - x * sp.diff(u, x)  # noqa: E731

    def gamma(n, u, v):
        if n == 0:
            return u * v
        return sp.expand((L(gamma(n - 1, u, v)) - gamma(n - 1, L(u), v)
                          - gamma(n - 1, u, L(v))) / 2)

    g3 = gamma(3, f, f)
    d1, d2, d3 = (sp.diff(f, x, k) for k in (1, 2, 3))
    claimed = d3**2 + 3 * d2**2 + d1**2
    return sp.simplify(g3 - claimed)


# 1
def test_c01_gamma_recursion_closed_forms(criterion):
    with criterion(1, "Gamma recursion vs closed forms, Laguerre p in {1.5, 2, 3}", 5.0) as c:
        worst = 0.0
        for p in (1.5, 2.0, 3.0):
            gen = make_laguerre(p)
            jets = sample_jets(gen, 10_000, SEED)
            derivs = jets.derivatives()
            for n in (1, 2, 3):
                rec = gamma_n_recursive(gen, jets, n)
                ref = laguerre_gamma_explicit(p, derivs[1:4], jets.x, n)
                worst = max(worst, float(np.max(np.abs(rec - ref) / (1 + np.abs(ref)))))
        c.note(f"max |rec - explicit|/(1+|v|) = {worst:.2e} (tol 1e-10)")
        assert worst <= 1e-10


# 2
def test_c02_ou_gamma3_identity(criterion):
    with criterion(2, "OU Gamma_3 = (f''')^2 + 3(f'')^2 + (f')^2", 5.0) as c:
        assert _symbolic_ou_gamma3() == 0
        ou = make_ou()
        jets = sample_jets(ou, 10_000, SEED)
        d = jets.derivatives()
        rec = gamma_n_recursive(ou, jets, 3)
        ref = d[3] ** 2 + 3 * d[2] ** 2 + d[1] ** 2
        err = float(np.max(np.abs(rec - ref) / np.maximum(np.abs(ref), 1e-300)))
        c.note(f"symbolic identity holds; max relative error {err:.2e} (tol 1e-10)")
        assert err <= 1e-10


# 3
def test_c03_curvature_certification(criterion):
    with criterion(3, "Curvature margins Gamma2 - Gamma1/2, Gamma3 - Gamma2/2", 10.0) as c:
        worst = math.inf
        for p in (1.5, 2.0, 3.0):
            gen = make_laguerre(p)
            jets = sample_jets(gen, 10_000, SEED)
            for n in (1, 2):
                rep = certify_curvature(gen, n, 0.5, jets, seed=SEED)
                worst = min(worst, rep.margin)
        c.note(f"min margin {worst:.3e} (tol -1e-9)")
        assert worst >= -1e-9


# 4
def test_c04_backend_agreement(criterion):
    with criterion(4, "Semigroup backend agreement on the (t, x) lattice", 60.0) as c:
        ou, lag = make_ou(), make_laguerre(1.5)
        pairs = [
            (ou, MehlerEvaluator(ou), FiniteDifferenceEvaluator(ou), "ou"),
            (lag, SpectralEvaluator(lag), FiniteDifferenceEvaluator(lag), "laguerre"),
        ]
        worst = {}
        for gen, a, b, kind in pairs:
            x = central_mass_grid(MeasureCDF.for_measure(gen), 21)
            w = 0.0
            for f in function_suite(kind):
                w = max(w, float(np.max(np.abs(a.pt_schedule(f, LATTICE_T, x)
                                               - b.pt_schedule(f, LATTICE_T, x)))))
            worst[kind] = w
        c.note(f"Mehler vs FD {worst['ou']:.2e}, spectral vs FD {worst['laguerre']:.2e} (tol 1e-5)")
        assert max(worst.values()) <= 1e-5


# 5
def test_c05_semigroup_inequalities(criterion):
    with criterion(5, "Semigroup inequality suite, 10 functions, both spaces", 120.0) as c:
        ou, lag = make_ou(), make_laguerre(1.5)
        mehler = MehlerEvaluator(ou)
        spec = spectral_for_schedule(lag, min(SCHEDULE))
        r_ou = semigroup_inequality_suite(mehler, ou, function_suite("ou"), SCHEDULE,
                                          np.linspace(-3, 3, 13), tol=1e-7)
        r_lag = semigroup_inequality_suite(spec, lag, function_suite("laguerre"), SCHEDULE,
                                           np.linspace(0.05, 10, 13), tol=1e-7)
        eig = semigroup_inequality_suite(mehler, ou, [SmoothFunction.from_expr("x", lipschitz=1.0)],
                                         SCHEDULE, np.linspace(-3, 3, 13), ns=(1,))
        sat = {ch["name"]: ch["margin"] for ch in eig.details["checks"]}["local_sqrt_contraction"]
        c.note(f"OU margin {r_ou.margin:.2e}, Laguerre margin {r_lag.margin:.2e} (tol -1e-7); "
               f"eigenfunction saturation |margin| {abs(sat):.1e} (tol 1e-8)")
        assert r_ou.margin >= -1e-7 and r_lag.margin >= -1e-7
        assert abs(sat) <= 1e-8


# 6
def test_c06_gaussian_translation(criterion):
    with criterion(6, "Exact transport oracle, OU with V = Kx", 60.0) as c:
        rows = []
        for k in (0.5, 1.0, 2.0):
            tm = _ou_map(k)
            sup = float(np.max(np.abs(tm.values - (tm.points - k))))
            rows.append((k, sup, tm.lipschitz))
            assert sup <= 1e-4
            assert abs(tm.lipschitz - 1.0) <= 1e-4
        ref = math.exp(math.sqrt(2 * math.pi) * math.exp(0.5))
        b = theorem_bound(1.0, 1.0, 1.0)
        c.note(", ".join(f"K={k}: sup {s:.1e}, L-1 {l - 1:+.1e}" for k, s, l in rows)
               + f"; bound {b:.6f}")
        assert abs(b - ref) <= 1e-10 * ref


# 7
def test_c07_monge_coincidence(criterion):
    with criterion(7, "Monge coincidence, gamma p = 3/2, V = 2c sqrt(x)", 300.0) as c:
        for cc in (0.25, 0.5):
            lag, _, mu, nu = _gamma_measures(cc)
            tm = _gamma_central_map(cc)
            rep = compare_transport_to_monge(tm, mu, nu, lag, tol=1e-3)
            ks = ks_pushforward(tm, mu, nu)
            c.note(f"c={cc}: sup {rep.details['sup_diff']:.1e}, KS {ks:.1e}")
            assert rep.details["sup_diff"] <= 1e-3
            assert ks <= 0.01


# 8
def test_c08_lipschitz_bound(criterion):
    with criterion(8, "Measured Lipschitz constant within the theorem bound", None) as c:
        maps = [("ou", k, _ou_map(k)) for k in (0.5, 1.0, 2.0)]
        maps += [("gamma", cc, _gamma_central_map(cc)) for cc in (0.25, 0.5)]
        maps += [("gamma-growth-grid", cc, _gamma_growth_map(cc)) for cc in (0.25, 0.5)]
        worst = min(tm.bound + 1e-6 - tm.lipschitz for _, _, tm in maps)
        c.note(f"{len(maps)} problems, min(bound + 1e-6 - L) = {worst:.3e}")
        assert worst >= 0


# 9
def test_c09_growth(criterion):
    for cc in (0.25, 0.5):
        _gamma_growth_map(cc)
    with criterion(9, "Growth |T'(x)|/sqrt(x) <= L (1 + 1e-6) on [0.01, 50]", 30.0) as c:
        lag = make_laguerre(1.5)
        reps = [(cc, growth_check(_gamma_growth_map(cc), lag, rel_tol=1e-6)) for cc in (0.25, 0.5)]
        for cc, rep in reps:
            c.note(f"c={cc}: C_hat {rep.details['c_hat']:.4f} at x={rep.witness['x']:.3g} "
                   f"vs L {rep.details['lipschitz']:.4f}; on x >= 1: "
                   f"{rep.details['c_hat_restricted']:.4f} ({rep.details['restricted_status']})")
        for cc, rep in reps:
            assert math.isfinite(rep.details["c_hat"])
            assert rep.status == "PASS", f"c={cc}: C_hat {rep.details['c_hat']:.4f} > L"


# 10
def test_c10_poincare_transfer(criterion):
    with criterion(10, "Poincare / log-Sobolev transfer with C_K / rho1", 30.0) as c:
        for cc in (0.25, 0.5):
            lag, pot, _, _ = _gamma_measures(cc)
            ck = transfer_constant(lag.rho1, lag.rho2, pot.K)
            rep = poincare_transfer_check(lag, pot, ck, function_suite("laguerre"), rel_tol=1e-8)
            c.note(f"c={cc}: C_K {ck:.4g}, min relative margin {rep.margin:.3e}")
            assert rep.margin >= -1e-8


# 11
def test_c11_velocity_decay_and_horizon(criterion):
    with criterion(11, "Velocity decay and horizon doubling", 60.0) as c:
        ou_prob = _ou_problem(1.0)
        r1 = velocity_decay_check(ou_prob, SCHEDULE, np.linspace(-3, 3, 13), tol=1e-6)
        lag, pot, mu, _ = _gamma_measures(0.5)
        grid = central_mass_grid(mu, 30)
        g_prob = build_problem(lag, pot, "fd", grid=grid)
        r2 = velocity_decay_check(g_prob, SCHEDULE, np.linspace(0.05, 10, 13), tol=1e-6)
        shifts = []
        for prob, pts in ((ou_prob, np.linspace(-5, 5, 41)), (g_prob, grid)):
            a = transport_grid(prob, pts, error_estimate=False).values
            longer = build_problem(prob.gen, prob.pot, evaluator=prob.evaluator,
                                   t_max=2 * prob.t_max)
            b = transport_grid(longer, pts, error_estimate=False).values
            shifts.append(float(np.max(np.abs(a - b))) / prob.horizon_eps)
        c.note(f"decay margins OU {r1.margin:.2e}, gamma {r2.margin:.2e}; horizon doubling "
               f"shift/eps OU {shifts[0]:.2f}, gamma {shifts[1]:.2f} (limit 2)")
        assert r1.margin >= 0 and r2.margin >= 0
        assert max(shifts) <= 2.0


# 12
def test_c12_determinism(criterion, tmp_path):
    cfg = json.loads((Path(__file__).resolve().parents[1] / "configs" / "ou_linear.json").read_text())
    cfg["output_dir"] = str(tmp_path / "out")
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    exe = shutil.which("hft")
    cmd = ([exe] if exe else [sys.executable, "-m", "hft.cli_harness"]) + ["transport", "-c", str(path)]
    with criterion(12, "Byte-identical summary.json across hft transport runs", 60.0) as c:
        blobs = []
        for _ in range(2):
            res = subprocess.run(cmd, capture_output=True, text=True, check=False)
            assert res.returncode == 0, res.stderr
            blobs.append((tmp_path / "out" / "summary.json").read_bytes())
            shutil.rmtree(tmp_path / "out")
        c.note(f"{len(blobs[0])} bytes, identical: {blobs[0] == blobs[1]}")
        assert blobs[0] == blobs[1]
