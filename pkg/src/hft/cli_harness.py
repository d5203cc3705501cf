"""
Command line entry point ``hft``.

Subcommands read a JSON configuration, validate it against
:data:`CONFIG_SCHEMA` before doing any work, and write their reports to the
configured output directory (``HFT_OUTPUT_DIR`` overrides it). Exit codes:
0 when every check passes, 1 when a mathematical check fails, 2 for
configuration or I/O errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .exceptions import ConfigError, DomainError, HFTError, MonotonicityError
from .functions import SmoothFunction, function_suite
from .gamma_jet import (
    certify_curvature,
    gamma_n_recursive,
    laguerre_gamma_explicit,
    ou_gamma_explicit,
    sample_jets,
)
from .heatflow_transport import (
    build_problem,
    hessian_log_pt_bound_check,
    spectral_for_schedule,
    theorem_bound,
    transport_grid,
    velocity_decay_check,
)
from .model_spaces import (
    Generator1D,
    Potential,
    linear_potential,
    make_laguerre,
    make_ou,
    prepare_potential,
    sqrt_potential,
    tabulated_potential,
    zero_potential,
)
from .oracles_verification import (
    MeasureCDF,
    compare_transport_to_monge,
    growth_check,
    herbst_moment_check,
    ks_pushforward,
    monge_quantile_map,
    monotone_interpolant_check,
    poincare_transfer_check,
    semigroup_inequality_suite,
    transfer_constant,
)
from .reports import FAIL, PASS, SKIPPED, VerificationReport, merge, status_from
from .semigroup import T_SCHEDULE, make_evaluator

log = logging.getLogger("hft")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
KS_THRESHOLD = 0.01
MONGE_TOL = 1e-3
GAMMA_REL_TOL = 1e-10
GROWTH_GRID = (0.01, 50.0, 400)

_POS = {"type": "number", "exclusiveMinimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["space", "potential"],
    "additionalProperties": False,
    "properties": {
        "space": {"enum": ["ou", "laguerre"]},
        "p": {"type": "number"},
        "potential": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["zero", "linear", "sqrt", "tabulated"]},
                "K_or_c": {"type": "number"},
                "table_path": {"type": "string"},
            },
        },
        "backend": {"enum": ["mehler", "spectral", "fd"]},
        "grid": {
            "type": "object",
            "required": ["lo", "hi", "n"],
            "additionalProperties": False,
            "properties": {
                "lo": {"type": "number"},
                "hi": {"type": "number"},
                "n": {"type": "integer", "minimum": 5},
                "spacing": {"enum": ["linear", "metric"]},
            },
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"ode_tol": _POS, "quadrature_tol": _POS, "horizon_eps": _POS},
        },
        "t_schedule": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "seed": {"type": "integer"},
        "output_dir": {"type": "string"},
        "gamma": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_samples": {"type": "integer", "minimum": 1},
                "rho1": {"type": "number"},
                "rho2": {"type": "number"},
            },
        },
    },
}


@dataclass
class ExperimentConfig:
    space: str
    potential: dict
    p: float | None = None
    backend: str | None = None
    grid: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    t_schedule: list = field(default_factory=lambda: list(T_SCHEDULE))
    seed: int = 0
    output_dir: str = "hft_output"
    gamma: dict = field(default_factory=dict)

    @property
    def ode_tol(self) -> float:
        return float(self.tolerances.get("ode_tol", 1e-8))

    @property
    def quadrature_tol(self) -> float:
        return float(self.tolerances.get("quadrature_tol", 1e-13))

    @property
    def horizon_eps(self) -> float:
        return float(self.tolerances.get("horizon_eps", 1e-6))

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    """Read and validate a configuration; every problem surfaces as :class:`ConfigError`."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def config_from_dict(raw) -> ExperimentConfig:
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc
    if raw["space"] == "laguerre" and "p" not in raw:
        raise ConfigError("laguerre configs need p")
    pot = raw["potential"]
    if pot["kind"] in ("linear", "sqrt") and "K_or_c" not in pot:
        raise ConfigError(f"potential kind {pot['kind']!r} needs K_or_c")
    if pot["kind"] == "tabulated" and "table_path" not in pot:
        raise ConfigError("tabulated potential needs table_path")
    grid = raw.get("grid")
    if grid is not None:
        if not grid["lo"] < grid["hi"]:
            raise ConfigError("grid needs lo < hi")
        if raw["space"] == "laguerre" and grid["lo"] <= 0:
            raise ConfigError("laguerre grids must lie in (0, inf)")
    cfg = ExperimentConfig(**raw)
    if "HFT_OUTPUT_DIR" in os.environ:
        cfg.output_dir = os.environ["HFT_OUTPUT_DIR"]
    return cfg


def build_generator(cfg: ExperimentConfig) -> Generator1D:
    try:
        return make_ou() if cfg.space == "ou" else make_laguerre(float(cfg.p))
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc


def _read_table(path: str):
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read potential table {path}: {exc}") from exc
    if data.shape[1] < 3 or data.shape[0] < 4:
        raise ConfigError("potential table needs columns x,V,dV and at least 4 rows")
    return data[:, 0], data[:, 1], data[:, 2]


def build_potential(cfg: ExperimentConfig, gen: Generator1D) -> Potential:
    entry = cfg.potential
    kind = entry["kind"]
    if kind == "zero":
        raw = zero_potential()
    elif kind == "linear":
        if gen.kind != "ou":
            raise ConfigError("the linear potential is defined for the ou space")
        raw = linear_potential(float(entry["K_or_c"]))
    elif kind == "sqrt":
        if gen.kind != "laguerre":
            raise ConfigError("the sqrt potential is defined for laguerre spaces")
        raw = sqrt_potential(float(entry["K_or_c"]))
    else:
        raw = tabulated_potential(*_read_table(entry["table_path"]))
    if kind == "zero":
        return raw
    pot = prepare_potential(gen, raw)
    if not math.isfinite(pot.K):
        raise ConfigError("potential is not Lipschitz on the space")
    return pot


def build_grid(cfg: ExperimentConfig, gen: Generator1D) -> np.ndarray:
    g = cfg.grid or ({"lo": -5.0, "hi": 5.0, "n": 201} if gen.kind == "ou"
                     else {"lo": 0.01, "hi": 50.0, "n": 400, "spacing": "metric"})
    lo, hi, n = float(g["lo"]), float(g["hi"]), int(g["n"])
    if not lo < hi:
        raise ConfigError("grid needs lo < hi")
    if not (gen.contains(lo) and gen.contains(hi)):
        raise ConfigError(f"grid [{lo}, {hi}] leaves the domain {gen.support}")
    if g.get("spacing", "linear") == "metric":
        return gen.inverse_metric(np.linspace(gen.metric(lo), gen.metric(hi), n))
    return np.linspace(lo, hi, n)


def _curvature(cfg: ExperimentConfig, gen: Generator1D) -> tuple[float, float]:
    return float(cfg.gamma.get("rho1", gen.rho1)), float(cfg.gamma.get("rho2", gen.rho2))


def _output_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _write_json(path: Path, obj) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    path.write_text(text, encoding="utf-8", newline="\n")


def _jsonable(obj):
    return VerificationReport("tmp", PASS, 0.0, details=obj).to_dict()["details"]


# gamma-check -----------------------------------------------------------------

def run_gamma_check(cfg: ExperimentConfig) -> tuple[dict, bool]:
    gen = build_generator(cfg)
    n_samples = int(cfg.gamma.get("n_samples", 10_000))
    jets = sample_jets(gen, n_samples, cfg.seed)
    derivs = jets.derivatives()
    recursion = []
    for n in (1, 2, 3):
        rec = gamma_n_recursive(gen, jets, n)
        if gen.kind == "ou":
            ref = ou_gamma_explicit(derivs[1:4], n)
        else:
            ref = laguerre_gamma_explicit(gen.p, derivs[1:4], jets.x, n)
        err = np.abs(rec - ref) / (1.0 + np.abs(ref))
        i = int(np.argmax(err))
        recursion.append({
            "n": n,
            "max_rel_error": float(err[i]),
            "tolerance": GAMMA_REL_TOL,
            "status": status_from(err[i] <= GAMMA_REL_TOL),
            "witness_x": float(jets.x[i]),
        })
    rho1, rho2 = _curvature(cfg, gen)
    curvature = [certify_curvature(gen, 1, rho1, jets, seed=cfg.seed).to_dict(),
                 certify_curvature(gen, 2, rho2, jets, seed=cfg.seed).to_dict()]
    ok = all(r["status"] == PASS for r in recursion) and all(c["status"] == PASS for c in curvature)
    report = {
        "space": gen.label,
        "seed": cfg.seed,
        "n_samples": n_samples,
        "rho1": rho1,
        "rho2": rho2,
        "recursion_vs_closed_form": recursion,
        "curvature": curvature,
        "status": status_from(ok),
    }
    return report, ok


def cmd_gamma_check(cfg: ExperimentConfig) -> int:
    report, ok = run_gamma_check(cfg)
    out = _output_dir(cfg)
    _write_json(out / "gamma_report.json", _jsonable(report))
    log.info("gamma-check %s -> %s", report["status"], out / "gamma_report.json")
    return EXIT_OK if ok else EXIT_FAIL


# transport ----------------------------------------------------------------

@dataclass
class RunSummary:
    """Outcome of a transport run. Timings live outside the deterministic payload."""

    space: str
    potential: str
    backend: str
    K: float
    rho1: float
    rho2: float
    t_max: float
    theorem_bound: float
    lipschitz: float
    ks: float
    monge_sup: float
    horizon_tail: float
    ode_error: float
    checks: list = field(default_factory=list)
    status: str = PASS
    fingerprint: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def to_dict(self, include_timings: bool = False) -> dict:
        d = asdict(self)
        if not include_timings:
            d.pop("timings")
        return _jsonable(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> RunSummary:
        d = dict(d)
        for key in ("K", "rho1", "rho2", "t_max", "theorem_bound", "lipschitz", "ks",
                    "monge_sup", "horizon_tail", "ode_error"):
            d[key] = float(d[key])
        return cls(**d)


def _check(name: str, ok: bool, margin: float) -> dict:
    return {"name": name, "status": status_from(ok), "margin": float(margin)}


def write_transport_csv(path: Path, columns: dict) -> None:
    names = list(columns)
    rows = zip(*(columns[k] for k in names))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in rows:
            w.writerow([f"{float(v):.17g}" for v in row])


def read_transport_csv(path) -> dict:
    with open(path, encoding="utf-8", newline="") as fh:
        r = csv.reader(fh)
        names = next(r)
        data = np.array([[float(v) for v in row] for row in r])
    return {k: data[:, i] for i, k in enumerate(names)}


def run_transport(cfg: ExperimentConfig) -> tuple[RunSummary, dict]:
    timings = {}
    t0 = time.perf_counter()
    gen = build_generator(cfg)
    pot = build_potential(cfg, gen)
    grid = build_grid(cfg, gen)
    rho1, rho2 = gen.rho1, gen.rho2
    backend = cfg.backend or ("mehler" if gen.kind == "ou" else "fd")
    try:
        problem = build_problem(gen, pot, backend, grid=grid, ode_tol=cfg.ode_tol,
                                horizon_eps=cfg.horizon_eps)
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    timings["setup"] = time.perf_counter() - t0
    bound = theorem_bound(rho1, rho2, pot.K)
    checks = []
    try:
        tmap = transport_grid(problem)
    except MonotonicityError as exc:
        checks.append({"name": "monotone", "status": FAIL, "margin": -1.0,
                       "pair": list(exc.pair or ())})
        summary = RunSummary(gen.label, pot.name, backend, pot.K, rho1, rho2, problem.t_max,
                             bound, math.nan, math.nan, math.nan, math.nan, math.nan, checks, FAIL,
                             problem.fingerprint(), timings)
        return summary, {}
    timings["transport"] = time.perf_counter() - t0 - timings["setup"]
    t1 = time.perf_counter()
    mu = MeasureCDF.for_measure(gen, tol=cfg.quadrature_tol)
    nu = MeasureCDF.for_measure(gen, pot, tol=cfg.quadrature_tol)
    monge = monge_quantile_map(mu, nu, tmap.points)
    ks = ks_pushforward(tmap, mu, nu)
    cmp = compare_transport_to_monge(tmap, mu, nu, gen, tol=MONGE_TOL)
    timings["oracle"] = time.perf_counter() - t1
    checks.append(_check("monotone", True, float(np.min(np.diff(tmap.values)))))
    checks.append(_check("lipschitz_bound", tmap.lipschitz <= bound + 1e-6,
                         bound + 1e-6 - tmap.lipschitz))
    checks.append(_check("ks_pushforward", ks <= KS_THRESHOLD, KS_THRESHOLD - ks))
    checks.append({"name": cmp.name, "status": cmp.status, "margin": cmp.margin})
    status = PASS if all(c["status"] == PASS for c in checks) else FAIL
    summary = RunSummary(
        space=gen.label, potential=pot.name, backend=backend, K=pot.K, rho1=rho1, rho2=rho2,
        t_max=problem.t_max, theorem_bound=bound, lipschitz=tmap.lipschitz, ks=ks,
        monge_sup=cmp.details["sup_diff"], horizon_tail=tmap.horizon_tail,
        ode_error=tmap.ode_error, checks=checks, status=status,
        fingerprint={**problem.fingerprint(), "seed": cfg.seed, "grid": cfg.grid,
                     "quadrature_tol": cfg.quadrature_tol},
        timings=timings,
    )
    columns = {"x": tmap.points, "T": tmap.values, "T_prime": tmap.derivative,
               "monge": monge, "abs_diff": np.abs(tmap.values - monge)}
    return summary, columns


def cmd_transport(cfg: ExperimentConfig) -> int:
    summary, columns = run_transport(cfg)
    out = _output_dir(cfg)
    if columns:
        write_transport_csv(out / "transport.csv", columns)
    (out / "summary.json").write_text(summary.to_json(), encoding="utf-8", newline="\n")
    _write_json(out / "timings.json", summary.timings)
    log.info("transport %s: L=%.6g bound=%.6g KS=%.3g", summary.status, summary.lipschitz,
             summary.theorem_bound, summary.ks)
    return EXIT_OK if summary.status == PASS else EXIT_FAIL


# verify-all ---------------------------------------------------------------

def _verification_evaluator(cfg: ExperimentConfig, gen: Generator1D):
    times = [t for t in cfg.t_schedule if t > 0]
    if cfg.backend:
        if cfg.backend == "spectral" and times:
            return spectral_for_schedule(gen, min(times))
        return make_evaluator(gen, cfg.backend)
    if gen.kind == "ou":
        return make_evaluator(gen, "mehler")
    return spectral_for_schedule(gen, min(times) if times else 0.05)


def _lattice(gen: Generator1D, grid: np.ndarray, n: int = 13) -> np.ndarray:
    # a modest sub-grid of the configured grid for the pointwise inequality sweeps
    if gen.kind == "ou":
        lo, hi = max(grid[0], -3.0), min(grid[-1], 3.0)
    else:
        lo, hi = max(grid[0], 0.05), min(grid[-1], 10.0)
    if lo >= hi:
        lo, hi = grid[0], grid[-1]
    return np.linspace(lo, hi, n)


def run_verify_all(cfg: ExperimentConfig) -> list[VerificationReport]:
    gen = build_generator(cfg)
    pot = build_potential(cfg, gen)
    grid = build_grid(cfg, gen)
    times = [float(t) for t in cfg.t_schedule]
    ev = _verification_evaluator(cfg, gen)
    suite = function_suite(gen.kind, gen.p or 1.5)
    lattice = _lattice(gen, grid)
    reports = [semigroup_inequality_suite(ev, gen, suite, times, lattice)]

    x_mid = float(lattice[len(lattice) // 2])
    lam_reports = []
    for f in suite[:2] + suite[-1:]:
        for n in (0, 1, 2):
            lam_reports.append(monotone_interpolant_check(ev, f, n, 1.0, x_mid,
                                                          [0.1, 0.25, 0.5, 0.75, 0.9]))
    reports.append(merge("lambda_interpolant", lam_reports, ev.fingerprint()))

    g = (SmoothFunction.from_expr("x", lipschitz=1.0) if gen.kind == "ou"
         else SmoothFunction.from_expr("2*sqrt(x)", lipschitz=1.0))
    reports.append(herbst_moment_check(ev, g, 2.0, 1.0, times, lattice))

    ck = transfer_constant(gen.rho1, gen.rho2, pot.K)
    reports.append(poincare_transfer_check(gen, pot, ck, suite))

    backend = cfg.backend or ("mehler" if gen.kind == "ou" else "fd")
    if gen.kind == "laguerre":
        lo, hi, n = GROWTH_GRID
        tgrid = gen.inverse_metric(np.linspace(gen.metric(lo), gen.metric(hi), n))
    else:
        tgrid = grid
    problem = build_problem(gen, pot, backend, grid=tgrid, ode_tol=cfg.ode_tol,
                            horizon_eps=cfg.horizon_eps)
    reports.append(hessian_log_pt_bound_check(problem, times, lattice))
    reports.append(velocity_decay_check(problem, times, lattice))
    if gen.kind == "laguerre":
        tmap = transport_grid(problem, error_estimate=False)
        reports.append(growth_check(tmap, gen))
    else:
        reports.append(VerificationReport("growth", SKIPPED, 0.0,
                                          details={"reason": "gamma-only check"}))
    for r in reports:
        r.fingerprint = {**r.fingerprint, "seed": cfg.seed, "space": gen.label,
                         "potential": pot.name}
    return reports


def cmd_verify_all(cfg: ExperimentConfig) -> int:
    reports = run_verify_all(cfg)
    out = _output_dir(cfg) / "verify"
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create {out}: {exc}") from exc
    for r in reports:
        (out / f"{r.name}.json").write_text(r.to_json() + "\n", encoding="utf-8", newline="\n")
        log.info("%s", r.line())
    agg = merge("verify_all", reports, {"seed": cfg.seed})
    agg.details = {"checks": [{"name": r.name, "status": r.status, "margin": r.margin}
                              for r in reports]}
    (out / "aggregate.json").write_text(agg.to_json() + "\n", encoding="utf-8", newline="\n")
    return EXIT_OK if agg.status != FAIL else EXIT_FAIL


# entry point --------------------------------------------------------------

def cmd_bounds(args) -> int:
    try:
        value = theorem_bound(args.rho1, args.rho2, args.K)
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    print(repr(value))
    return EXIT_OK


COMMANDS = {"gamma-check": cmd_gamma_check, "transport": cmd_transport,
            "verify-all": cmd_verify_all}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hft", description="Heat-flow transport maps on 1D model spaces.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", required=True, help="JSON configuration file")
    b = sub.add_parser("bounds", help="print the Lipschitz bound of the transport map")
    b.add_argument("--rho1", type=float, required=True)
    b.add_argument("--rho2", type=float, required=True)
    b.add_argument("--K", type=float, required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "bounds":
            return cmd_bounds(args)
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg)
    except (ConfigError, DomainError, OSError) as exc:
        print(f"hft: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HFTError as exc:
        print(f"hft: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
