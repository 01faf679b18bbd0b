"""Command-line front end: argument parsing, sweeps and report envelopes.

Every subcommand emits one JSON envelope

    {"schema_version": "report/v1", "kind": ..., "config": ..., "payload": ..., "timings": ...}

where ``config`` echoes the full run configuration, so a run can be
reproduced from its report alone.  Timings live outside the payload, which
is deterministic for a fixed configuration.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from . import spectral as sp
from . import verify as vf
from .grid import RadialGrid, make_grid
from .minimize import (
    CONSTRAINTS,
    NEHARI,
    SIGMA_MARGIN,
    EstimationError,
    ProjectionError,
    estimate_m,
    find_threshold,
    gap_probe,
)
from .model import ModelParams, bubble_norms, m_infinity, nehari_coefficients, scaling_root
from .shoot import NoSolutionError, ResidualToleranceError, TOL_REL, min_action_solution

SCHEMA_VERSION = "report/v1"
GRID_ENV = "NEHARI_LAB_DEFAULT_GRID"

EXIT_OK = 0
EXIT_PRECONDITION = 2
EXIT_NUMERICAL = 3
EXIT_INTERNAL = 4

NUMERICAL_ERRORS = (
    NoSolutionError,
    ResidualToleranceError,
    EstimationError,
    ProjectionError,
    sp.ConvergenceError,
    np.linalg.LinAlgError,
)

log = logging.getLogger("nehari_lab")


class PreconditionError(ValueError):
    pass


# --- configuration -------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    R: float
    N: int
    grading: str = "geometric"

    def build(self) -> RadialGrid:
        return build_grid(self.R, self.N, self.grading)


@dataclass
class RunConfig:
    command: str
    params: dict
    grid: Optional[dict] = None
    tol: Optional[float] = None
    out: Optional[str] = None
    format: str = "json"
    jobs: int = 1

    def as_dict(self) -> dict:
        return asdict(self)


def build_grid(R: float, N: int, grading: str = "geometric") -> RadialGrid:
    """Grid from (R, N, grading); geometric grids put half the cells in a uniform core."""
    N = int(N) + int(N) % 2  # two-grid error estimates coarsen by two
    if grading == "uniform":
        return make_grid(R, N)
    core = min(10.0, R / 10.0)
    n_core = N // 2
    h0 = core / n_core
    n_geo = N - n_core
    outer = R - core

    def span(q):
        return h0 * q * (q**n_geo - 1.0) / (q - 1.0) - outer

    if span(1.0 + 1e-12) >= 0.0:
        return make_grid(R, N)
    hi = 1.0 + 1e-4
    while span(hi) < 0.0:  # grow the bracket gently; q**n_geo overflows for large q
        hi = 1.0 + 2.0 * (hi - 1.0)
    ratio = brentq(span, 1.0 + 1e-12, hi)
    return make_grid(R, N, "geometric", core=core, ratio=ratio)


def parse_grid_env(text: str) -> dict:
    """Parse ``R=200,N=4000,grading=geometric`` into a partial grid spec."""
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        key, sep, val = item.partition("=")
        if not sep:
            raise PreconditionError(f"{GRID_ENV}: expected key=value, got {item!r}")
        key = key.strip()
        if key == "R":
            out["R"] = float(val)
        elif key == "N":
            out["N"] = int(val)
        elif key == "grading":
            out["grading"] = val.strip()
        else:
            raise PreconditionError(f"{GRID_ENV}: unknown key {key!r}")
    return out


def resolve_grid(args) -> Optional[GridSpec]:
    """Grid flags override the environment default; None means the module default."""
    spec = parse_grid_env(os.environ.get(GRID_ENV, ""))
    if args.grid_R is not None:
        spec["R"] = args.grid_R
    if args.grid_N is not None:
        spec["N"] = args.grid_N
    if args.grading is not None:
        spec["grading"] = args.grading
    if not spec:
        return None
    if "R" not in spec or "N" not in spec:
        raise PreconditionError("a grid override needs both R and N")
    if spec.get("grading", "geometric") not in ("uniform", "geometric"):
        raise PreconditionError(f"unknown grading {spec['grading']!r}")
    if not spec["R"] > 0 or spec["N"] < 16:
        raise PreconditionError("grid needs R > 0 and N >= 16")
    return GridSpec(float(spec["R"]), int(spec["N"]), spec.get("grading", "geometric"))


# --- serialisation -------------------------------------------------------------


def to_jsonable(obj):
    """Plain JSON types; non-finite floats become the strings 'inf', '-inf', 'nan'."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def envelope(kind: str, config: RunConfig, payload: dict, timings: Dict[str, float]) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "config": to_jsonable(config.as_dict()),
        "payload": to_jsonable(payload),
        "timings": {k: float(v) for k, v in timings.items()},
    }


class Timer:
    def __init__(self):
        self.stages: Dict[str, float] = {}

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.stages[name] = self.stages.get(name, 0.0) + time.perf_counter() - t0


def rows_to_csv(rows: List[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: to_jsonable(row.get(c)) for c in columns})
    return buf.getvalue()


# --- commands ----------------------------------------------------------------


def _params(p: float, omega: float) -> ModelParams:
    try:
        return ModelParams(p, omega)
    except ValueError as exc:
        raise PreconditionError(str(exc)) from exc


def cmd_solve(args, config: RunConfig, timer: Timer):
    params = _params(args.p, args.omega)
    grid = resolve_grid(args)
    with timer.stage("grid"):
        g = grid.build() if grid else None
    with timer.stage("shoot"):
        cand = min_action_solution(params, max_branches=args.branches, grid=g, tol_rel=args.tol or TOL_REL)
    summary = cand.summary()
    summary["m_inf"] = m_infinity(params.d)
    summary["below_m_inf"] = cand.action < m_infinity(params.d)
    return "solve", summary, None


def _estimate_row(item):
    p, omega, constraint = item
    est = estimate_m(ModelParams(p, omega), constraint)
    return est.as_dict()


def sweep_omegas(lo: float, hi: float, n: int) -> List[float]:
    if not (lo > 0 and hi > 0) or lo > hi or n < 1 or (lo == hi and n > 1):
        raise PreconditionError(f"empty or invalid omega range [{lo}, {hi}] with {n} points")
    return [float(x) for x in np.geomspace(lo, hi, n)]


def run_parallel(fn, items: list, jobs: int) -> list:
    """Map over work items with at most ``jobs`` processes; output follows input order."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


def cmd_sweep(args, config: RunConfig, timer: Timer):
    params = _params(args.p, args.omega_lo)  # validates p
    if args.constraint not in CONSTRAINTS:
        raise PreconditionError(f"constraint must be one of {CONSTRAINTS}")
    omegas = sweep_omegas(args.omega_lo, args.omega_hi, args.n)
    items = sorted((params.p, om, args.constraint) for om in omegas)
    with timer.stage("estimate"):
        rows = run_parallel(_estimate_row, items, args.jobs)
    rows.sort(key=lambda r: r["omega"])
    ests_flag = _monotone_rows(rows)
    table = [
        {"omega": r["omega"], "m_value": r["value"], "error_bar": r["error_bar"], "witness": r["witness"]["kind"],
         "below_m_inf": r["below_m_inf"]}
        for r in rows
    ]
    payload = {
        "p": params.p,
        "constraint": args.constraint,
        "m_inf": m_infinity(),
        "monotone_within_errors": ests_flag,
        "all_below_m_inf": all(r["below_m_inf"] for r in rows),
        "rows": table,
        "estimates": rows,
    }
    csv_text = rows_to_csv(table, ("omega", "m_value", "error_bar", "witness", "below_m_inf"))
    return "sweep", payload, csv_text


def _monotone_rows(rows: List[dict]) -> bool:
    # same rule as minimize.monotone_within_errors, on serialised rows
    return all(
        b["value"] >= a["value"] - SIGMA_MARGIN * (a["error_bar"] + b["error_bar"]) for a, b in zip(rows, rows[1:])
    )


def cmd_threshold(args, config: RunConfig, timer: Timer):
    _params(args.p, args.omega_lo)
    if not 0 < args.omega_lo < args.omega_hi:
        raise PreconditionError("need 0 < omega-lo < omega-hi")
    with timer.stage("threshold"):
        rep = find_threshold(args.p, (args.omega_lo, args.omega_hi), args.tol or 0.05, max_steps=args.max_steps)
    payload = rep.as_dict()
    if rep.finite:
        a, b = rep.bracket
        payload["endpoints"] = [
            {"omega": a, "below_m_inf": rep.estimate_at(a).below_m_inf},
            {"omega": b, "below_m_inf": rep.estimate_at(b).below_m_inf},
        ]
        payload["rel_width"] = (b - a) / (0.5 * (a + b))
    csv_text = rows_to_csv(payload["samples"], ("omega", "value", "error_bar", "below_m_inf", "witness"))
    return "threshold", payload, csv_text


SPECTRAL_CHECKS = ("pairing", "eig", "kernel", "galpha")


def cmd_spectral(args, config: RunConfig, timer: Timer):
    alphas = args.alpha or [1e-2, 1e-3, 1e-4]
    if any(not a > 0 for a in alphas):
        raise PreconditionError("alphas must be positive")
    checks = args.checks or list(SPECTRAL_CHECKS)
    bad = [c for c in checks if c not in SPECTRAL_CHECKS]
    if bad:
        raise PreconditionError(f"unknown spectral checks {bad}; choose from {SPECTRAL_CHECKS}")
    if "pairing" in checks and len(alphas) < 2:
        raise PreconditionError("pairing extrapolation needs at least two alphas")
    powers = args.p_list or [3.0]
    grid = resolve_grid(args)
    with timer.stage("spectral"):
        rep = sp.spectral_report(alphas, powers=powers, checks=checks)
        if "eig" in checks and grid is not None:
            g = grid.build()
            rep.eigen_lplus = sp.lowest_eigenvalues(sp.LPLUS, 2, g)
            rep.eigen_lminus = sp.lowest_eigenvalues(sp.LMINUS, 2, g)
    payload = rep.as_dict()
    payload["checks"] = checks
    if "pairing" in checks:
        lim = rep.extrapolated_limits["pairing_lambda"]["limit"]
        payload["pairing_lambda_rel_err_6pi"] = abs(lim - 6.0 * math.pi) / (6.0 * math.pi)
    if "eig" in checks:
        payload["lplus_negative_count"] = sum(1 for v in rep.eigen_lplus if v < 0)
    if "kernel" in checks:
        payload["kernel_min_order"] = min(v["order"] for v in rep.kernel_residuals.values())
    return "spectral", payload, None


def cmd_testfun(args, config: RunConfig, timer: Timer):
    params = _params(args.p, args.omega)
    if not 0 < args.eps_lo < args.eps_hi or args.n < 2:
        raise PreconditionError("need 0 < eps-lo < eps-hi and at least two points")
    if args.eps_hi > 0.5:
        raise PreconditionError("eps-hi must be <= 0.5 for the cut-off bubble")
    eps = np.geomspace(args.eps_lo, args.eps_hi, args.n)
    rows = []
    with timer.stage("bubbles"):
        for e in eps:
            b = bubble_norms(float(e), params.p)
            a, bb, c = nehari_coefficients(b.grad_sq, b.mass, b.lp_power, b.crit_power, params)
            t = scaling_root(a, bb, params.p + 1.0, c, params.crit)
            level = (0.5 - 1.0 / (params.p + 1.0)) * t ** (params.p + 1.0) * b.lp_power + t**6 * b.crit_power / 3.0
            rows.append({**b._asdict(), "t_nehari": t, "nehari_level": level})

    def slope(key, transform=abs):
        y = np.array([transform(r[key]) for r in rows])
        if np.any(y <= 0):
            return None
        return float(np.polyfit(np.log(eps), np.log(y), 1)[0])

    payload = {
        "p": params.p,
        "omega": params.omega,
        "m_inf": m_infinity(),
        "rows": rows,
        "slopes": {
            "grad_excess": slope("grad_excess"),
            "crit_deficit": slope("crit_deficit"),
            "lp_power": slope("lp_power"),
            "t_minus_1": slope("t_nehari", lambda t: abs(t - 1.0)),
        },
        "expected": {"grad_excess": 2.0, "crit_deficit": 6.0, "lp_power": 5.0 - params.p, "t_minus_1": 2.0},
    }
    if params.p == 2.0:
        L = np.array([r["lp_power"] for r in rows])
        X = np.column_stack([eps**3 * np.abs(np.log(eps)), eps**3])
        coef = np.linalg.lstsq(X, L, rcond=None)[0]
        payload["eps3_log_fit"] = {"coef": coef.tolist(), "max_rel_residual": float(np.max(np.abs(X @ coef - L) / L))}
    cols = ("eps", "grad_excess", "crit_deficit", "mass", "lp_power", "t_nehari", "nehari_level")
    return "testfun", payload, rows_to_csv(rows, cols)


def cmd_gap(args, config: RunConfig, timer: Timer):
    params = _params(args.p, args.omega)
    with timer.stage("gap"):
        rep = gap_probe(params, max_branches=args.branches)
    payload = rep.as_dict()
    payload["m_inf"] = m_infinity()
    payload["p"] = params.p
    return "gap", payload, None


def cmd_verify(args, config: RunConfig, timer: Timer):
    keys = args.checks or list(vf.REGISTRY)
    unknown = [k for k in keys if k not in vf.REGISTRY]
    if unknown:
        raise PreconditionError(f"unknown checks {unknown}; available: {list(vf.REGISTRY)}")
    results = []
    for key in keys:
        res = vf.run_check(key)
        timer.stages[key] = res.seconds
        item = res.as_dict()
        item.pop("seconds")
        results.append(item)
        if not args.json:
            print(res.line(), flush=True)
    payload = {
        "results": results,
        "passed": sum(r["passed"] for r in results),
        "failed": sum(not r["passed"] for r in results),
        "all_passed": all(r["passed"] for r in results),
    }
    return "verify", payload, None


COMMANDS = {
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "threshold": cmd_threshold,
    "spectral": cmd_spectral,
    "testfun": cmd_testfun,
    "gap": cmd_gap,
    "verify": cmd_verify,
}


# --- parser ------------------------------------------------------------------


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("grid and output")
    g.add_argument("--grid-R", type=float, default=None, help="outer radius of an explicit grid")
    g.add_argument("--grid-N", type=int, default=None, help="cell count of an explicit grid")
    g.add_argument("--grading", choices=("uniform", "geometric"), default=None)
    g.add_argument("--tol", type=float, default=None, help="command tolerance override")
    g.add_argument("--out", default=None, help="write the report here instead of stdout")
    g.add_argument("--format", choices=("json", "csv"), default="json")
    g.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nehari-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()

    s = sub.add_parser("solve", parents=[common], help="least-action positive radial solution by shooting")
    s.add_argument("--p", type=float, required=True)
    s.add_argument("--omega", type=float, required=True)
    s.add_argument("--branches", type=int, default=1, help="search nodal branches 0..B")

    s = sub.add_parser("sweep", parents=[common], help="m-estimates over a logarithmic omega grid")
    s.add_argument("--p", type=float, required=True)
    s.add_argument("--omega-lo", type=float, required=True)
    s.add_argument("--omega-hi", type=float, required=True)
    s.add_argument("--n", type=int, default=7)
    s.add_argument("--constraint", default=NEHARI, choices=CONSTRAINTS)

    s = sub.add_parser("threshold", parents=[common], help="bracket the threshold frequency")
    s.add_argument("--p", type=float, required=True)
    s.add_argument("--omega-lo", type=float, default=1e-3)
    s.add_argument("--omega-hi", type=float, default=10.0)
    s.add_argument("--max-steps", type=int, default=20)

    s = sub.add_parser("spectral", parents=[common], help="linearised spectra and resolvent pairings")
    s.add_argument("--alpha", type=float, nargs="+", default=None)
    s.add_argument("--p", dest="p_list", type=float, nargs="+", default=None, help="powers for the W^p pairing")
    s.add_argument("--checks", nargs="+", default=None, help=f"subset of {SPECTRAL_CHECKS}")

    s = sub.add_parser("testfun", parents=[common], help="cut-off bubble asymptotics")
    s.add_argument("--p", type=float, required=True)
    s.add_argument("--omega", type=float, default=1.0)
    s.add_argument("--eps-lo", type=float, default=0.02)
    s.add_argument("--eps-hi", type=float, default=0.2)
    s.add_argument("--n", type=int, default=6)

    s = sub.add_parser("gap", parents=[common], help="least solution action against the Nehari level")
    s.add_argument("--p", type=float, required=True)
    s.add_argument("--omega", type=float, required=True)
    s.add_argument("--branches", type=int, default=1)

    s = sub.add_parser("verify", parents=[common], help="run the invariant and acceptance suite")
    s.add_argument("--checks", nargs="+", default=None, help="check keys (default: all)")
    s.add_argument("--json", action="store_true", help="emit the JSON verdict envelope")
    return parser


def _config(args) -> RunConfig:
    skip = {"command", "grid_R", "grid_N", "grading", "tol", "out", "format", "jobs", "json"}
    params = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    grid = resolve_grid(args)
    return RunConfig(
        command=args.command,
        params=params,
        grid=asdict(grid) if grid else None,
        tol=args.tol,
        out=args.out,
        format=args.format,
        jobs=args.jobs,
    )


def _emit(text: str, out: Optional[str]):
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _error_envelope(command: str, exc: BaseException, code: int, config: Optional[RunConfig] = None) -> dict:
    config = config or RunConfig(command=command, params={})
    payload = {"error_type": type(exc).__name__, "message": str(exc), "exit_code": code}
    return envelope("error", config, payload, {})


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    timer = Timer()
    config = None
    try:
        if args.jobs < 1:
            raise PreconditionError("--jobs must be >= 1")
        config = _config(args)
        kind, payload, csv_text = COMMANDS[args.command](args, config, timer)
    except PreconditionError as exc:
        env, code = _error_envelope(args.command, exc, EXIT_PRECONDITION, config), EXIT_PRECONDITION
    except NUMERICAL_ERRORS as exc:
        env, code = _error_envelope(args.command, exc, EXIT_NUMERICAL, config), EXIT_NUMERICAL
    except Exception as exc:  # report, never traceback, on the command line
        log.debug("internal error", exc_info=True)
        env, code = _error_envelope(args.command, exc, EXIT_INTERNAL, config), EXIT_INTERNAL
    else:
        env = envelope(kind, config, payload, timer.stages)
        code = EXIT_OK
        if kind == "verify" and not payload["all_passed"]:
            code = EXIT_NUMERICAL
        if args.format == "csv":
            if csv_text is None:
                err = PreconditionError(f"--format csv is not available for {kind}")
                _emit(json.dumps(_error_envelope(args.command, err, EXIT_PRECONDITION, config), indent=2) + "\n", None)
                return EXIT_PRECONDITION
            _emit(csv_text, args.out)
            return code
        if kind == "verify" and not args.json and not args.out:
            return code
    if env["kind"] == "error":
        log.error("%s", env["payload"]["message"])
    _emit(json.dumps(env, indent=2) + "\n", args.out)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
