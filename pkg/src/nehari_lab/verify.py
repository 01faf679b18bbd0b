"""Invariant suite: acceptance checks plus supplementary diagnostics.

Every check returns a :class:`CheckResult` with a pass/fail verdict, the
numbers it was judged on and its wall time against a budget.  Keys ``A1`` to
``A14`` are the acceptance criteria; ``S*`` keys are supplementary checks
that document behaviour where the acceptance wording and the numerics part
ways (see the decisions ledger).
"""

from __future__ import annotations

import functools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.integrate import quad

from . import spectral as sp
from .grid import RadialField, integrate, make_grid, solve_helmholtz
from .minimize import K, NEHARI, SIGMA_MARGIN, estimate_m, find_threshold, gap_probe
from .model import (
    ModelParams,
    bubble_norms,
    critical_level,
    evaluate_functionals,
    lambda_w_profile,
    m_infinity,
    nehari_coefficients,
    scaling_root,
    sobolev_constants,
    talenti,
)
from .shoot import NoSolutionError, min_action_solution

log = logging.getLogger(__name__)


@dataclass
class CheckResult:
    key: str
    title: str
    passed: bool
    seconds: float
    budget: float
    details: dict = field(default_factory=dict)
    error: Optional[str] = None

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} {self.key:<4} {self.title} ({self.seconds:.2f}s / {self.budget:g}s)"

    def as_dict(self) -> dict:
        return {
            "key": self.key,
            "title": self.title,
            "passed": self.passed,
            "seconds": self.seconds,
            "budget": self.budget,
            "details": self.details,
            "error": self.error,
        }


@dataclass(frozen=True)
class Check:
    key: str
    title: str
    budget: float
    fn: Callable[[], tuple]


REGISTRY: Dict[str, Check] = {}


def _check(key: str, title: str, budget: float):
    def deco(fn):
        REGISTRY[key] = Check(key, title, budget, fn)
        return fn

    return deco


def _rel(a: float, b: float) -> float:
    return abs(a - b) / abs(b)


def _slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(np.abs(y)), 1)[0])


@functools.lru_cache(maxsize=None)
def _threshold(p: float):
    return find_threshold(p)


def talenti_grid(N: int = 4000, R: float = 200.0):
    return make_grid(R, N, "geometric", core=10.0, ratio=1.002)


# --- acceptance --------------------------------------------------------------


@_check("A1", "Sobolev constant from quadrature", 1.0)
def check_sobolev_constant():
    exact = critical_level(3)
    # independent one-dimensional oracle: 4 pi int_0^inf W'(r)^2 r^2 dr
    oracle = 4.0 * math.pi * quad(
        lambda r: (r / 3.0 / (1.0 + r * r / 3.0) ** 1.5) ** 2 * r * r, 0.0, np.inf, epsabs=0.0, epsrel=1e-13
    )[0]
    value = sobolev_constants(talenti_grid()).sigma_pow
    err = _rel(value, exact)
    return err <= 1e-5 and _rel(oracle, exact) <= 1e-10, {
        "sigma_pow": value,
        "closed_form": exact,
        "oracle": oracle,
        "rel_err": err,
        "tol": 1e-5,
    }


def _w6_with_tail(grid) -> float:
    W = talenti(grid).values
    # W^6 ~ 27 r^{-6} beyond R
    return integrate(grid, W**6) + 36.0 * math.pi / grid.R**3


@_check("A2", "m_inf = sigma/3 and ||W||_6^6 = sigma", 1.0)
def check_m_inf():
    g = talenti_grid()
    gc = g.coarsen()
    s_f, s_c = sobolev_constants(g).sigma_pow, sobolev_constants(gc).sigma_pow
    c_f, c_c = _w6_with_tail(g), _w6_with_tail(gc)
    combined = abs(s_f - s_c) + abs(c_f - c_c)
    m = sobolev_constants(g).m_inf
    ok_ratio = abs(m - s_f / 3.0) <= 1e-15 * s_f and _rel(m_infinity(3), critical_level(3) / 3.0) <= 1e-15
    return ok_ratio and abs(s_f - c_f) <= combined, {
        "sigma_pow": s_f,
        "w6_power": c_f,
        "difference": abs(s_f - c_f),
        "combined_quadrature_error": combined,
        "m_inf": m,
    }


def _random_field(rng, grid):
    r = grid.nodes
    vals = np.zeros_like(r)
    for _ in range(rng.integers(1, 4)):
        vals += rng.uniform(0.1, 3.0) * np.exp(-((r - rng.uniform(0, 3)) / rng.uniform(0.3, 2.0)) ** 2)
    return RadialField(grid, vals)


@_check("A3", "algebraic identities J = S - N/2 and the p+1 splitting", 1.0)
def check_identities(n: int = 100, seed: int = 20240601):
    rng = np.random.default_rng(seed)
    grid = make_grid(12.0, 400)
    worst_j = worst_split = 0.0
    for _ in range(n):
        params = ModelParams(float(rng.uniform(1.05, 4.95)), float(10 ** rng.uniform(-3, 2)))
        rep = evaluate_functionals(_random_field(rng, grid), params)
        p, om = params.p, params.omega
        scale = abs(rep.action) + abs(rep.nehari) + rep.grad_sq + om * rep.mass + rep.lp_power + rep.crit_power
        worst_j = max(worst_j, abs(rep.j_val - (rep.action - 0.5 * rep.nehari)) / scale)
        lhs = rep.action - rep.nehari / (p + 1.0)
        rhs = (0.5 - 1.0 / (p + 1.0)) * (rep.grad_sq + om * rep.mass) + (1.0 / (p + 1.0) - 1.0 / 6.0) * rep.crit_power
        worst_split = max(worst_split, abs(lhs - rhs) / scale)
    return max(worst_j, worst_split) <= 1e-12, {"samples": n, "worst_j": worst_j, "worst_split": worst_split}


def yukawa_oracle(f: Callable[[float], float], alpha: float, r: float, s_max: float) -> float:
    """(-Delta + alpha)^{-1} f at radius r by direct radial convolution with the Yukawa kernel."""
    k = math.sqrt(alpha)

    def g(s):
        return f(s) * s * (math.exp(-k * abs(r - s)) - math.exp(-k * (r + s)))

    opts = dict(epsabs=0.0, epsrel=1e-11, limit=200)
    return (quad(g, 0.0, r, **opts)[0] + quad(g, r, s_max, **opts)[0]) / (2.0 * k * r)


@_check("A4", "Helmholtz solve vs Yukawa convolution", 10.0)
def check_helmholtz(n: int = 10, seed: int = 7):
    rng = np.random.default_rng(seed)
    worst = 0.0
    rows = []
    for _ in range(n):
        alpha = float(10 ** rng.uniform(-2, 1))
        c, w, a = rng.uniform(0, 5, 3), rng.uniform(0.5, 2, 3), rng.normal(size=3)

        def fv(s, c=c, w=w, a=a):
            s = np.atleast_1d(s)
            return (a[None, :] * np.exp(-(((s[:, None] - c[None, :]) / w[None, :]) ** 2))).sum(axis=1)

        grid = make_grid(max(30.0, 40.0 / math.sqrt(alpha) + 12.0), 6000, "geometric", core=12.0, ratio=1.002)
        v = solve_helmholtz(RadialField(grid, fv(grid.nodes)), alpha)
        rs = np.linspace(0.25, 10.0, 12)
        exact = np.array([yukawa_oracle(lambda s: float(fv(s)[0]), alpha, r, 20.0) for r in rs])
        num = np.interp(rs, grid.nodes, v.values)
        err = float(np.max(np.abs(num - exact)) / np.max(np.abs(exact)))
        worst = max(worst, err)
        rows.append({"alpha": alpha, "rel_err": err})
    return worst <= 1e-4, {"worst_rel_err": worst, "tol": 1e-4, "samples": rows}


@_check("A5", "shooting solutions: residuals and decay rate", 30.0)
def check_shooting(ps: Sequence[float] = (2.0, 3.0), omegas: Sequence[float] = (0.01, 0.1, 1.0)):
    rows, ok = [], True
    for p in ps:
        for om in omegas:
            params = ModelParams(p, om)
            try:
                c = min_action_solution(params, max_branches=1)
            except NoSolutionError as exc:
                ok = False
                rows.append({"p": p, "omega": om, "found": False, "reason": str(exc)})
                continue
            decay = c.decay_rate / math.sqrt(om)
            good = c.nehari_residual <= 1e-6 and c.pohozaev_residual <= 1e-6 and abs(decay - 1.0) <= 0.05
            ok &= good
            rows.append(
                {"p": p, "omega": om, "found": True, "height": c.height, "nehari_residual": c.nehari_residual,
                 "pohozaev_residual": c.pohozaev_residual, "decay_over_sqrt_omega": decay, "passed": good}
            )
    return ok, {"cases": rows}


def _estimate_rows(p: float, omegas: Sequence[float]):
    rows = []
    for om in omegas:
        e = estimate_m(ModelParams(p, float(om)))
        rows.append({"omega": float(om), "value": e.value, "error_bar": e.error_bar, "gap": e.gap,
                     "below_m_inf": e.below_m_inf, "witness": e.witness.kind})
    return rows


@_check("A6", "p = 2: some omega <= 0.1 strictly below m_inf", 60.0)
def check_below_small_omega():
    rows = _estimate_rows(2.0, np.geomspace(1e-3, 0.1, 3))
    return any(r["below_m_inf"] for r in rows), {"m_inf": m_infinity(), "rows": rows}


@_check("A7", "p = 4: below m_inf at omega in {0.1, 1, 10, 100}", 120.0)
def check_below_p4():
    rows = _estimate_rows(4.0, (0.1, 1.0, 10.0, 100.0))
    return all(r["below_m_inf"] for r in rows), {"m_inf": m_infinity(), "rows": rows}


@_check("A8", "threshold brackets for p = 2 and p = 3", 600.0)
def check_threshold():
    ok, out = True, {}
    for p in (2.0, 3.0):
        th = _threshold(p)
        if not th.finite:
            ok = False
            out[f"p{p:g}"] = {"finite": False, "marker": th.marker}
            continue
        a, b = th.bracket
        width = (b - a) / (0.5 * (a + b))
        above = [e for e in th.sorted_estimates() if e.params.omega >= b]
        pinned = all(e.pinned_at_m_inf for e in above)
        classified = th.estimate_at(a).below_m_inf and not th.estimate_at(b).below_m_inf
        good = width <= 0.05 and th.bisection_steps <= 20 and classified and th.monotone_within_errors() and pinned
        ok &= good
        out[f"p{p:g}"] = {"bracket": [a, b], "rel_width": width, "steps": th.bisection_steps,
                          "endpoints_classified": classified, "monotone": th.monotone_within_errors(),
                          "pinned_above": pinned, "samples": len(th.omegas)}
    return ok, out


@_check("A9", "gap m^S > m_inf while m^N = m_inf at twice the p = 2 threshold", 120.0)
def check_gap():
    th = _threshold(2.0)
    om = 2.0 * th.midpoint
    g = gap_probe(ModelParams(2.0, om))
    combined = g.m_S_error + g.m_N_error
    # m^S is +inf when no decaying radial solution exists (empty infimum)
    above = g.m_S > m_infinity() + SIGMA_MARGIN * combined
    return bool(above and g.m_N_pinned), {**g.as_dict(), "m_S_above_m_inf": above,
                                          "m_S_from_empty_set": g.solutions_found == 0}


@_check("A10", "Nehari and K levels agree for p = 2.5", 120.0)
def check_constraints(omegas: Sequence[float] = (0.1, 1.0, 10.0)):
    rows, ok = [], True
    for om in omegas:
        params = ModelParams(2.5, om)
        n, k = estimate_m(params, NEHARI), estimate_m(params, K)
        diff = abs(n.value - k.value)
        good = diff <= n.error_bar + k.error_bar
        ok &= good
        rows.append({"omega": om, "m_nehari": n.value, "m_k": k.value, "difference": diff,
                     "combined_error": n.error_bar + k.error_bar})
    return ok, {"rows": rows}


def bubble_asymptotics(eps_lo: float = 0.02, eps_hi: float = 0.2, n: int = 6,
                       eps_lo_p2: float = 1e-4, eps_hi_p2: float = 1e-2) -> dict:
    """Log-log slopes and fits of the cut-off bubble norms."""
    eps = np.geomspace(eps_lo, eps_hi, n)
    b3 = [bubble_norms(e, 3.0) for e in eps]
    params = ModelParams(3.0, 1.0)
    t_minus_1 = []
    for b in b3:
        a, bb, c = nehari_coefficients(b.grad_sq, b.mass, b.lp_power, b.crit_power, params)
        t_minus_1.append(scaling_root(a, bb, 4.0, c, 6.0) - 1.0)
    e2 = np.geomspace(eps_lo_p2, eps_hi_p2, n)
    L2 = np.array([bubble_norms(e, 2.0).lp_power for e in e2])
    X = np.column_stack([e2**3 * np.abs(np.log(e2)), e2**3])
    coef = np.linalg.lstsq(X, L2, rcond=None)[0]
    return {
        "eps": eps.tolist(),
        "grad_excess_slope": _slope(eps, [b.grad_excess for b in b3]),
        "crit_deficit_slope": _slope(eps, [b.crit_deficit for b in b3]),
        "lp_p3_slope": _slope(eps, [b.lp_power for b in b3]),
        "t_minus_1": t_minus_1,
        "t_minus_1_slope": _slope(eps, t_minus_1),
        "p2_eps": e2.tolist(),
        "p2_fit_coef": coef.tolist(),
        "p2_fit_residual": float(np.max(np.abs(X @ coef - L2) / L2)),
    }


@_check("A11", "cut-off bubble asymptotics", 60.0)
def check_bubbles():
    d = bubble_asymptotics()
    ok = (
        abs(d["grad_excess_slope"] - 2.0) <= 0.15
        and abs(d["crit_deficit_slope"] - 6.0) <= 0.3
        and abs(d["lp_p3_slope"] - 2.0) <= 0.15
        and d["p2_fit_residual"] <= 0.05
        and abs(d["t_minus_1_slope"] - 2.0) <= 0.2
        and all(t > 0 for t in d["t_minus_1"])
    )
    return ok, d


@_check("A12", "L+ and L- spectra and kernel residual orders", 60.0)
def check_spectrum():
    fine = sp.eigen_grid()
    coarse = fine.coarsen()
    lp_f = sp.lowest_eigenvalues(sp.LPLUS, 2, fine)
    lp_c = sp.lowest_eigenvalues(sp.LPLUS, 2, coarse)
    lm_f = sp.lowest_eigenvalues(sp.LMINUS, 1, fine)
    lm_c = sp.lowest_eigenvalues(sp.LMINUS, 1, coarse)
    grid_tol = max(abs(lp_f[1] - lp_c[1]), abs(lm_f[0] - lm_c[0]), 1e-10)
    agree = _rel(lp_f[0], lp_c[0])
    orders = sp.kernel_residual_orders()
    min_order = min(v["order"] for v in orders.values())
    one_negative = lp_f[0] < -grid_tol and lp_f[1] >= -grid_tol and lp_c[0] < 0 and lp_c[1] >= -grid_tol
    ok = one_negative and agree <= 0.01 and lm_f[0] >= -grid_tol and lm_c[0] >= -grid_tol and min_order >= 1.8
    return ok, {"lplus_fine": lp_f, "lplus_coarse": lp_c, "lminus_fine": lm_f, "lminus_coarse": lm_c,
                "grid_tol": grid_tol, "e0_two_grid_rel": agree, "kernel_orders": orders, "min_order": min_order}


def w_norm_power(q: float, R: float = 2000.0) -> float:
    """||W||_q^q by grid quadrature plus the analytic r^{-q} tail (q > 3)."""
    g = make_grid(R, 20000, "geometric", core=10.0, ratio=1.0005)
    tail = 4.0 * math.pi * 3.0 ** (q / 2.0) * R ** (3.0 - q) / (q - 3.0)
    return integrate(g, talenti(g).values ** q) + tail


@_check("A13", "resolvent pairing asymptotics", 120.0)
def check_resolvent():
    lam = sp.extrapolate_pairing_lambda()
    lam_err = _rel(lam.limit, 6.0 * math.pi)
    wp3 = sp.extrapolate_pairing_wp(3.0)
    target = -sp_wp_stated_coefficient(3.0) * w_norm_power(4.0)
    wp_err = _rel(wp3.limit, target)
    alphas = (1e-2, 1e-3, 1e-4)
    vals = [sp.pairing_wp(a, 1.5, sp.resolvent_grid(a)) for a in alphas]
    growth = sp.growth_exponent(alphas, vals)
    ok = lam_err <= 0.02 and wp_err <= 0.03 and growth >= -0.65
    return ok, {
        "pairing_lambda_limit": lam.limit,
        "pairing_lambda_rel_err": lam_err,
        "pairing_wp_p3_limit": wp3.limit,
        "pairing_wp_p3_stated_target": target,
        "pairing_wp_p3_rel_err": wp_err,
        "pairing_wp_p3_identity_value": sp.wp_limit_from_identity(3.0, sp.resolvent_grid(1e-5)),
        "growth_exponent_p1.5": growth,
        "parts": {"lambda": lam_err <= 0.02, "wp_p3": wp_err <= 0.03, "growth_p1.5": growth >= -0.65},
    }


def sp_wp_stated_coefficient(p: float) -> float:
    """(5-p)/(10(p+1)): the coefficient of the W^p pairing limit as stated in the source."""
    return (5.0 - p) / (10.0 * (p + 1.0))


@_check("A14", "G(alpha) inverse norms", 120.0)
def check_g_alpha(alphas: Sequence[float] = (1e-1, 1e-2, 1e-3)):
    norms = [sp.g_alpha_inverse_norms(a) for a in alphas]
    general = [n[0] for n in norms]
    orth = [n[1] for n in norms]
    slope = _slope(alphas, general)
    ratio = max(orth) / min(orth)
    ok = -0.65 <= slope <= -0.35 and ratio <= 3.0
    return ok, {"alphas": list(alphas), "general": general, "orthogonal": orth, "general_slope": slope,
                "orthogonal_ratio": ratio, "parts": {"slope": -0.65 <= slope <= -0.35, "bounded": ratio <= 3.0}}


# --- supplementary -----------------------------------------------------------


@_check("S1", "finite gap between omega_c and the fold (p = 2, omega = 0.29)", 60.0)
def check_finite_gap():
    g = gap_probe(ModelParams(2.0, 0.29))
    return bool(math.isfinite(g.m_S) and g.gap_significant and g.m_N_pinned), g.as_dict()


@_check("S2", "W^p pairing limits match the Pohozaev-type identity (p = 3, 4)", 60.0)
def check_wp_identity():
    out, ok = {}, True
    for p in (3.0, 4.0):
        ext = sp.extrapolate_pairing_wp(p)
        ref = sp.wp_limit_from_identity(p, sp.resolvent_grid(1e-5))
        err = _rel(ext.limit, ref)
        ok &= err <= 0.03
        out[f"p{p:g}"] = {"limit": ext.limit, "identity": ref, "rel_err": err}
    return ok, out


@_check("S3", "A_+ fit: positive, grid-stable and zero for zero V_+ moment", 60.0)
def check_a_plus():
    alphas = sp.DEFAULT_FIT_ALPHAS
    fits = [sp.fit_a_plus(lambda_w_profile, alphas, ratio=r) for r in (1.005, 1.0025)]
    zero = sp.fit_a_plus(sp.zero_vplus_moment(lambda_w_profile), alphas)
    stable = _rel(fits[0].a_plus, fits[1].a_plus) <= 0.05
    zero_ok = abs(zero.coef) <= 3.0 * zero.coef_err
    ok = fits[0].a_plus > 0 and stable and zero_ok
    return ok, {"a_plus": [f.a_plus for f in fits], "zero_moment_coef": zero.coef, "zero_moment_err": zero.coef_err}


@_check("S4", "L- ground state aligns with W on the core", 60.0)
def check_lminus_direction():
    g = sp.eigen_grid()
    pairs = sp.lowest_eigenpairs(sp.LMINUS, 1, g)
    W = talenti(g)
    core = sp.correlation(pairs.function(0), W, g.R / 10.0)
    full = sp.correlation(pairs.function(0), W)
    return core > 0.99, {"correlation_core": core, "correlation_full": full, "r_core": g.R / 10.0}


@_check("S5", "resolvent pairings are symmetric", 10.0)
def check_symmetry():
    a = 1e-3
    grid = sp.resolvent_grid(a)
    l1, l2 = sp.pairing_lambda(a, grid), sp.pairing_lambda(a, grid, swapped=True)
    w1, w2 = sp.pairing_wp(a, 3.0, grid), sp.pairing_wp(a, 3.0, grid, swapped=True)
    worst = max(_rel(l1, l2), _rel(w1, w2))
    return worst <= 1e-8, {"lambda": [l1, l2], "wp": [w1, w2], "worst": worst}


@_check("S6", "G(alpha) inverse sup-norm slope", 60.0)
def check_g_alpha_sup(alphas: Sequence[float] = (1e-1, 1e-2, 1e-3)):
    vals = [sp.g_alpha_inverse_norm_sup(a) for a in alphas]
    slope = _slope(alphas, vals)
    return -0.65 <= slope <= -0.35, {"alphas": list(alphas), "sup_norms": vals, "slope": slope}


ACCEPTANCE = tuple(f"A{i}" for i in range(1, 15))
SUPPLEMENTARY = tuple(k for k in REGISTRY if k.startswith("S"))


def run_check(key: str) -> CheckResult:
    chk = REGISTRY[key]
    t0 = time.perf_counter()
    try:
        ok, details = chk.fn()
        err = None
    except Exception as exc:  # a crashing check is a failed check, not a crashed suite
        log.exception("check %s raised", key)
        ok, details, err = False, {}, f"{type(exc).__name__}: {exc}"
    dt = time.perf_counter() - t0
    return CheckResult(key, chk.title, bool(ok) and dt <= chk.budget, dt, chk.budget, details, err)


def run_checks(keys: Optional[Sequence[str]] = None) -> List[CheckResult]:
    keys = list(REGISTRY) if not keys else list(keys)
    unknown = [k for k in keys if k not in REGISTRY]
    if unknown:
        raise KeyError(f"unknown checks: {unknown}")
    return [run_check(k) for k in keys]
