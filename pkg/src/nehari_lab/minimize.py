"""Estimates of the constrained infima m^N and m^K, the threshold frequency, and gap probes.

Three independent upper-bound sources feed every estimate: the least-action
positive radial solution (shooting), the cut-off bubble family V_eps, and a
projected descent on a grid.  The reported value is their minimum; the error
bar is the numerical-error estimate of whichever source won.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .grid import RadialField, RadialGrid, graded_grid, solve_helmholtz
from .model import (
    ModelParams,
    bubble_norms,
    cutoff_bubble,
    evaluate_functionals,
    functionals_from_norms,
    k_coefficients,
    k_project,
    m_infinity,
    nehari_coefficients,
    nehari_project,
    scaling_root,
)
from .shoot import GroundStateCandidate, NoSolutionError, ResidualToleranceError, min_action_solution

log = logging.getLogger(__name__)

NEHARI = "nehari"
K = "k"
CONSTRAINTS = (NEHARI, K)
SIGMA_MARGIN = 3.0
# descent results with a larger relative two-grid error are reported but never win
REFINE_TRUST = 1e-4


class ProjectionError(RuntimeError):
    """Amplitude projection onto the constraint had no root."""


class EstimationError(RuntimeError):
    """Every source of an m-estimate failed."""


@dataclass(frozen=True)
class Witness:
    kind: str  # "shooting" | "bubble" | "refined"
    branch: Optional[int] = None
    eps: Optional[float] = None
    t: Optional[float] = None

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


@dataclass
class MEstimate:
    params: ModelParams
    value: float
    witness: Witness
    error_bar: float
    constraint: str = NEHARI
    sources: dict = field(default_factory=dict)
    candidate: Optional[GroundStateCandidate] = field(default=None, repr=False)
    history: List[float] = field(default_factory=list, repr=False)
    final_field: Optional[RadialField] = field(default=None, repr=False)

    @property
    def gap(self) -> float:
        """value - m_inf (negative below the bubble level)."""
        return self.value - m_infinity(self.params.d)

    @property
    def below_m_inf(self) -> bool:
        return self.gap < -SIGMA_MARGIN * self.error_bar

    @property
    def pinned_at_m_inf(self) -> bool:
        return abs(self.gap) <= SIGMA_MARGIN * self.error_bar

    def as_dict(self) -> dict:
        return {
            "p": self.params.p,
            "omega": self.params.omega,
            "d": self.params.d,
            "constraint": self.constraint,
            "value": self.value,
            "error_bar": self.error_bar,
            "gap_to_m_inf": self.gap,
            "below_m_inf": self.below_m_inf,
            "witness": self.witness.as_dict(),
            "sources": self.sources,
        }


def _check_constraint(params: ModelParams, constraint: str):
    if constraint not in CONSTRAINTS:
        raise ValueError(f"constraint must be one of {CONSTRAINTS}")
    if constraint == K and not params.p > 1.0 + 4.0 / params.d:
        raise ValueError(f"K constraint requires p > 1 + 4/d = {1 + 4 / params.d:g}")


def _constrained_value(G, M, L, C, params: ModelParams, constraint: str):
    """(t, value) after projecting the norm powers onto the constraint.

    For the Nehari constraint the value is J(t u) (equal to S on the
    manifold); for K it is S(t u).
    """
    coef = nehari_coefficients if constraint == NEHARI else k_coefficients
    a, b, c = coef(G, M, L, C, params)
    try:
        t = scaling_root(a, b, params.p + 1.0, c, params.crit)
    except ValueError as exc:
        raise ProjectionError(str(exc)) from exc
    q, s = params.p + 1.0, params.crit
    rep = functionals_from_norms(t * t * G, t * t * M, t**q * L, t**s * C, params)
    return t, (rep.j_val if constraint == NEHARI else rep.action)


def default_eps_list(params: ModelParams, n: int = 5) -> np.ndarray:
    """Bubble scales 1e-2..1e-4, shrunk by 1/sqrt(omega) for omega > 1."""
    return np.geomspace(1e-2, 1e-4, n) / max(1.0, math.sqrt(params.omega))


def _richardson_eps2(e0, v0, e1, v1):
    # remove the leading eps^2 term from two samples
    return (v1 * e0 * e0 - v0 * e1 * e1) / (e0 * e0 - e1 * e1)


def bubble_family_value(params: ModelParams, eps_list: Sequence[float], constraint: str = NEHARI):
    """Constrained values of the projected cut-off bubbles t_eps V_eps.

    Returns (best, per_eps); ``per_eps`` rows are dicts with eps, t and value.
    The error bar of ``best`` combines its distance to the eps^2-Richardson
    limit of the two smallest scales with the spread of that limit over the
    next pair; a single-scale list is supplemented by one extra evaluation at
    eps/2 for the error bar only.
    """
    if params.d != 3:
        raise ValueError("the bubble family is implemented for d = 3")
    _check_constraint(params, constraint)
    eps_arr = np.asarray(sorted(set(float(e) for e in eps_list), reverse=True))
    if eps_arr.size == 0 or not np.all(eps_arr > 0):
        raise ValueError("eps_list must contain positive scales")
    rows = []
    for eps in eps_arr:
        b = bubble_norms(eps, params.p)
        t, v = _constrained_value(b.grad_sq, b.mass, b.lp_power, b.crit_power, params, constraint)
        rows.append({"eps": float(eps), "t": t, "value": v})
    best = min(rows, key=lambda r: r["value"])
    samples = [(r["eps"], r["value"]) for r in rows]
    if len(samples) == 1:
        e = samples[0][0] / 2.0
        b = bubble_norms(e, params.p)
        samples.append((e, _constrained_value(b.grad_sq, b.mass, b.lp_power, b.crit_power, params, constraint)[1]))
    samples.sort(reverse=True)
    (e1, v1), (e2, v2) = samples[-2], samples[-1]
    lim = _richardson_eps2(e1, v1, e2, v2)
    spread = 0.0
    if len(samples) >= 3:
        e0, v0 = samples[-3]
        spread = abs(lim - _richardson_eps2(e0, v0, e1, v1))
    err = abs(best["value"] - lim) + spread + 1e-12 * abs(best["value"])
    est = MEstimate(
        params=params,
        value=best["value"],
        witness=Witness("bubble", eps=best["eps"], t=best["t"]),
        error_bar=err,
        constraint=constraint,
        sources={"bubble": {"value": best["value"], "error_bar": err, "richardson_limit": lim}},
    )
    return est, rows


# --- projected descent -----------------------------------------------------


def _project(u: RadialField, params: ModelParams, constraint: str):
    try:
        if constraint == NEHARI:
            return nehari_project(u, params)
        return k_project(u, params)
    except ValueError as exc:
        raise ProjectionError(str(exc)) from exc


def _objective(u: RadialField, params: ModelParams, constraint: str) -> float:
    rep = evaluate_functionals(u, params)
    return rep.j_val if constraint == NEHARI else rep.action


def _sobolev_gradient(u: RadialField, params: ModelParams) -> np.ndarray:
    """H^1_omega Riesz representative of S'(u): u - (-Delta + omega)^{-1} g(u)."""
    a = np.abs(u.values)
    g = a ** (params.p - 1.0) * u.values + a ** (params.crit - 2.0) * u.values
    return u.values - solve_helmholtz(u.with_values(g), params.omega).values


def _two_grid_error(u: RadialField, params: ModelParams, constraint: str, value: float) -> float:
    coarse = RadialField(u.grid.coarsen(), u.values[::2])
    _, cu = _project(coarse, params, constraint)
    return abs(value - _objective(cu, params, constraint)) / 3.0


def gradient_refine(
    u0: RadialField,
    params: ModelParams,
    constraint: str = NEHARI,
    max_steps: int = 200,
    rel_tol: float = 1e-10,
    resolution_tol: float = 1e-4,
) -> MEstimate:
    """Projected descent on the constraint manifold.

    Each step moves along minus the Sobolev gradient of S (tangent to the
    Nehari manifold there, since <S'(u), u> = N(u) = 0), re-projects by
    amplitude scaling and accepts only if the objective (J for Nehari, S for
    K) decreases; step sizes halve from 0.1.  A step is also refused when the
    two-grid error estimate of the trial exceeds ``resolution_tol`` relative:
    above the threshold frequency the flow concentrates toward a bubble and
    would otherwise run below the grid scale, where the discrete energy is no
    longer an upper bound.  The grid needs an even cell count.
    """
    _check_constraint(params, constraint)
    if not np.any(u0.values != 0.0):
        raise ValueError("initial field must be nonzero")
    u = RadialField(u0.grid, u0.values)
    _, u = _project(u, params, constraint)
    value = _objective(u, params, constraint)
    err = _two_grid_error(u, params, constraint, value)
    history = [value]
    stop = "max_steps"
    for _ in range(max_steps):
        g = _sobolev_gradient(u, params)
        tau = 0.1
        accepted = False
        while tau > 1e-6:
            trial = u.with_values(u.values - tau * g)
            _, trial = _project(trial, params, constraint)
            v = _objective(trial, params, constraint)
            if v < value:
                accepted = True
                break
            tau *= 0.5
        if not accepted:
            stop = "no_descent"
            break
        trial_err = _two_grid_error(trial, params, constraint, v)
        if trial_err > max(resolution_tol * abs(v), err):
            stop = "resolution"
            break
        decrease = (value - v) / abs(value)
        u, value, err = trial, v, trial_err
        history.append(value)
        if decrease < rel_tol:
            stop = "converged"
            break
    return MEstimate(
        params=params,
        value=value,
        witness=Witness("refined"),
        error_bar=err,
        constraint=constraint,
        sources={"refined": {"value": value, "error_bar": err, "steps": len(history) - 1, "stop": stop}},
        history=history,
        final_field=u,
    )


def refine_grid(params: ModelParams, n_core: int = 400) -> RadialGrid:
    R = max(30.0 / math.sqrt(params.omega), 4.0)
    return graded_grid(R, min(2.0, R / 2.0), 1.01, n_core, params.d)


def _refine_start(params: ModelParams, candidate: Optional[GroundStateCandidate], grid: RadialGrid) -> RadialField:
    if candidate is not None:
        return RadialField(candidate.field.grid, candidate.field.values)
    eps = min(0.3, 10.0 * math.sqrt(grid.spacing[0]))
    return cutoff_bubble(eps, grid)


# --- combined estimator ----------------------------------------------------


def estimate_m(
    params: ModelParams,
    constraint: str = NEHARI,
    *,
    eps_list: Optional[Sequence[float]] = None,
    refine_steps: int = 60,
    shooting: bool = True,
) -> MEstimate:
    """Minimum of the shooting, bubble-family and descent upper bounds."""
    _check_constraint(params, constraint)
    sources = {}
    ests: List[MEstimate] = []
    cand = None
    if shooting:
        try:
            cand = min_action_solution(params, max_branches=0)
            val = cand.action
            ests.append(
                MEstimate(params, val, Witness("shooting", branch=cand.branch_index), cand.action_error, constraint, candidate=cand)
            )
            sources["shooting"] = {"value": val, "error_bar": cand.action_error, "height": cand.height}
        except (NoSolutionError, ResidualToleranceError) as exc:
            sources["shooting"] = {"failed": str(exc)}
    try:
        bub, _ = bubble_family_value(params, default_eps_list(params) if eps_list is None else eps_list, constraint)
        ests.append(bub)
        sources.update(bub.sources)
    except ProjectionError as exc:
        sources["bubble"] = {"failed": str(exc)}
    if refine_steps > 0:
        try:
            grid = refine_grid(params)
            ref = gradient_refine(_refine_start(params, cand, grid), params, constraint, refine_steps)
            sources.update(ref.sources)
            if ref.error_bar <= REFINE_TRUST * abs(ref.value):
                ests.append(ref)
            else:
                sources["refined"]["excluded"] = "two-grid error above trust level"
        except (ProjectionError, ValueError) as exc:
            sources["refined"] = {"failed": str(exc)}
    if not ests:
        raise EstimationError(f"all sources failed for {params}: {sources}")
    best = min(ests, key=lambda e: e.value)
    return MEstimate(params, best.value, best.witness, best.error_bar, constraint, sources, candidate=best.candidate)


# --- threshold location ----------------------------------------------------


@dataclass
class ThresholdReport:
    p: float
    omegas: List[float]
    m_values: List[MEstimate]
    m_inf: float
    bracket: Optional[tuple]
    bisection_steps: int
    marker: Optional[str] = None
    d: int = 3

    @property
    def finite(self) -> bool:
        return self.bracket is not None

    @property
    def midpoint(self) -> float:
        if self.bracket is None:
            raise ValueError(self.marker or "no finite bracket")
        return 0.5 * (self.bracket[0] + self.bracket[1])

    def estimate_at(self, omega: float) -> MEstimate:
        return self.m_values[self.omegas.index(omega)]

    def sorted_estimates(self) -> List[MEstimate]:
        return [self.m_values[i] for i in np.argsort(self.omegas)]

    def monotone_within_errors(self) -> bool:
        return monotone_within_errors(self.sorted_estimates())

    def as_dict(self) -> dict:
        return {
            "p": self.p,
            "d": self.d,
            "m_inf": self.m_inf,
            "bracket": list(self.bracket) if self.bracket else None,
            "marker": self.marker,
            "bisection_steps": self.bisection_steps,
            "monotone_within_errors": self.monotone_within_errors(),
            "samples": [
                {"omega": e.params.omega, "value": e.value, "error_bar": e.error_bar,
                 "below_m_inf": e.below_m_inf, "witness": e.witness.kind}
                for e in self.sorted_estimates()
            ],
        }


def monotone_within_errors(estimates: Sequence[MEstimate]) -> bool:
    """Values nondecreasing in omega up to 3 x the summed neighbouring error bars."""
    ests = sorted(estimates, key=lambda e: e.params.omega)
    return all(
        b.value >= a.value - SIGMA_MARGIN * (a.error_bar + b.error_bar) for a, b in zip(ests, ests[1:])
    )


def find_threshold(
    p: float,
    omega_bracket: tuple = (1e-3, 10.0),
    tol_rel: float = 0.05,
    *,
    max_steps: int = 20,
    omega_max: float = 1e3,
    n_scan: int = 7,
    d: int = 3,
) -> ThresholdReport:
    """Bisect the predicate "m-estimate < m_inf - 3 error_bar" in log omega.

    The bracket is first scanned logarithmically; the last omega where the
    predicate holds and the next one where it fails seed the bisection.  When
    the predicate holds on every sample up to ``omega_max`` the report carries
    the marker "no finite threshold found" instead of a bracket.
    """
    lo, hi = map(float, omega_bracket)
    if not 0.0 < lo < hi:
        raise ValueError("need 0 < omega_lo < omega_hi")
    cache = {}

    def est(om):
        if om not in cache:
            cache[om] = estimate_m(ModelParams(p, om, d))
        return cache[om]

    scan = list(np.geomspace(lo, hi, n_scan))
    below = [est(om).below_m_inf for om in scan]
    m_inf = m_infinity(d)
    if all(below):
        extra = [om for om in np.geomspace(hi, omega_max, 4)[1:]]
        below_extra = [est(om).below_m_inf for om in extra]
        if all(below_extra):
            oms = list(cache)
            return ThresholdReport(p, oms, [cache[o] for o in oms], m_inf, None, 0, "no finite threshold found", d)
        scan += extra
        below += below_extra
    if below[0] == below[-1] and not any(b != below[0] for b in below):
        raise ValueError("predicate takes the same value at both bracket endpoints")
    if not below[0]:
        raise ValueError("predicate fails at omega_lo; lower the bracket")
    i = next(k for k, b in enumerate(below) if not b)
    a, b = scan[i - 1], scan[i]
    steps = 0
    while steps < max_steps and (b - a) > tol_rel * 0.5 * (a + b):
        mid = math.sqrt(a * b)
        steps += 1
        if est(mid).below_m_inf:
            a = mid
        else:
            b = mid
    oms = list(cache)
    return ThresholdReport(p, oms, [cache[o] for o in oms], m_inf, (a, b), steps, None, d)


# --- probes ----------------------------------------------------------------


@dataclass
class GapReport:
    omega: float
    m_S: float
    m_N: float
    m_S_error: float
    m_N_error: float
    gap_significant: bool
    m_N_pinned: bool
    solutions_found: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def gap_probe(params: ModelParams, max_branches: int = 1) -> GapReport:
    """Compare the least solution action m^S with the Nehari estimate m^N.

    When no decaying radial solution exists on branches 0..max_branches, m^S
    is the infimum over an empty set, reported as +inf.
    """
    try:
        cand = min_action_solution(params, max_branches=max_branches)
        m_S, err_S, found = cand.action, cand.action_error, 1
    except NoSolutionError:
        m_S, err_S, found = math.inf, 0.0, 0
    est = estimate_m(params)
    combined = err_S + est.error_bar
    return GapReport(
        omega=params.omega,
        m_S=m_S,
        m_N=est.value,
        m_S_error=err_S,
        m_N_error=est.error_bar,
        gap_significant=bool(m_S - est.value > SIGMA_MARGIN * combined),
        m_N_pinned=est.pinned_at_m_inf,
        solutions_found=found,
    )


def continuity_probe(p: float, threshold: ThresholdReport, deltas: Sequence[float]) -> List[dict]:
    """m-estimates at omega_c (1 -/+ delta) around the bracket midpoint."""
    omega_c = threshold.midpoint
    m_inf = threshold.m_inf
    rows = []
    for delta in deltas:
        row = {"delta": float(delta)}
        for side, sign in (("minus", -1.0), ("plus", 1.0)):
            om = omega_c * (1.0 + sign * delta)
            e = estimate_m(ModelParams(p, om, threshold.d))
            row[f"omega_{side}"] = om
            row[f"m_{side}"] = e.value
            row[f"err_{side}"] = e.error_bar
            row[f"gap_{side}"] = abs(e.value - m_inf)
        rows.append(row)
    return rows
