"""Radial shooting for positive (and k-node) decaying solutions of the critical scalar field equation."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from . import _kernels
from .grid import RadialField, RadialGrid, graded_grid
from .model import FunctionalReport, ModelParams, evaluate_functionals

log = logging.getLogger(__name__)

ATOL = 1e-14
RTOL = 1e-12
BLOWUP_FACTOR = 10.0
TOL_REL = 1e-6
LINEAR_TAIL_TOL = 1e-8


class Outcome(enum.Enum):
    CROSSES_ZERO = "crosses_zero"
    STAYS_POSITIVE = "stays_positive"
    UNDECIDED = "undecided"


class NoSolutionError(RuntimeError):
    """No decaying solution was located."""


class ResidualToleranceError(RuntimeError):
    """A located solution failed its Nehari/Pohozaev residual checks."""

    def __init__(self, message, candidate=None):
        super().__init__(message)
        self.candidate = candidate


@dataclass(frozen=True)
class ShotResult:
    outcome: Outcome
    crossings: int
    r_stop: float
    value: float
    slope: float
    status: str


_STATUS = {
    _kernels.UNDER: "turned",
    _kernels.OVER: "crossed",
    _kernels.END: "end",
    _kernels.BLOWUP: "blowup",
    _kernels.UNDERFLOW: "underflow",
}
_EMPTY = np.empty(0)


def shooting_radius(omega: float) -> float:
    return max(60.0 / math.sqrt(omega), 100.0)


def _integrate(params: ModelParams, height: float, r_end: float, max_cross: int, nodes=_EMPTY):
    out_u = np.full(nodes.size, np.nan)
    out_v = np.full(nodes.size, np.nan)
    res = _kernels.shoot_radial(
        float(height), float(params.omega), float(params.p), float(params.d), float(r_end),
        nodes, out_u, out_v, int(max_cross), ATOL, RTOL, BLOWUP_FACTOR,
    )
    return res, out_u, out_v


def shoot(params: ModelParams, height: float, r_max: Optional[float] = None, max_crossings: int = 0) -> ShotResult:
    """Integrate from u(0) = height and classify the trajectory.

    CROSSES_ZERO: more than ``max_crossings`` zeros before turning back.
    STAYS_POSITIVE: turned back toward the positive equilibrium first (or
    tripped the blow-up guard while growing).  UNDECIDED: reached r_max, or
    the step size underflowed.
    """
    if not height > 0.0:
        raise ValueError("height must be positive")
    r_end = shooting_radius(params.omega) if r_max is None else r_max
    (status, crossings, r, u, v, _), _, _ = _integrate(params, height, r_end, max_crossings)
    if status == _kernels.OVER:
        outcome = Outcome.CROSSES_ZERO
    elif status in (_kernels.UNDER, _kernels.BLOWUP):
        outcome = Outcome.STAYS_POSITIVE
    else:
        outcome = Outcome.UNDECIDED
    return ShotResult(outcome, int(crossings), float(r), float(u), float(v), _STATUS[status])


def crossing_class(params: ModelParams, height: float, cap: int, r_max: Optional[float] = None) -> int:
    """Zeros crossed before the trajectory turns back, capped at ``cap``."""
    r_end = shooting_radius(params.omega) if r_max is None else r_max
    (status, crossings, *_), _, _ = _integrate(params, height, r_end, cap - 1)
    return min(int(crossings), cap)


def equilibrium_height(params: ModelParams) -> float:
    """Positive zero u_* of f(u) = omega u - u^p - u^{2*-1}; heights below it never decay."""
    om, p, crit = params.omega, params.p, params.crit

    def g(u):
        return om - u ** (p - 1.0) - u ** (crit - 2.0)

    hi = 1.0
    while g(hi) > 0.0:
        hi *= 2.0
    return brentq(g, 0.0, hi, xtol=1e-300, rtol=1e-15)


@dataclass
class GroundStateCandidate:
    params: ModelParams
    field: RadialField
    height: float
    report: FunctionalReport
    decay_rate: float
    branch_index: int
    action_error: float = 0.0
    match_radius: float = float("nan")
    bisection_sharpness: float = float("nan")
    tail_flatness: float = float("nan")
    coarse_report: Optional[FunctionalReport] = field(default=None, repr=False)

    @property
    def action(self) -> float:
        return self.report.action

    @property
    def nehari_residual(self) -> float:
        r = self.report
        return abs(r.nehari) / (r.grad_sq + self.params.omega * r.mass)

    @property
    def pohozaev_residual(self) -> float:
        r = self.report
        if r.pohozaev is None:
            return float("nan")
        return abs(r.pohozaev) / (self.params.omega * r.mass)

    def summary(self) -> dict:
        return {
            "p": self.params.p,
            "omega": self.params.omega,
            "d": self.params.d,
            "height": self.height,
            "branch_index": self.branch_index,
            "action": self.action,
            "action_error": self.action_error,
            "nehari_residual": self.nehari_residual,
            "pohozaev_residual": self.pohozaev_residual,
            "decay_rate": self.decay_rate,
            "decay_rate_expected": math.sqrt(self.params.omega),
            "match_radius": self.match_radius,
            "bisection_sharpness": self.bisection_sharpness,
            "grid": self.field.grid.describe(),
            "report": self.report.as_dict(),
        }


def solution_grid(params: ModelParams, height: float, ratio: float = 1.0002, n_core: int = 16000) -> RadialGrid:
    """Graded grid resolving both the core (bending length of the profile) and the exp tail."""
    f = _kernels.nonlinearity(height, params.omega, params.p, params.crit)
    bend = math.sqrt(3.0 * height / max(abs(f), 1e-300))
    R = shooting_radius(params.omega)
    return graded_grid(R, 4.0 * bend, ratio, n_core, params.d)


def _bisect_height(params, lo, hi, branch, r_end):
    over_lo = crossing_class(params, lo, branch + 1, r_end) > branch
    over_hi = crossing_class(params, hi, branch + 1, r_end) > branch
    if over_lo == over_hi:
        raise ValueError(f"invalid bracket ({lo:g}, {hi:g}): both endpoints on the same side")
    for _ in range(200):
        if hi / lo - 1.0 <= 1e-12:
            break
        mid = math.sqrt(lo * hi)
        if mid <= lo or mid >= hi:
            break
        if (crossing_class(params, mid, branch + 1, r_end) > branch) == over_lo:
            lo = mid
        else:
            hi = mid
    # (under, over)
    return (hi, lo) if over_lo else (lo, hi)


def find_positive_solution(
    params: ModelParams,
    bracket: Tuple[float, float],
    branch: int = 0,
    grid: Optional[RadialGrid] = None,
    tol_rel: float = TOL_REL,
    check: bool = True,
) -> GroundStateCandidate:
    """Bisect the height inside ``bracket`` and build the decaying solution with a matched tail.

    The endpoints may come in either order of classification.  Raises
    ValueError for an invalid bracket and ResidualToleranceError when the
    Nehari or Pohozaev residual exceeds ``tol_rel``.
    """
    lo, hi = sorted(float(x) for x in bracket)
    if not lo > 0.0:
        raise ValueError("heights must be positive")
    r_end = shooting_radius(params.omega)
    h_under, h_over = _bisect_height(params, lo, hi, branch, r_end)
    height = h_under
    sharpness = abs(h_over / h_under - 1.0)
    if grid is None:
        grid = solution_grid(params, height)
    nodes = grid.nodes
    (_, _, _, _, _, n_under), u_a, v_a = _integrate(params, h_under, grid.R, branch, nodes)
    (_, _, _, _, _, n_over), u_b, _ = _integrate(params, h_over, grid.R, branch, nodes)

    n_ok = max(min(n_under, n_over), 2)
    ua, ub = u_a[:n_ok], u_b[:n_ok]
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(ua - ub) / np.abs(ua)
    zeros = np.flatnonzero(np.signbit(ua[1:]) != np.signbit(ua[:-1]))
    last_zero = zeros[branch - 1] + 1 if branch and zeros.size >= branch else 0
    if branch and zeros.size < branch:
        raise NoSolutionError("solution did not develop the expected number of zeros")
    stop = n_ok - 1
    departed = np.flatnonzero(rel[last_zero:] > 1e-6)
    if departed.size:
        stop = min(stop, last_zero + departed[0] - 1)
    # the linear tail is exact once the nonlinear terms are negligible against omega u
    au = np.abs(ua[last_zero:])
    small = np.flatnonzero(au ** (params.p - 1.0) + au ** (params.crit - 2.0) < LINEAR_TAIL_TOL * params.omega)
    if small.size:
        stop = min(stop, last_zero + small[0])
    stop = min(stop, int(np.searchsorted(nodes, 0.5 * grid.R)))
    if stop <= last_zero + 8:
        raise NoSolutionError("trajectory departs before a decaying tail forms")

    r = nodes
    rm, um = r[stop], ua[stop]
    k = math.sqrt(params.omega)
    values = np.empty(r.size)
    slope = np.empty(r.size)
    values[: stop + 1] = ua[: stop + 1]
    slope[: stop + 1] = v_a[: stop + 1]
    rt = r[stop + 1 :]
    values[stop + 1 :] = um * (rm / rt) * np.exp(-k * (rt - rm))
    slope[stop + 1 :] = values[stop + 1 :] * (-k - 1.0 / rt)

    # fitted decay over the window where |u| < 1e-3 height
    window = np.arange(last_zero, stop + 1)
    window = window[np.abs(ua[window]) < 1e-3 * height]
    if window.size < 8:
        window = np.arange(last_zero + (stop - last_zero) * 4 // 5, stop + 1)
    coef = np.polyfit(r[window], np.log(np.abs(ua[window]) * r[window]), 1)
    decay_rate = -float(coef[0])

    fld = RadialField(grid, values, slope)
    report = evaluate_functionals(fld, params)
    coarse = evaluate_functionals(fld.coarsen(), params)
    cand = GroundStateCandidate(
        params=params,
        field=fld,
        height=height,
        report=report,
        decay_rate=decay_rate,
        branch_index=branch,
        action_error=abs(report.action - coarse.action) / 3.0,
        match_radius=float(rm),
        bisection_sharpness=sharpness,
        tail_flatness=abs(decay_rate - k),
        coarse_report=coarse,
    )
    if check:
        bad = []
        if cand.nehari_residual > tol_rel:
            bad.append(f"Nehari residual {cand.nehari_residual:.3e}")
        if params.d == 3 and cand.pohozaev_residual > tol_rel:
            bad.append(f"Pohozaev residual {cand.pohozaev_residual:.3e}")
        if bad:
            raise ResidualToleranceError("; ".join(bad) + f" exceed {tol_rel:g}", cand)
    return cand


def scan_heights(params: ModelParams, max_branches: int = 0, n_scan: int = 120, h_max: float = 1e5):
    """Crossing classes on a logarithmic height grid from the equilibrium height up to h_max."""
    u_star = equilibrium_height(params)
    heights = np.geomspace(u_star * (1.0 + 1e-6), max(h_max, 10.0 * u_star), n_scan)
    r_end = shooting_radius(params.omega)
    classes = np.array([crossing_class(params, h, max_branches + 1, r_end) for h in heights])
    return heights, classes


def branch_brackets(heights, classes, max_branches: int):
    """(branch, (h_a, h_b)) for every class change k | k+1 ... on the scan."""
    out = []
    for i in range(len(heights) - 1):
        a, b = int(classes[i]), int(classes[i + 1])
        for k in range(min(a, b), max(a, b)):
            if k <= max_branches:
                out.append((k, (float(heights[i]), float(heights[i + 1]))))
    return out


def _solve_brackets(params, max_branches, n_scan, grid, tol_rel):
    heights, classes = scan_heights(params, max_branches, n_scan)
    found, rejected = [], []
    for branch, bracket in branch_brackets(heights, classes, max_branches):
        try:
            found.append(find_positive_solution(params, bracket, branch, grid=grid, tol_rel=tol_rel))
        except (ResidualToleranceError, NoSolutionError) as exc:
            log.warning("branch %d bracket %s rejected: %s", branch, bracket, exc)
            rejected.append(exc)
    return found, rejected


def all_solutions(
    params: ModelParams,
    max_branches: int = 0,
    n_scan: int = 120,
    *,
    grid: Optional[RadialGrid] = None,
    tol_rel: float = TOL_REL,
) -> List[GroundStateCandidate]:
    return _solve_brackets(params, max_branches, n_scan, grid, tol_rel)[0]


def min_action_solution(
    params: ModelParams,
    max_branches: int = 1,
    n_scan: int = 120,
    *,
    grid: Optional[RadialGrid] = None,
    tol_rel: float = TOL_REL,
) -> GroundStateCandidate:
    """Least-action decaying solution over branches 0..max_branches (a radial estimate of m^S).

    Raises NoSolutionError when no branch yields a decaying solution and
    ResidualToleranceError when candidates were found but all failed the
    residual checks (typically an under-resolved explicit grid).
    """
    if max_branches < 0:
        raise ValueError("max_branches must be >= 0")
    found, rejected = _solve_brackets(params, max_branches, n_scan, grid, tol_rel)
    if not found:
        residual = [e for e in rejected if isinstance(e, ResidualToleranceError)]
        if residual:
            raise ResidualToleranceError(
                f"all candidates for p={params.p}, omega={params.omega} failed residual checks: {residual[0]}",
                residual[0].candidate,
            )
        raise NoSolutionError(f"no decaying radial solution for p={params.p}, omega={params.omega}")
    return min(found, key=lambda c: c.action)
