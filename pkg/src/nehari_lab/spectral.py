"""Linearized operators L_+/- = -Delta + V_+/- around the Talenti profile (d = 3, radial sector).

Operators are discretised with the symmetric finite-volume stiffness of
:mod:`nehari_lab.grid`, so K + diag(w V) is symmetric and the generalized
eigenproblem (K + wV) u = lambda w u reduces to the symmetric tridiagonal
matrix A = w^{-1/2} (K + wV) w^{-1/2}.  Resolvent pairings use the same
discretisation through :func:`solve_helmholtz`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import solve_banded

from . import _kernels
from .grid import (
    RadialField,
    RadialGrid,
    apply_laplacian,
    graded_grid,
    integrate,
    make_grid,
    pairing,
    solve_helmholtz,
    stiffness_bands,
)
from .model import lambda_w, talenti, talenti_profile, talenti_slope

LPLUS = "Lplus"
LMINUS = "Lminus"
TAIL_RULE = 50.0  # required R * sqrt(alpha)


class ConvergenceError(RuntimeError):
    """Inverse iteration did not converge."""


class GridTooSmallError(ValueError):
    """Truncation radius violates R sqrt(alpha) >= 50."""


def _require_d3(grid: RadialGrid):
    if grid.d != 3:
        raise ValueError("the linearized operators are implemented for d = 3")


def potentials(grid: RadialGrid) -> Tuple[RadialField, RadialField]:
    """(V_+, V_-) = (-5 W^4, -W^4)."""
    _require_d3(grid)
    w4 = talenti_profile(grid.nodes) ** 4
    return grid.field(-5.0 * w4), grid.field(-w4)


def _potential(which: str, grid: RadialGrid) -> np.ndarray:
    vp, vm = potentials(grid)
    if which == LPLUS:
        return vp.values
    if which == LMINUS:
        return vm.values
    if which == "free":
        return np.zeros(grid.nodes.size)
    raise ValueError(f"unknown operator {which!r}")


def operator_bands(which: str, grid: RadialGrid):
    """Symmetric tridiagonal (diag, off) of w^{-1/2}(K + wV)w^{-1/2} on nodes 0..N-1."""
    diag, off = stiffness_bands(grid)
    w = grid.quad_weights[:-1]
    V = _potential(which, grid)[:-1]
    sw = np.sqrt(w)
    return diag / w + V, off / (sw[:-1] * sw[1:])


def _sturm_bisect(diag, off, index: int, lo: float, hi: float, tol: float) -> float:
    """Eigenvalue number ``index`` (0-based, ascending) by Sturm-count bisection."""
    while hi - lo > tol * max(1.0, abs(lo), abs(hi)):
        mid = 0.5 * (lo + hi)
        if _kernels.sturm_count(diag, off, mid) > index:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _shifted_solve(diag, off, shift, rhs):
    ab = np.zeros((3, diag.size))
    ab[0, 1:] = off
    ab[1] = diag - shift
    ab[2, :-1] = off
    return solve_banded((1, 1), ab, rhs)


def _tridiag_matvec(diag, off, x):
    y = diag * x
    y[:-1] += off * x[1:]
    y[1:] += off * x[:-1]
    return y


@dataclass
class EigenPairs:
    which: str
    values: np.ndarray
    vectors: np.ndarray  # columns: eigenfunctions sampled on nodes 0..N (u_N = 0), w-normalized
    grid: RadialGrid = field(repr=False)

    def function(self, i: int) -> RadialField:
        return self.grid.field(self.vectors[:, i])


def lowest_eigenpairs(which: str, k: int, grid: RadialGrid, *, tol: float = 1e-12, max_iter: int = 50) -> EigenPairs:
    """k smallest eigenpairs of the truncated radial operator (Dirichlet at R).

    Sturm-count bisection isolates each eigenvalue to ~1e-9; shifted inverse
    iteration with deflation against the previously found vectors then
    converges the eigenvector and its Rayleigh quotient.
    """
    _require_d3(grid)
    if k < 1:
        raise ValueError("k must be >= 1")
    diag, off = operator_bands(which, grid)
    n = diag.size
    if k > n:
        raise ValueError("k exceeds the number of unknowns")
    # Gershgorin bounds
    rad = np.zeros(n)
    rad[:-1] += np.abs(off)
    rad[1:] += np.abs(off)
    lo, hi = float(np.min(diag - rad)), float(np.max(diag + rad))
    rng = np.random.default_rng(12345)
    values, vecs = [], []
    for i in range(k):
        lam = _sturm_bisect(diag, off, i, lo, hi, 1e-10)
        gap = 1e-9 * max(1.0, abs(lam))
        x = rng.standard_normal(n)
        rq_old = math.inf
        for it in range(max_iter):
            for v in vecs:
                x -= (v @ x) * v
            x /= np.linalg.norm(x)
            y = _shifted_solve(diag, off, lam - gap, x)
            for v in vecs:
                y -= (v @ y) * v
            x = y / np.linalg.norm(y)
            rq = float(x @ _tridiag_matvec(diag, off, x))
            if abs(rq - rq_old) <= tol * max(1.0, abs(rq)):
                break
            rq_old = rq
        else:
            raise ConvergenceError(f"inverse iteration for eigenvalue {i} of {which} did not converge")
        values.append(rq)
        vecs.append(x)
    w = grid.quad_weights[:-1]
    U = np.zeros((grid.nodes.size, k))
    for j, x in enumerate(vecs):
        u = x / np.sqrt(w)
        if u[np.argmax(np.abs(u))] < 0:
            u = -u
        U[:-1, j] = u
    return EigenPairs(which, np.array(values), U, grid)


def lowest_eigenvalues(which: str, k: int, grid: RadialGrid) -> List[float]:
    return [float(v) for v in lowest_eigenpairs(which, k, grid).values]


def correlation(f: RadialField, g: RadialField, r_max: Optional[float] = None) -> float:
    """|<f, g>| / (||f|| ||g||) in L^2(R^3), optionally restricted to r <= r_max."""
    mask = np.ones(f.grid.nodes.size) if r_max is None else (f.grid.nodes <= r_max).astype(float)
    w = f.grid.quad_weights * mask
    fg = np.dot(w, f.values * g.values)
    return abs(fg) / math.sqrt(np.dot(w, f.values**2) * np.dot(w, g.values**2))


# --- kernel identities -------------------------------------------------------


def _interior_norm(grid: RadialGrid, values: np.ndarray, mask: np.ndarray) -> float:
    return math.sqrt(float(np.dot(grid.quad_weights[mask], values[mask] ** 2)))


def kernel_residuals(grid: RadialGrid, r_interior: Optional[float] = None) -> Dict[str, float]:
    """Relative interior residuals of the zero-energy identities.

    lminus_W:   (-Delta + V_-) W          relative to ||Delta W||
    lplus_LW:   (-Delta + V_+) Lambda W   relative to ||Delta Lambda W||
    ell1_dW:    ell = 1 reduction -phi'' - (2/r) phi' + (2/r^2) phi + V_+ phi with phi = W'
                relative to ||V_+ phi||
    Norms are discrete L^2 over 0 < r <= r_interior (default R/2); the
    Laplacian is the three-point stencil.
    """
    _require_d3(grid)
    r = grid.nodes
    r_int = grid.R / 2.0 if r_interior is None else r_interior
    mask = (r > 0.0) & (r <= r_int)
    vp, vm = potentials(grid)
    W = talenti(grid)
    LW = lambda_w(grid)
    phi = grid.field(talenti_slope(r))
    lapW = apply_laplacian(W).values
    lapLW = apply_laplacian(LW).values
    lapphi = apply_laplacian(phi).values
    with np.errstate(divide="ignore", invalid="ignore"):
        ell1 = -lapphi + np.where(r > 0, 2.0 * phi.values / r**2, 0.0) + vp.values * phi.values
    res = {
        "lminus_W": _interior_norm(grid, -lapW + vm.values * W.values, mask) / _interior_norm(grid, lapW, mask),
        "lplus_LW": _interior_norm(grid, -lapLW + vp.values * LW.values, mask) / _interior_norm(grid, lapLW, mask),
        "ell1_dW": _interior_norm(grid, ell1, mask) / _interior_norm(grid, vp.values * phi.values, mask),
    }
    return res


def kernel_residual_orders(R: float = 20.0, n_coarse: int = 200, n_fine: int = 800) -> Dict[str, dict]:
    """Residuals on two uniform grids and the observed convergence order."""
    coarse = kernel_residuals(make_grid(R, n_coarse))
    fine = kernel_residuals(make_grid(R, n_fine))
    out = {}
    for key in coarse:
        ratio = coarse[key] / fine[key]
        out[key] = {
            "coarse": coarse[key],
            "fine": fine[key],
            "ratio": ratio,
            "order": math.log(ratio) / math.log(n_fine / n_coarse),
        }
    return out


# --- resolvent pairings ------------------------------------------------------


def resolvent_grid(alpha: float, *, ratio: float = 1.005, n_core: int = 800, margin: float = 60.0) -> RadialGrid:
    """Graded grid with R sqrt(alpha) = margin (>= 50) and a resolved core."""
    R = max(margin / math.sqrt(alpha), 20.0)
    return graded_grid(R, 4.0, ratio, n_core)


def _check_tail(alpha: float, grid: RadialGrid):
    if not alpha > 0.0:
        raise ValueError("alpha must be positive")
    if grid.R * math.sqrt(alpha) < TAIL_RULE:
        raise GridTooSmallError(
            f"R sqrt(alpha) = {grid.R * math.sqrt(alpha):.3g} < {TAIL_RULE:g}; enlarge the grid"
        )


def _vplus_lambda_w(grid: RadialGrid) -> RadialField:
    vp, _ = potentials(grid)
    return grid.field(vp.values * lambda_w(grid).values)


def pairing_lambda(alpha: float, grid: Optional[RadialGrid] = None, *, swapped: bool = False) -> float:
    """alpha^{1/2} <W, (-Delta + alpha)^{-1} V_+ Lambda W>.

    ``swapped=True`` evaluates <V_+ Lambda W, (-Delta + alpha)^{-1} W> instead
    (same value for the self-adjoint resolvent).
    """
    grid = resolvent_grid(alpha) if grid is None else grid
    _check_tail(alpha, grid)
    W = talenti(grid)
    f = _vplus_lambda_w(grid)
    if swapped:
        return math.sqrt(alpha) * pairing(f, solve_helmholtz(W, alpha))
    return math.sqrt(alpha) * pairing(W, solve_helmholtz(f, alpha))


def pairing_wp(alpha: float, p: float, grid: Optional[RadialGrid] = None, *, swapped: bool = False) -> float:
    """<W^p, (-Delta + alpha)^{-1} V_+ Lambda W>."""
    if not p > 1.0:
        raise ValueError("p must exceed 1")
    grid = resolvent_grid(alpha) if grid is None else grid
    _check_tail(alpha, grid)
    Wp = grid.field(talenti_profile(grid.nodes) ** p)
    f = _vplus_lambda_w(grid)
    if swapped:
        return pairing(f, solve_helmholtz(Wp, alpha))
    return pairing(Wp, solve_helmholtz(f, alpha))


def wp_limit_from_identity(p: float, grid: RadialGrid) -> float:
    """-<W^p, Lambda W> = (5-p)/(2(p+1)) ||W||_{p+1}^{p+1}: the alpha -> 0 limit of pairing_wp for 2 < p < 5.

    Follows from (-Delta)^{-1} V_+ Lambda W = -Lambda W (L_+ Lambda W = 0).
    """
    W = talenti(grid).values
    return (5.0 - p) / (2.0 * (p + 1.0)) * integrate(grid, W ** (p + 1.0))


def pairing_generic(alpha: float, g: RadialField, side: str = "LambdaW") -> float:
    """<(-Delta + alpha)^{-1} V_+ g, Lambda W> or its ell = 1 analogue against W'.

    For ``side="GradW"`` the profile g is read as the radial part of an
    ell = 1 field g(r) x_j / r; the resolvent acts in the ell = 1 sector and
    the pairing is taken with the radial part W' of d_j W (angular factor
    omitted).
    """
    grid = g.grid
    _check_tail(alpha, grid)
    vp, _ = potentials(grid)
    f = grid.field(vp.values * g.values)
    if side == "LambdaW":
        return pairing(solve_helmholtz(f, alpha), lambda_w(grid))
    if side == "GradW":
        return pairing(solve_helmholtz(f, alpha, ell=1), grid.field(talenti_slope(grid.nodes)))
    raise ValueError("side must be 'LambdaW' or 'GradW'")


@dataclass(frozen=True)
class PairingFit:
    """value(alpha) ~ coef alpha^{-1/2} + c0 + c1 alpha^{1/2} log alpha + c2 alpha^{1/2}.

    A_+ = -coef / int V_+ g.  The alpha^{1/2} log alpha term comes from the
    logarithmically divergent second moment of V_+ g ~ r^{-5}.
    """

    coef: float
    coef_err: float
    a_plus: float
    remainder_bound: float
    integral_vg: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def fit_divergent_coefficient(alphas: Sequence[float], values: Sequence[float], integral_vg: float) -> PairingFit:
    a = np.asarray(alphas, float)
    v = np.asarray(values, float)
    if a.size < 5:
        raise ValueError("need at least five alphas for the fit")
    s = np.sqrt(a)
    X = np.column_stack([1.0 / s, np.ones_like(a), s * np.log(a), s])
    # column scaling keeps the normal equations well conditioned
    scale = np.linalg.norm(X, axis=0)
    coef, _, rank, _ = np.linalg.lstsq(X / scale, v, rcond=None)
    if rank < X.shape[1]:
        raise ValueError("ill-conditioned fit")
    coef = coef / scale
    dof = max(a.size - X.shape[1], 1)
    resid = v - X @ coef
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.inv(X.T @ X)
    coef_err = math.sqrt(max(cov[0, 0], 0.0)) + 1e-9 * abs(coef[0])
    a_plus = -coef[0] / integral_vg if abs(integral_vg) > 1e-9 else float("nan")
    remainder = float(np.max(np.abs(v - coef[0] / s)))
    return PairingFit(float(coef[0]), coef_err, float(a_plus), remainder, float(integral_vg))


DEFAULT_FIT_ALPHAS = tuple(np.geomspace(1e-2, 1e-5, 7))


def fit_a_plus(make_g, alphas: Sequence[float], **grid_kw) -> PairingFit:
    """Sweep pairing_generic(alpha, g, LambdaW) and fit the alpha^{-1/2} law.

    ``make_g(grid)`` returns the field g on the grid built for each alpha (a
    plain callable r -> g(r) is also accepted).
    """
    values = []
    integrals = []
    for a in alphas:
        grid = resolvent_grid(a, **grid_kw)
        g = make_g(grid) if _takes_grid(make_g) else grid.field(make_g(grid.nodes))
        values.append(pairing_generic(a, g, "LambdaW"))
        vp, _ = potentials(grid)
        integrals.append(integrate(grid, vp.values * g.values))
    return fit_divergent_coefficient(alphas, values, float(np.mean(integrals)))


def _takes_grid(fn) -> bool:
    return getattr(fn, "takes_grid", False)


def zero_vplus_moment(profile, bump=lambda r: np.exp(-r * r)):
    """g = profile - c bump with c chosen on each grid so that int V_+ g = 0."""

    def make(grid: RadialGrid) -> RadialField:
        vp, _ = potentials(grid)
        a, b = profile(grid.nodes), bump(grid.nodes)
        c = integrate(grid, vp.values * a) / integrate(grid, vp.values * b)
        return grid.field(a - c * b)

    make.takes_grid = True
    return make


@dataclass(frozen=True)
class Extrapolation:
    limit: float
    error: float
    alphas: Tuple[float, ...]
    values: Tuple[float, ...]

    def as_dict(self) -> dict:
        return {"limit": self.limit, "error": self.error, "alphas": list(self.alphas), "values": list(self.values)}


def richardson_sqrt_alpha(alphas: Sequence[float], values: Sequence[float]) -> Extrapolation:
    """Polynomial extrapolation in s = sqrt(alpha) to s = 0.

    Uses the interpolating polynomial through all samples; the error is the
    difference from the linear extrapolation through the two smallest alphas.
    """
    a = np.asarray(alphas, float)
    v = np.asarray(values, float)
    order = np.argsort(a)
    a, v = a[order], v[order]
    s = np.sqrt(a)
    coeffs = np.polyfit(s, v, a.size - 1)
    limit = float(np.polyval(coeffs, 0.0))
    lin = float(v[0] - s[0] * (v[1] - v[0]) / (s[1] - s[0])) if a.size >= 2 else float(v[0])
    return Extrapolation(limit, abs(limit - lin), tuple(a), tuple(v))


def extrapolate_pairing_lambda(alphas: Sequence[float] = (1e-2, 1e-3, 1e-4), **grid_kw) -> Extrapolation:
    vals = [pairing_lambda(a, resolvent_grid(a, **grid_kw)) for a in alphas]
    return richardson_sqrt_alpha(alphas, vals)


def fit_limit_log_sqrt(alphas: Sequence[float], values: Sequence[float]) -> Extrapolation:
    """Least-squares limit with basis [1, sqrt(a) log a, sqrt(a), a].

    Suited to pairings against W^p with p >= 3, whose remainder carries a
    sqrt(alpha) log alpha term.  The error is the change in the limit when the
    alpha term is dropped.
    """
    a = np.asarray(alphas, float)
    v = np.asarray(values, float)
    if a.size < 5:
        raise ValueError("need at least five alphas")
    order = np.argsort(a)
    a, v = a[order], v[order]
    s = np.sqrt(a)
    full = np.column_stack([np.ones_like(a), s * np.log(a), s, a])
    limit = float(np.linalg.lstsq(full, v, rcond=None)[0][0])
    reduced = float(np.linalg.lstsq(full[:, :3], v, rcond=None)[0][0])
    return Extrapolation(limit, abs(limit - reduced), tuple(a), tuple(v))


WP_FIT_ALPHAS = tuple(float(a) for a in np.geomspace(1e-2, 1e-5, 7))


def extrapolate_pairing_wp(p: float, alphas: Sequence[float] = WP_FIT_ALPHAS, **grid_kw) -> Extrapolation:
    vals = [pairing_wp(a, p, resolvent_grid(a, **grid_kw)) for a in alphas]
    return fit_limit_log_sqrt(alphas, vals)


def growth_exponent(alphas: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of log|value| against log alpha."""
    return float(np.polyfit(np.log(alphas), np.log(np.abs(values)), 1)[0])


# --- G(alpha) analogue -------------------------------------------------------


def g_alpha_matrix(alpha: float, grid: RadialGrid, potential: Optional[np.ndarray] = None) -> np.ndarray:
    """Dense I + (-Delta + alpha)^{-1} V_+ in coordinates orthonormal for the quadrature pairing.

    With w the weights, the discrete resolvent is (K + alpha w)^{-1} w; the
    similarity w^{1/2} . w^{-1/2} makes the L^2 norm Euclidean.
    """
    if grid.N > 2000:
        raise ValueError("dense assembly is capped at N = 2000 cells")
    diag, off = stiffness_bands(grid)
    w = grid.quad_weights[:-1]
    V = potentials(grid)[0].values[:-1] if potential is None else np.asarray(potential)[:-1]
    n = diag.size
    A = np.diag(diag + alpha * w) + np.diag(off, 1) + np.diag(off, -1)
    sw = np.sqrt(w)
    H = sw[:, None] * np.linalg.solve(A, np.diag(sw))
    return np.eye(n) + H * V[None, :]


def g_alpha_inverse_norms(alpha: float, grid: Optional[RadialGrid] = None, *, potential=None) -> Tuple[float, float]:
    """(general, orthogonal) L^2 operator norms of G(alpha)^{-1} on the radial sector.

    ``orthogonal`` restricts to {f : <f, V_+ Lambda W> = 0}.  Qualitative L^2
    analogue of the L^r statement for r > 6.
    """
    grid = _g_grid(alpha) if grid is None else grid
    _require_d3(grid)
    T = g_alpha_matrix(alpha, grid, potential)
    try:
        Ti = np.linalg.inv(T)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular G(alpha) assembly") from exc
    general = float(np.linalg.norm(Ti, 2))
    q = np.sqrt(grid.quad_weights[:-1]) * _vplus_lambda_w(grid).values[:-1]
    q /= np.linalg.norm(q)
    orth = float(np.linalg.norm(Ti - np.outer(Ti @ q, q), 2))
    return general, orth


def g_alpha_inverse_norm_sup(alpha: float, grid: Optional[RadialGrid] = None) -> float:
    """L^infty operator norm of G(alpha)^{-1} on the radial sector (max absolute row sum).

    Supplementary diagnostic: unlike L^2, the resonance direction has bounded
    sup norm, so this tracks the alpha^{-1/2} law of the L^r (r > 6) setting.
    """
    grid = _g_grid(alpha) if grid is None else grid
    _require_d3(grid)
    w = grid.quad_weights[:-1]
    sw = np.sqrt(w)
    T = g_alpha_matrix(alpha, grid)
    # undo the w^{1/2} similarity to return to nodal values
    Tn = T * sw[None, :] / sw[:, None]
    Ti = np.linalg.inv(Tn)
    return float(np.max(np.abs(Ti).sum(axis=1)))


def _g_grid(alpha: float) -> RadialGrid:
    return graded_grid(max(60.0 / math.sqrt(alpha), 20.0), 4.0, 1.01, 400)


# --- assembled report --------------------------------------------------------


@dataclass
class SpectralReport:
    alphas: List[float]
    pairing_lambda: List[float]
    pairing_wp: Dict[float, List[float]]
    extrapolated_limits: Dict[str, dict]
    eigen_lplus: List[float]
    eigen_lminus: List[float]
    kernel_residuals: Dict[str, dict]
    inverse_norms: List[Tuple[float, float, float]]
    extras: Dict[str, object] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "alphas": self.alphas,
            "pairing_lambda": self.pairing_lambda,
            "pairing_wp": {str(k): v for k, v in self.pairing_wp.items()},
            "extrapolated_limits": self.extrapolated_limits,
            "eigen_lplus": self.eigen_lplus,
            "eigen_lminus": self.eigen_lminus,
            "kernel_residuals": self.kernel_residuals,
            "inverse_norms": [list(t) for t in self.inverse_norms],
            "extras": self.extras,
        }


def eigen_grid(N: int = 4000, R: float = 200.0) -> RadialGrid:
    return make_grid(R, N, "geometric", core=10.0, ratio=1.002)


def spectral_report(
    alphas: Sequence[float] = (1e-2, 1e-3, 1e-4),
    *,
    powers: Sequence[float] = (3.0,),
    k: int = 2,
    checks: Sequence[str] = ("pairing", "eig", "kernel", "galpha"),
    inverse_alphas: Sequence[float] = (1e-1, 1e-2, 1e-3),
) -> SpectralReport:
    alphas = [float(a) for a in sorted(alphas, reverse=True)]
    rep = SpectralReport(alphas, [], {}, {}, [], [], {}, [])
    if "pairing" in checks:
        grids = {a: resolvent_grid(a) for a in alphas}
        rep.pairing_lambda = [pairing_lambda(a, grids[a]) for a in alphas]
        rep.extrapolated_limits["pairing_lambda"] = richardson_sqrt_alpha(alphas, rep.pairing_lambda).as_dict()
        for p in powers:
            rep.pairing_wp[float(p)] = [pairing_wp(a, p, grids[a]) for a in alphas]
            ext = extrapolate_pairing_wp(p)
            d = ext.as_dict()
            d["identity_value"] = wp_limit_from_identity(p, resolvent_grid(min(WP_FIT_ALPHAS)))
            rep.extrapolated_limits[f"pairing_wp_p{p:g}"] = d
    if "eig" in checks:
        g = eigen_grid()
        rep.eigen_lplus = lowest_eigenvalues(LPLUS, k, g)
        rep.eigen_lminus = lowest_eigenvalues(LMINUS, k, g)
    if "kernel" in checks:
        rep.kernel_residuals = kernel_residual_orders()
    if "galpha" in checks:
        rep.inverse_norms = [(a,) + g_alpha_inverse_norms(a) for a in inverse_alphas]
    return rep
