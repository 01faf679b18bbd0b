"""Model parameters, the Talenti bubble family and the variational functionals."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.integrate import quad

from .grid import (
    RadialField,
    RadialGrid,
    gradient_sq_norm,
    integrate,
    sphere_area,
)


def critical_exponent(d: int) -> float:
    """2d/(d-2)."""
    return 2.0 * d / (d - 2.0)


def critical_level(d: int = 3) -> float:
    """sigma^{d/2} = ||grad W||^2 = ||W||_{2*}^{2*} for the Talenti function with W(0) = 1.

    Closed form (d(d-2)/4)^{d/2} |S^d|, where |S^d| is the area of the unit
    d-sphere; equals (3 sqrt 3 / 4) pi^2 in three dimensions.
    """
    return (d * (d - 2) / 4.0) ** (d / 2.0) * sphere_area(d + 1)


def m_infinity(d: int = 3) -> float:
    return critical_level(d) / d


@dataclass(frozen=True)
class ModelParams:
    p: float
    omega: float
    d: int = 3

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 3:
            raise ValueError(f"dimension must be an integer >= 3, got {self.d}")
        upper = (self.d + 2.0) / (self.d - 2.0)
        if not 1.0 < self.p < upper:
            raise ValueError(f"need 1 < p < {upper:g}, got p = {self.p}")
        if not self.omega > 0.0 or not math.isfinite(self.omega):
            raise ValueError(f"omega must be positive, got {self.omega}")

    @property
    def crit(self) -> float:
        return critical_exponent(self.d)

    def with_omega(self, omega: float) -> "ModelParams":
        return ModelParams(self.p, omega, self.d)


@dataclass(frozen=True)
class FunctionalReport:
    grad_sq: float
    mass: float
    lp_power: float
    crit_power: float
    action: float
    nehari: float
    k_val: float
    j_val: float
    h_dag: float
    n_dag: float
    pohozaev: Optional[float]

    def as_dict(self) -> dict:
        return asdict(self)


def functionals_from_norms(G, M, L, C, params: ModelParams) -> FunctionalReport:
    """Assemble every functional from the four norm powers."""
    p, om, d = params.p, params.omega, params.d
    crit_coef = (d - 2.0) / (2.0 * d)
    action = 0.5 * G + 0.5 * om * M - L / (p + 1.0) - crit_coef * C
    nehari = G + om * M - L - C
    k_val = G - d * (p - 1.0) / (2.0 * (p + 1.0)) * L - C
    j_val = (0.5 - 1.0 / (p + 1.0)) * L + C / d
    pohozaev = om * M - (5.0 - p) / (2.0 * (p + 1.0)) * L if d == 3 else None
    return FunctionalReport(
        grad_sq=G,
        mass=M,
        lp_power=L,
        crit_power=C,
        action=action,
        nehari=nehari,
        k_val=k_val,
        j_val=j_val,
        h_dag=0.5 * G - crit_coef * C,
        n_dag=G - C,
        pohozaev=pohozaev,
    )


def norm_powers(u: RadialField, params: ModelParams):
    grid = u.grid
    a = np.abs(u.values)
    G = gradient_sq_norm(u)
    M = integrate(grid, a * a)
    L = integrate(grid, a ** (params.p + 1.0))
    C = integrate(grid, a ** params.crit)
    return G, M, L, C


def evaluate_functionals(u: RadialField, params: ModelParams) -> FunctionalReport:
    """S, N, K, J, H, N-dagger and the Pohozaev residual from one quadrature pass.

    The Pohozaev residual omega ||u||_2^2 - (5-p)/(2(p+1)) ||u||_{p+1}^{p+1}
    is only defined for d = 3 and is None otherwise.
    """
    if u.grid.d != params.d:
        raise ValueError("grid dimension does not match model dimension")
    return functionals_from_norms(*norm_powers(u, params), params)


# --- amplitude projections -------------------------------------------------


def scaling_root(a: float, b: float, b_exp: float, c: float, c_exp: float) -> float:
    """Unique t > 0 with a t^2 = b t^{b_exp} + c t^{c_exp}.

    Requires a > 0, b, c >= 0, b + c > 0 and 2 < b_exp, c_exp, so that
    g(t) = a - b t^{b_exp-2} - c t^{c_exp-2} decreases strictly from a to -inf.
    Geometric bracketing, bisection, then Newton polish.
    """
    if not a > 0.0:
        raise ValueError("quadratic coefficient must be positive")
    if b < 0.0 or c < 0.0 or not (b + c) > 0.0:
        raise ValueError("no positive root: nonlinear coefficients vanish")
    e1, e2 = b_exp - 2.0, c_exp - 2.0

    def g(t):
        return a - b * t**e1 - c * t**e2

    lo = hi = 1.0
    while g(hi) > 0.0:
        hi *= 2.0
    while g(lo) < 0.0:
        lo *= 0.5
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * hi:
            break
    t = 0.5 * (lo + hi)
    for _ in range(3):
        dg = -e1 * b * t ** (e1 - 1.0) - e2 * c * t ** (e2 - 1.0)
        step = g(t) / dg
        if not math.isfinite(step):
            break
        t_new = t - step
        if not lo <= t_new <= hi:
            break
        t = t_new
    return t


def nehari_coefficients(G, M, L, C, params: ModelParams):
    return G + params.omega * M, L, C


def k_coefficients(G, M, L, C, params: ModelParams):
    d, p = params.d, params.p
    return G, d * (p - 1.0) / (2.0 * (p + 1.0)) * L, C


def _require_k_range(params: ModelParams):
    if not params.p > 1.0 + 4.0 / params.d:
        raise ValueError(f"K constraint requires p > 1 + 4/d = {1 + 4 / params.d:g}")


def nehari_project(u: RadialField, params: ModelParams):
    """(t, t u) with N_omega(t u) = 0."""
    G, M, L, C = norm_powers(u, params)
    a, b, c = nehari_coefficients(G, M, L, C, params)
    t = scaling_root(a, b, params.p + 1.0, c, params.crit)
    return t, t * u


def k_project(u: RadialField, params: ModelParams):
    """(t, t u) with K(t u) = 0; only for p > 1 + 4/d."""
    _require_k_range(params)
    G, M, L, C = norm_powers(u, params)
    a, b, c = k_coefficients(G, M, L, C, params)
    t = scaling_root(a, b, params.p + 1.0, c, params.crit)
    return t, t * u


# --- Talenti bubble ----------------------------------------------------------


def talenti_profile(r, d: int = 3):
    return (1.0 + np.asarray(r) ** 2 / (d * (d - 2.0))) ** (-(d - 2.0) / 2.0)


def talenti_slope(r, d: int = 3):
    r = np.asarray(r)
    return -(r / d) * (1.0 + r**2 / (d * (d - 2.0))) ** (-d / 2.0)


def talenti(grid: RadialGrid) -> RadialField:
    """W(r) = (1 + r^2/(d(d-2)))^{-(d-2)/2}, with its exact slope attached."""
    r = grid.nodes
    return RadialField(grid, talenti_profile(r, grid.d), talenti_slope(r, grid.d))


def lambda_w_profile(r):
    s = 1.0 + np.asarray(r) ** 2 / 3.0
    return (1.0 - np.asarray(r) ** 2 / 3.0) / (2.0 * s**1.5)


def lambda_w(grid: RadialGrid) -> RadialField:
    """Lambda W = W/2 + r W' from the closed form (three dimensions only)."""
    if grid.d != 3:
        raise ValueError("Lambda W is implemented for d = 3 only")
    r = grid.nodes
    s = 1.0 + r**2 / 3.0
    slope = r * (r**2 - 15.0) / (6.0 * s**2.5) / 3.0
    return RadialField(grid, lambda_w_profile(r), slope)


class SobolevConstants(NamedTuple):
    sigma_pow: float
    m_inf: float


def sobolev_constants(grid: RadialGrid) -> SobolevConstants:
    """sigma^{d/2} = ||grad W||^2 from grid quadrature plus the analytic far tail.

    Beyond R the bubble behaves like c r^{2-d}; the missing energy
    |S^{d-1}| (d-2) c^2 R^{2-d} is added with c fitted from the last node.
    """
    d = grid.d
    W = talenti(grid)
    W_fd = RadialField(grid, W.values)  # finite differences, as for any sampled field
    R = grid.R
    c = W.values[-1] * R ** (d - 2)
    tail = sphere_area(d) * (d - 2) * c * c * R ** (2 - d)
    sigma_pow = gradient_sq_norm(W_fd) + tail
    return SobolevConstants(sigma_pow, sigma_pow / d)


# --- scaling and cut-off bubbles ---------------------------------------------


def rescale(u: RadialField, nu: float) -> RadialField:
    """T_nu u (r) = nu^{-1} u(nu^{-2/(d-2)} r), returned on the correspondingly scaled grid.

    The grid is stretched instead of interpolating, so the gradient and
    critical norms are invariant up to rounding.
    """
    if not nu > 0.0:
        raise ValueError("nu must be positive")
    d = u.grid.d
    stretch = nu ** (2.0 / (d - 2.0))
    grid = RadialGrid(u.grid.nodes * stretch, d)
    slope = None if u.slope is None else u.slope / (nu * stretch)
    return RadialField(grid, u.values / nu, slope)


def cutoff(r):
    """chi: 1 on [0,1], cos^2 ramp on [1,2], 0 beyond; |chi'| <= pi/2."""
    r = np.asarray(r, dtype=float)
    ramp = np.cos(0.5 * np.pi * (r - 1.0)) ** 2
    return np.where(r <= 1.0, 1.0, np.where(r >= 2.0, 0.0, ramp))


def cutoff_slope(r):
    r = np.asarray(r, dtype=float)
    ramp = -0.5 * np.pi * np.sin(np.pi * (r - 1.0))
    return np.where((r > 1.0) & (r < 2.0), ramp, 0.0)


def scaled_talenti(r, eps):
    """W_eps(r) = eps^{-1} W(r/eps^2) written without overflow: sqrt3 eps / sqrt(3 eps^4 + r^2)."""
    r = np.asarray(r, dtype=float)
    return math.sqrt(3.0) * eps / np.sqrt(3.0 * eps**4 + r * r)


def scaled_talenti_slope(r, eps):
    r = np.asarray(r, dtype=float)
    return -math.sqrt(3.0) * eps * r / (3.0 * eps**4 + r * r) ** 1.5


def cutoff_bubble(eps: float, grid: RadialGrid) -> RadialField:
    """V_eps = chi(r) T_eps W sampled on the grid (d = 3).

    The core of T_eps W has width eps^2; it must span at least ten of the
    smallest cells.
    """
    if grid.d != 3:
        raise ValueError("cut-off bubbles are implemented for d = 3")
    if not eps > 0.0:
        raise ValueError("eps must be positive")
    if eps**2 < 10.0 * grid.spacing.min():
        raise ValueError(f"eps = {eps:g} is not resolved: core eps^2 spans fewer than 10 cells")
    r = grid.nodes
    W = scaled_talenti(r, eps)
    values = cutoff(r) * W
    slope = cutoff_slope(r) * W + cutoff(r) * scaled_talenti_slope(r, eps)
    return RadialField(grid, values, slope)


def _shell_integral(fn, a, b):
    """4 pi int_a^b fn(r) r^2 dr by adaptive quadrature on geometric subintervals."""
    if b <= a:
        return 0.0
    if a <= 0.0:
        edges = [0.0, min(1.0, b)]
        if b > 1.0:
            edges += list(np.geomspace(1.0, b, int(np.log10(b) * 4) + 2)[1:])
    else:
        edges = list(np.geomspace(a, b, int(np.log10(b / a) * 4) + 2))
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi > lo:
            total += quad(lambda r: fn(r) * r * r, lo, hi, epsabs=0.0, epsrel=1e-13, limit=200)[0]
    return 4.0 * math.pi * total


class BubbleNorms(NamedTuple):
    eps: float
    grad_sq: float
    grad_excess: float  # ||grad V_eps||^2 - sigma^{3/2}
    mass: float
    lp_power: float
    crit_power: float
    crit_deficit: float  # sigma^{3/2} - ||V_eps||_6^6


def bubble_norms(eps: float, p: float) -> BubbleNorms:
    """Norm powers of the cut-off bubble V_eps (d = 3) by adaptive quadrature.

    The core is integrated in the stretched variable s = r/eps^2, where it has
    unit width; the ramp [1, 2] and the far field in r.  The excess Dirichlet
    energy and the missing critical mass are integrated directly over r >= 1
    (the only place V_eps and T_eps W differ), which keeps them accurate far
    below the size of sigma^{3/2}.
    """
    if not eps > 0.0:
        raise ValueError("eps must be positive")
    sig = critical_level(3)
    s3 = math.sqrt(3.0)

    def W(r):
        return s3 * eps / math.sqrt(3.0 * eps**4 + r * r)

    def dW(r):
        return -s3 * eps * r / (3.0 * eps**4 + r * r) ** 1.5

    def chi(r):
        return math.cos(0.5 * math.pi * (r - 1.0)) ** 2

    def dchi(r):
        return -0.5 * math.pi * math.sin(math.pi * (r - 1.0))

    ramp_grad = _shell_integral(lambda r: (dchi(r) * W(r) + chi(r) * dW(r)) ** 2 - dW(r) ** 2, 1.0, 2.0)
    far_grad = 4.0 * math.pi * quad(lambda r: dW(r) ** 2 * r * r, 2.0, np.inf, epsabs=0.0, epsrel=1e-13)[0]
    grad_excess = ramp_grad - far_grad

    crit_deficit = _shell_integral(lambda r: (1.0 - chi(r) ** 6) * W(r) ** 6, 1.0, 2.0)
    crit_deficit += 4.0 * math.pi * quad(lambda r: W(r) ** 6 * r * r, 2.0, np.inf, epsabs=0.0, epsrel=1e-13)[0]

    def power(q):
        # core in s = r/eps^2: eps^{6-q} int_0^{1/eps^2} W(s)^q 4 pi s^2 ds
        core = _shell_integral(lambda s: (1.0 + s * s / 3.0) ** (-q / 2.0), 0.0, eps**-2)
        core *= eps ** (6.0 - q)
        ramp = _shell_integral(lambda r: (chi(r) * W(r)) ** q, 1.0, 2.0)
        return core + ramp

    return BubbleNorms(
        eps=eps,
        grad_sq=sig + grad_excess,
        grad_excess=grad_excess,
        mass=power(2.0),
        lp_power=power(p + 1.0),
        crit_power=sig - crit_deficit,
        crit_deficit=crit_deficit,
    )
