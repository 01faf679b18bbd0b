"""Radial discretisation of R^d: grids, sampled fields, quadrature, stencils, Helmholtz solves."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from . import _kernels

# Test hook: relative corruption applied to every other quadrature weight.
CORRUPTION_ENV = "NEHARI_LAB_WEIGHT_CORRUPTION"


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere S^{d-1}."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def ball_volume(R: float, d: int) -> float:
    return sphere_area(d) * R**d / d


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Nodes 0 = r_0 < ... < r_N = R with dual-cell quadrature weights.

    The weight of node i is the exact volume of the shell between the
    neighbouring midpoints (clipped to [0, R]), so summing the weights gives
    the ball volume up to rounding.
    """

    nodes: NDArray[np.float64]
    d: int = 3
    quad_weights: NDArray[np.float64] = field(init=False, repr=False)
    faces: NDArray[np.float64] = field(init=False, repr=False)

    def __post_init__(self):
        r = np.ascontiguousarray(self.nodes, dtype=float)
        if r.ndim != 1 or r.size < 3:
            raise ValueError("a radial grid needs at least three nodes")
        if r[0] != 0.0:
            raise ValueError("first node must be r = 0")
        if np.any(np.diff(r) <= 0.0):
            raise ValueError("nodes must be strictly increasing")
        if self.d < 3:
            raise ValueError("dimension must be >= 3")
        r.setflags(write=False)
        faces = np.concatenate(([0.0], 0.5 * (r[1:] + r[:-1]), [r[-1]]))
        w = sphere_area(self.d) * np.diff(faces**self.d) / self.d
        corruption = float(os.environ.get(CORRUPTION_ENV, "0") or 0.0)
        if corruption:
            w[1::2] *= 1.0 + corruption
        w.setflags(write=False)
        faces.setflags(write=False)
        object.__setattr__(self, "nodes", r)
        object.__setattr__(self, "quad_weights", w)
        object.__setattr__(self, "faces", faces)

    @property
    def R(self) -> float:
        return float(self.nodes[-1])

    @property
    def N(self) -> int:
        """Number of cells (node count minus one)."""
        return self.nodes.size - 1

    @property
    def spacing(self) -> NDArray[np.float64]:
        return np.diff(self.nodes)

    def field(self, values, slope=None) -> "RadialField":
        return RadialField(self, values, slope)

    def sample(self, fn) -> "RadialField":
        return RadialField(self, fn(self.nodes))

    def coarsen(self) -> "RadialGrid":
        """Every other node; requires an even cell count."""
        if self.N % 2:
            raise ValueError("coarsening needs an even number of cells")
        return RadialGrid(self.nodes[::2], self.d)

    def describe(self) -> dict:
        h = self.spacing
        return {"R": self.R, "N": self.N, "d": self.d, "h_min": float(h.min()), "h_max": float(h.max())}


@dataclass(frozen=True, eq=False)
class RadialField:
    """Real samples of a radial function on a grid, optionally with exact slopes."""

    grid: RadialGrid
    values: NDArray[np.float64]
    slope: Optional[NDArray[np.float64]] = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.nodes.shape:
            raise ValueError(f"expected {self.grid.nodes.size} values, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.slope is not None:
            s = np.array(self.slope, dtype=float)
            if s.shape != v.shape or not np.all(np.isfinite(s)):
                raise ValueError("slope must match values and be finite")
            s.setflags(write=False)
            object.__setattr__(self, "slope", s)

    def __mul__(self, c: float) -> "RadialField":
        slope = None if self.slope is None else c * self.slope
        return RadialField(self.grid, c * self.values, slope)

    __rmul__ = __mul__

    def with_values(self, values, slope=None) -> "RadialField":
        return RadialField(self.grid, values, slope)

    def coarsen(self) -> "RadialField":
        slope = None if self.slope is None else self.slope[::2]
        return RadialField(self.grid.coarsen(), self.values[::2], slope)


def make_grid(
    R: float,
    N: int,
    grading: str = "uniform",
    *,
    core: Optional[float] = None,
    ratio: Optional[float] = None,
    d: int = 3,
) -> RadialGrid:
    """Build a radial grid with N cells on [0, R].

    ``grading="geometric"`` places uniform cells on [0, core] and then cells
    growing by ``ratio`` out to R; the outer cells are rescaled by a common
    factor so that the last node lands on R exactly.
    """
    if not R > 0:
        raise ValueError("R must be positive")
    if N < 16:
        raise ValueError("N must be at least 16")
    if grading == "uniform":
        return RadialGrid(np.linspace(0.0, R, N + 1), d)
    if grading != "geometric":
        raise ValueError(f"unknown grading {grading!r}")
    if ratio is None or not ratio > 1.0:
        raise ValueError("geometric grading needs ratio > 1")
    if core is None or not core > 0.0:
        raise ValueError("geometric grading needs a positive core length")
    if core >= R:
        return RadialGrid(np.linspace(0.0, R, N + 1), d)
    outer = R - core
    for n_geo in range(1, N):
        h0 = core / (N - n_geo)
        length = h0 * ratio * (ratio**n_geo - 1.0) / (ratio - 1.0)
        if length >= outer:
            break
    else:
        raise ValueError("N too small to reach R with this core and ratio")
    n_core = N - n_geo
    cells = h0 * ratio ** np.arange(1, n_geo + 1)
    cells *= outer / cells.sum()
    nodes = np.concatenate((np.linspace(0.0, core, n_core + 1), core + np.cumsum(cells)))
    nodes[-1] = R
    return RadialGrid(nodes, d)


def graded_grid(R: float, core: float, ratio: float, n_core: int, d: int = 3) -> RadialGrid:
    """Geometric grid whose uniform core has about ``n_core`` cells; total cell count is even."""
    core = min(core, 0.5 * R)
    h0 = core / n_core
    n_geo = math.ceil(math.log1p((R - core) * (ratio - 1.0) / (h0 * ratio)) / math.log(ratio))
    N = n_core + n_geo
    N += N % 2
    return make_grid(R, max(N, 16), "geometric", core=core, ratio=ratio, d=d)


def quadrature(f: RadialField) -> float:
    """Integral over R^d of the radial function f(|x|)."""
    return float(np.dot(f.grid.quad_weights, f.values))


def integrate(grid: RadialGrid, values: NDArray) -> float:
    return float(np.dot(grid.quad_weights, values))


def radial_derivative(u: RadialField) -> NDArray[np.float64]:
    """u'(r): exact slope if the field carries one, else second-order differences.

    Even extension at the origin gives u'(0) = 0; the outer end uses a one-sided
    second-order stencil.
    """
    if u.slope is not None:
        return u.slope
    du = np.gradient(u.values, u.grid.nodes, edge_order=2)
    du[0] = 0.0
    return du


def gradient_sq_norm(u: RadialField) -> float:
    """||grad u||_{L^2(R^d)}^2."""
    du = radial_derivative(u)
    return float(np.dot(u.grid.quad_weights, du * du))


def _one_sided_second_derivative(x: NDArray, y: NDArray) -> float:
    # 4-point Lagrange weights for y'' at x[-1]; second order on any spacing.
    t = x - x[-1]
    V = np.vander(t, 4, increasing=True).T
    rhs = np.array([0.0, 0.0, 2.0, 0.0])
    return float(np.linalg.solve(V, rhs) @ y)


def apply_laplacian(u: RadialField) -> RadialField:
    """Delta u = u'' + (d-1)/r u' with three-point stencils on the (graded) grid."""
    r = u.grid.nodes
    y = u.values
    d = u.grid.d
    h = np.diff(r)
    hm, hp = h[:-1], h[1:]
    out = np.empty_like(y)
    upp = 2.0 * (hm * y[2:] - (hm + hp) * y[1:-1] + hp * y[:-2]) / (hm * hp * (hm + hp))
    up = (hm**2 * y[2:] + (hp**2 - hm**2) * y[1:-1] - hp**2 * y[:-2]) / (hm * hp * (hm + hp))
    out[1:-1] = upp + (d - 1) * up / r[1:-1]
    # even extension at the origin: Delta u(0) = d u''(0)
    out[0] = d * 2.0 * (y[1] - y[0]) / h[0] ** 2
    tail_x, tail_y = r[-4:], y[-4:]
    upp_end = _one_sided_second_derivative(tail_x, tail_y)
    up_end = (np.gradient(y[-3:], r[-3:], edge_order=2))[-1]
    out[-1] = upp_end + (d - 1) * up_end / r[-1]
    return RadialField(u.grid, out)


def stiffness_bands(grid: RadialGrid, ell: int = 0):
    """Symmetric finite-volume form of -Delta (+ centrifugal term) on nodes 0..N-1.

    Returns (diag, off) of the matrix K with u^T K u equal to the discrete
    Dirichlet energy; u_N = 0 is eliminated.  For ell >= 1 the origin is also
    fixed (u_0 = 0) and the returned arrays cover nodes 1..N-1.
    """
    r = grid.nodes
    d = grid.d
    faces = grid.faces
    h = np.diff(r)
    flux = sphere_area(d) * faces[1:-1] ** (d - 1) / h  # coupling across face i+1/2
    diag = np.zeros(r.size)
    diag[:-1] += flux
    diag[1:] += flux
    off = -flux
    if ell:
        lo, hi = faces[:-1], faces[1:]
        if d == 3:
            shell = hi - lo
        else:
            shell = (hi ** (d - 2) - lo ** (d - 2)) / (d - 2)
        diag = diag + sphere_area(d) * ell * (ell + 1) * shell
        return diag[1:-1].copy(), off[1:-1].copy()
    return diag[:-1].copy(), off[:-1].copy()


def solve_tridiagonal(sub, diag, sup, rhs) -> NDArray[np.float64]:
    """Tridiagonal solve: numba Thomas kernel, or LAPACK banded solve without JIT."""
    if _kernels.USE_JIT:
        x = _kernels.thomas_solve(sub, diag, sup, rhs)
    else:
        from scipy.linalg import solve_banded

        ab = np.zeros((3, diag.size))
        ab[0, 1:] = sup
        ab[1] = diag
        ab[2, :-1] = sub
        x = solve_banded((1, 1), ab, rhs)
    if not np.all(np.isfinite(x)):
        raise np.linalg.LinAlgError("singular tridiagonal system")
    return x


def solve_helmholtz(f: RadialField, alpha: float, ell: int = 0) -> RadialField:
    """v with (-Delta + alpha) v = f, v'(0) = 0, v(R) = 0.

    Finite-volume discretisation that is symmetric for the grid's quadrature
    pairing, so the discrete resolvent is exactly self-adjoint.  With
    ``ell >= 1`` the angular term ell(ell+1)/r^2 is added and v(0) = 0.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    grid = f.grid
    w = grid.quad_weights
    diag, off = stiffness_bands(grid, ell)
    if ell:
        interior = slice(1, -1)
    else:
        interior = slice(0, -1)
    wi = w[interior]
    diag = diag + alpha * wi
    sol = solve_tridiagonal(off, diag, off, wi * f.values[interior])
    out = np.zeros(grid.nodes.size)
    out[interior] = sol
    return RadialField(grid, out)


def pairing(f: RadialField, g: RadialField) -> float:
    """Real L^2(R^d) inner product of two radial fields on the same grid."""
    return float(np.dot(f.grid.quad_weights, f.values * g.values))
