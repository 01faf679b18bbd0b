"""Hot inner loops: radial shooting integrator, tridiagonal solve, Sturm counts.

Every kernel is written once as plain Python over numpy arrays and compiled
with ``numba.njit`` when numba is importable.  Setting ``NEHARI_LAB_NO_JIT=1``
in the environment (before import) selects the uncompiled path; the compiled
dispatchers keep the original function reachable as ``kernel.py_func`` so the
two paths can be compared in-process.
"""

import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_JIT = numba is not None and os.environ.get("NEHARI_LAB_NO_JIT", "") in ("", "0")


def _jit(fn):
    if USE_JIT:
        return numba.njit(cache=True)(fn)
    return fn


# Integrator status codes.
UNDER = 0  # turned back toward the equilibrium without a further zero
OVER = 1  # crossed zero more often than allowed
END = 2  # reached r_end without a decision
BLOWUP = 3  # |u| exceeded the blow-up guard
UNDERFLOW = 4  # step size collapsed

# Dormand-Prince 5(4) tableau.
_C2, _C3, _C4, _C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
_A21 = 1.0 / 5.0
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
_A51, _A52, _A53, _A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
_A61, _A62, _A63, _A64, _A65 = (
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
)
_B1, _B3, _B4, _B5, _B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
_E1, _E3, _E4, _E5, _E6, _E7 = (
    71.0 / 57600.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
)


@_jit
def nonlinearity(u, omega, p, crit):
    """f(u) = omega*u - |u|^(p-1) u - |u|^(crit-2) u."""
    au = abs(u)
    return omega * u - au ** (p - 1.0) * u - au ** (crit - 2.0) * u


@_jit
def nonlinearity_prime(u, omega, p, crit):
    au = abs(u)
    return omega - p * au ** (p - 1.0) - (crit - 1.0) * au ** (crit - 2.0)


@_jit
def _rhs_v(r, u, v, omega, p, crit, dm1):
    return nonlinearity(u, omega, p, crit) - dm1 * v / r


@_jit
def shoot_radial(height, omega, p, d, r_end, nodes, out_u, out_v, max_cross, atol, rtol, blowup):
    """Integrate u'' + (d-1)/r u' = f(u), u(0)=height, u'(0)=0 with adaptive DP5(4).

    Extrema and zeros are tracked between accepted steps.  The origin counts as
    an extremum, so two extrema with no zero in between mean the trajectory
    turned back before reaching zero (``UNDER``).  When ``nodes`` is non-empty
    the step is clipped to land on every node and (u, u') is recorded there;
    nodes beyond the stopping radius keep their incoming values.

    Returns (status, crossings, r_stop, u_stop, v_stop, n_recorded).
    """
    crit = 2.0 * d / (d - 2.0)
    dm1 = d - 1.0
    f0 = nonlinearity(height, omega, p, crit)
    fp0 = nonlinearity_prime(height, omega, p, crit)
    scale = 1.0 / math.sqrt(abs(fp0) + omega)
    a2 = f0 / (2.0 * d)
    a4 = fp0 * a2 / (4.0 * d + 8.0)
    r = 1e-3 * scale
    if r > r_end:
        r = 0.5 * r_end
    u = height + a2 * r * r + a4 * r ** 4
    v = 2.0 * a2 * r + 4.0 * a4 * r ** 3

    n_nodes = nodes.shape[0]
    k = 0
    while k < n_nodes and nodes[k] <= r:
        x = nodes[k]
        out_u[k] = height + a2 * x * x + a4 * x ** 4
        out_v[k] = 2.0 * a2 * x + 4.0 * a4 * x ** 3
        k += 1

    crossings = 0
    last_was_extremum = True
    dt = 0.05 * scale
    guard = blowup * height
    kv1 = _rhs_v(r, u, v, omega, p, crit, dm1)
    ku1 = v
    while True:
        if r >= r_end:
            return END, crossings, r, u, v, k
        step = dt
        landing = False
        if r + step >= r_end:
            step = r_end - r
        if k < n_nodes and r + step >= nodes[k]:
            step = nodes[k] - r
            landing = True
        if step < 1e-14 * r:
            return UNDERFLOW, crossings, r, u, v, k

        u2 = u + step * _A21 * ku1
        v2 = v + step * _A21 * kv1
        ku2 = v2
        kv2 = _rhs_v(r + _C2 * step, u2, v2, omega, p, crit, dm1)
        u3 = u + step * (_A31 * ku1 + _A32 * ku2)
        v3 = v + step * (_A31 * kv1 + _A32 * kv2)
        ku3 = v3
        kv3 = _rhs_v(r + _C3 * step, u3, v3, omega, p, crit, dm1)
        u4 = u + step * (_A41 * ku1 + _A42 * ku2 + _A43 * ku3)
        v4 = v + step * (_A41 * kv1 + _A42 * kv2 + _A43 * kv3)
        ku4 = v4
        kv4 = _rhs_v(r + _C4 * step, u4, v4, omega, p, crit, dm1)
        u5 = u + step * (_A51 * ku1 + _A52 * ku2 + _A53 * ku3 + _A54 * ku4)
        v5 = v + step * (_A51 * kv1 + _A52 * kv2 + _A53 * kv3 + _A54 * kv4)
        ku5 = v5
        kv5 = _rhs_v(r + _C5 * step, u5, v5, omega, p, crit, dm1)
        u6 = u + step * (_A61 * ku1 + _A62 * ku2 + _A63 * ku3 + _A64 * ku4 + _A65 * ku5)
        v6 = v + step * (_A61 * kv1 + _A62 * kv2 + _A63 * kv3 + _A64 * kv4 + _A65 * kv5)
        ku6 = v6
        kv6 = _rhs_v(r + step, u6, v6, omega, p, crit, dm1)
        un = u + step * (_B1 * ku1 + _B3 * ku3 + _B4 * ku4 + _B5 * ku5 + _B6 * ku6)
        vn = v + step * (_B1 * kv1 + _B3 * kv3 + _B4 * kv4 + _B5 * kv5 + _B6 * kv6)
        ku7 = vn
        kv7 = _rhs_v(r + step, un, vn, omega, p, crit, dm1)

        eu = step * (_E1 * ku1 + _E3 * ku3 + _E4 * ku4 + _E5 * ku5 + _E6 * ku6 + _E7 * ku7)
        ev = step * (_E1 * kv1 + _E3 * kv3 + _E4 * kv4 + _E5 * kv5 + _E6 * kv6 + _E7 * kv7)
        su = atol + rtol * max(abs(u), abs(un))
        sv = atol + rtol * max(abs(v), abs(vn))
        err = math.sqrt(0.5 * ((eu / su) ** 2 + (ev / sv) ** 2))

        if err > 1.0:
            dt = step * max(0.2, 0.9 * err ** -0.2)
            continue

        r_new = nodes[k] if landing else r + step
        crossed = u * un < 0.0 or (un == 0.0 and u != 0.0)
        turned = v * vn < 0.0
        if crossed and turned:
            # order the two events by linear interpolation inside the step
            fz = u / (u - un) if u != un else 0.0
            fe = v / (v - vn) if v != vn else 0.0
            first_zero = fz <= fe
        else:
            first_zero = crossed

        stop = -1
        for pass_no in range(2):
            event_zero = first_zero if pass_no == 0 else not first_zero
            if event_zero and crossed:
                crossings += 1
                last_was_extremum = False
                if crossings > max_cross:
                    stop = OVER
                    break
            elif (not event_zero) and turned:
                if last_was_extremum:
                    stop = UNDER
                    break
                last_was_extremum = True

        r = r_new
        u = un
        v = vn
        ku1 = ku7
        kv1 = kv7
        if landing:
            out_u[k] = u
            out_v[k] = v
            k += 1
        else:
            fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
            dt = step * fac
        if stop >= 0:
            return stop, crossings, r, u, v, k
        if abs(u) > guard:
            return BLOWUP, crossings, r, u, v, k


@_jit
def thomas_solve(sub, diag, sup, rhs):
    """Solve a tridiagonal system without pivoting (diagonally dominant use only).

    sub[i] couples row i+1 to column i; sup[i] couples row i to column i+1.
    """
    n = diag.shape[0]
    c = np.empty(n)
    x = np.empty(n)
    beta = diag[0]
    c[0] = 0.0
    x[0] = rhs[0] / beta
    for i in range(1, n):
        c[i - 1] = sup[i - 1] / beta
        beta = diag[i] - sub[i - 1] * c[i - 1]
        x[i] = (rhs[i] - sub[i - 1] * x[i - 1]) / beta
    for i in range(n - 2, -1, -1):
        x[i] -= c[i] * x[i + 1]
    return x


@_jit
def sturm_count(diag, off, shift):
    """Number of eigenvalues of the symmetric tridiagonal (diag, off) below shift."""
    n = diag.shape[0]
    count = 0
    q = diag[0] - shift
    if q < 0.0:
        count += 1
    for i in range(1, n):
        if q == 0.0:
            q = 1e-300
        q = diag[i] - shift - off[i - 1] * off[i - 1] / q
        if q < 0.0:
            count += 1
    return count
