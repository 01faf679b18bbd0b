import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import eigvalsh_tridiagonal

from nehari_lab import spectral as sp
from nehari_lab.grid import integrate, make_grid
from nehari_lab.model import lambda_w_profile, talenti, talenti_slope

SIGMA = 3.0 * math.sqrt(3.0) / 4.0 * math.pi**2


@pytest.fixture(scope="module")
def small_grid():
    return make_grid(30.0, 1500)


def test_free_dirichlet_spectrum():
    # u = sin(k r)/r with k = n pi / R
    R = 10.0
    g = make_grid(R, 2000)
    vals = sp.lowest_eigenvalues("free", 3, g)
    exact = [(n * math.pi / R) ** 2 for n in (1, 2, 3)]
    np.testing.assert_allclose(vals, exact, rtol=1e-4)


@pytest.mark.parametrize("which", [sp.LPLUS, sp.LMINUS])
def test_eigenvalues_match_dense_tridiagonal(small_grid, which):
    diag, off = sp.operator_bands(which, small_grid)
    ref = eigvalsh_tridiagonal(diag, off, select="i", select_range=(0, 2))
    pairs = sp.lowest_eigenpairs(which, 3, small_grid)
    np.testing.assert_allclose(pairs.values, ref, rtol=1e-9, atol=1e-11)


def test_eigenvectors_satisfy_the_equation(small_grid):
    pairs = sp.lowest_eigenpairs(sp.LPLUS, 2, small_grid)
    diag, off = sp.operator_bands(sp.LPLUS, small_grid)
    sw = np.sqrt(small_grid.quad_weights[:-1])
    for i, lam in enumerate(pairs.values):
        y = sw * pairs.vectors[:-1, i]
        r = sp._tridiag_matvec(diag, off, y) - lam * y
        assert np.linalg.norm(r) <= 1e-8 * np.linalg.norm(y)
        assert integrate(small_grid, pairs.vectors[:, i] ** 2) == pytest.approx(1.0, rel=1e-10)


def test_morse_indices(small_grid):
    plus = sp.lowest_eigenvalues(sp.LPLUS, 2, small_grid)
    minus = sp.lowest_eigenvalues(sp.LMINUS, 1, small_grid)
    assert plus[0] < 0.0 < plus[1]
    assert minus[0] > 0.0


def test_ground_state_of_lplus_is_positive(small_grid):
    phi = sp.lowest_eigenpairs(sp.LPLUS, 1, small_grid).vectors[:, 0]
    phi = phi * np.sign(phi[0])
    assert np.all(phi[:-1] > 0.0)


def test_lminus_low_mode_correlates_with_w_on_core():
    g = sp.eigen_grid(N=2000)
    f = sp.lowest_eigenpairs(sp.LMINUS, 1, g).function(0)
    assert sp.correlation(f, talenti(g), r_max=10.0) > 0.999


def test_correlation_bounds(small_grid):
    f = small_grid.sample(lambda r: np.exp(-r))
    assert sp.correlation(f, f) == pytest.approx(1.0)
    assert sp.correlation(f, small_grid.field(-2.0 * f.values)) == pytest.approx(1.0)


def test_unknown_operator(small_grid):
    with pytest.raises(ValueError):
        sp.operator_bands("Lzero", small_grid)


def test_operators_require_d3():
    with pytest.raises(ValueError):
        sp.potentials(make_grid(10.0, 100, d=4))


def test_kernel_identities_second_order():
    orders = sp.kernel_residual_orders()
    assert set(orders) == {"lminus_W", "lplus_LW", "ell1_dW"}
    for row in orders.values():
        assert row["order"] >= 1.8
        assert row["fine"] < row["coarse"]


def test_tail_rule():
    with pytest.raises(sp.GridTooSmallError):
        sp.pairing_lambda(1e-2, make_grid(100.0, 400))
    with pytest.raises(ValueError):
        sp.pairing_lambda(-1e-2, make_grid(100.0, 400))


@pytest.mark.parametrize("alpha", [1e-2, 1e-3])
def test_pairing_symmetry(alpha):
    a = sp.pairing_lambda(alpha)
    b = sp.pairing_lambda(alpha, swapped=True)
    assert a == pytest.approx(b, rel=1e-8)
    c = sp.pairing_wp(alpha, 3.0)
    d = sp.pairing_wp(alpha, 3.0, swapped=True)
    assert c == pytest.approx(d, rel=1e-8)


def test_pairing_lambda_approaches_six_pi():
    ext = sp.extrapolate_pairing_lambda()
    assert ext.limit == pytest.approx(6.0 * math.pi, rel=0.02)
    # the finite-alpha values carry an O(sqrt(alpha)) bias below the limit
    assert ext.values[2] < ext.values[1] < ext.values[0] < ext.limit


def test_pairing_wp_rejects_small_p():
    with pytest.raises(ValueError):
        sp.pairing_wp(1e-2, 1.0)


def test_wp_identity_closed_form():
    # ||W||_4^4 = 3 sqrt(3) pi^2, so the p = 3 identity value is sigma^{3/2}
    g = sp.resolvent_grid(1e-5)
    assert sp.wp_limit_from_identity(3.0, g) == pytest.approx(SIGMA, rel=1e-3)


@given(c=st.floats(-5, 5), c0=st.floats(-5, 5), c1=st.floats(-5, 5), c2=st.floats(-5, 5))
def test_divergent_fit_recovers_synthetic_coefficients(c, c0, c1, c2):
    a = np.asarray(sp.DEFAULT_FIT_ALPHAS)
    s = np.sqrt(a)
    v = c / s + c0 + c1 * s * np.log(a) + c2 * s
    fit = sp.fit_divergent_coefficient(a, v, integral_vg=-2.0)
    assert fit.coef == pytest.approx(c, abs=1e-8)
    assert fit.a_plus == pytest.approx(c / 2.0, abs=1e-8)


def test_divergent_fit_needs_five_alphas():
    with pytest.raises(ValueError):
        sp.fit_divergent_coefficient([1e-2, 1e-3, 1e-4], [1.0, 2.0, 3.0], 1.0)


@given(c0=st.floats(-5, 5), c1=st.floats(-5, 5), c2=st.floats(-5, 5))
def test_log_sqrt_limit_fit(c0, c1, c2):
    a = np.asarray(sp.WP_FIT_ALPHAS)
    s = np.sqrt(a)
    ext = sp.fit_limit_log_sqrt(a, c0 + c1 * s * np.log(a) + c2 * s)
    assert ext.limit == pytest.approx(c0, abs=1e-9)
    assert ext.error <= 1e-9


@given(c0=st.floats(-5, 5), c1=st.floats(-5, 5))
def test_richardson_exact_on_linear_in_sqrt_alpha(c0, c1):
    a = [1e-2, 1e-3, 1e-4]
    ext = sp.richardson_sqrt_alpha(a, [c0 + c1 * math.sqrt(x) for x in a])
    assert ext.limit == pytest.approx(c0, abs=1e-10)
    assert ext.error == pytest.approx(0.0, abs=1e-10)


@given(k=st.floats(-2, 2))
def test_growth_exponent(k):
    a = np.geomspace(1e-1, 1e-4, 4)
    assert sp.growth_exponent(a, 3.0 * a**k) == pytest.approx(k, abs=1e-10)


def test_zero_moment_construction():
    g = make_grid(50.0, 800)
    f = sp.zero_vplus_moment(lambda_w_profile)(g)
    vp, _ = sp.potentials(g)
    assert abs(integrate(g, vp.values * f.values)) < 1e-12


def test_a_plus_fit_for_zero_moment_vanishes():
    fit = sp.fit_a_plus(sp.zero_vplus_moment(lambda r: 1.0 / (1.0 + r * r)), sp.DEFAULT_FIT_ALPHAS[:5])
    assert abs(fit.coef) <= 3.0 * fit.coef_err + 1e-3


def test_a_plus_is_universal():
    # g = Lambda W and a Gaussian give the same A_+; for Lambda W the coefficient is -3 pi
    fit_lw = sp.fit_a_plus(lambda_w_profile, sp.DEFAULT_FIT_ALPHAS)
    fit_g = sp.fit_a_plus(lambda r: np.exp(-r * r), sp.DEFAULT_FIT_ALPHAS)
    assert fit_lw.a_plus > 0.0
    assert fit_lw.a_plus == pytest.approx(fit_g.a_plus, rel=1e-3)
    assert fit_lw.coef == pytest.approx(-3.0 * math.pi, rel=1e-3)


@pytest.mark.parametrize("profile", [talenti_slope, lambda r: r * np.exp(-r * r)])
def test_ell1_pairing_is_bounded(profile):
    vals = []
    for a in (1e-2, 1e-3, 1e-4, 1e-5):
        g = sp.resolvent_grid(a)
        vals.append(sp.pairing_generic(a, g.field(profile(g.nodes)), "GradW"))
    vals = np.abs(vals)
    # no alpha^{-1/2} growth: successive changes shrink and the values settle
    assert np.all(np.diff(vals) >= 0.0)
    assert np.all(np.diff(np.diff(vals)) < 0.0)
    assert vals[-1] / vals[0] < 1.5


def test_pairing_generic_side():
    g = sp.resolvent_grid(1e-2)
    with pytest.raises(ValueError):
        sp.pairing_generic(1e-2, g.field(np.exp(-g.nodes)), "W")


def test_g_alpha_without_potential_is_identity():
    g = sp._g_grid(1e-2)
    general, orth = sp.g_alpha_inverse_norms(1e-2, g, potential=np.zeros(g.nodes.size))
    assert general == pytest.approx(1.0, abs=1e-12)
    assert orth == pytest.approx(1.0, abs=1e-12)


def test_g_alpha_matrix_size_cap():
    with pytest.raises(ValueError):
        sp.g_alpha_matrix(1e-2, make_grid(1000.0, 2500))


def test_g_alpha_norm_grows_as_alpha_shrinks():
    (g1, o1), (g2, o2) = sp.g_alpha_inverse_norms(1e-1), sp.g_alpha_inverse_norms(1e-2)
    assert g2 > g1
    assert o2 <= 3.0 * o1
    assert sp.g_alpha_inverse_norm_sup(1e-2) > sp.g_alpha_inverse_norm_sup(1e-1)


def test_report_subset():
    rep = sp.spectral_report(checks=("kernel",))
    d = rep.as_dict()
    assert d["pairing_lambda"] == [] and d["inverse_norms"] == []
    assert set(d["kernel_residuals"]) == {"lminus_W", "lplus_LW", "ell1_dW"}
