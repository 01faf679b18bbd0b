import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy.optimize import brentq

from nehari_lab.grid import RadialField, gradient_sq_norm, make_grid, quadrature
from nehari_lab.model import (
    ModelParams,
    critical_exponent,
    critical_level,
    evaluate_functionals,
    functionals_from_norms,
    k_project,
    lambda_w,
    m_infinity,
    nehari_project,
    norm_powers,
    rescale,
    scaling_root,
    sobolev_constants,
    talenti,
)

from conftest import GAUSS, gaussian, gaussian_slope

SIGMA = 3.0 * math.sqrt(3.0) / 4.0 * math.pi**2

valid_p = st.floats(1.05, 4.95)
valid_omega = st.floats(1e-3, 1e2)


def test_critical_level_closed_form():
    assert critical_level(3) == pytest.approx(SIGMA, rel=1e-15)
    assert m_infinity(3) == pytest.approx(SIGMA / 3.0, rel=1e-15)
    assert critical_exponent(3) == 6.0


@pytest.mark.parametrize(
    "kwargs",
    [dict(p=5.0, omega=1.0), dict(p=1.0, omega=1.0), dict(p=2.0, omega=0.0), dict(p=2.0, omega=-1.0),
     dict(p=2.0, omega=1.0, d=2), dict(p=2.0, omega=math.inf)],
)
def test_params_preconditions(kwargs):
    with pytest.raises(ValueError):
        ModelParams(**kwargs)


def test_with_omega():
    assert ModelParams(2.0, 1.0).with_omega(3.0) == ModelParams(2.0, 3.0)


def test_gaussian_functionals():
    g = make_grid(12.0, 6000)
    u = RadialField(g, gaussian(g.nodes), gaussian_slope(g.nodes))
    rep = evaluate_functionals(u, ModelParams(3.0, 1.0))
    assert rep.grad_sq == pytest.approx(GAUSS["grad_sq"], rel=1e-5)
    assert rep.mass == pytest.approx(GAUSS["mass"], rel=1e-5)
    assert rep.lp_power == pytest.approx(GAUSS["l4"], rel=1e-5)
    assert rep.crit_power == pytest.approx(GAUSS["l6"], rel=1e-5)


norms = st.tuples(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))


@given(n=norms, p=valid_p, omega=valid_omega)
def test_identity_j_is_s_minus_half_n(n, p, omega):
    rep = functionals_from_norms(*n, ModelParams(p, omega))
    scale = abs(rep.action) + abs(rep.nehari) + rep.j_val
    assert abs(rep.j_val - (rep.action - 0.5 * rep.nehari)) <= 1e-12 * scale


@given(n=norms, p=valid_p, omega=valid_omega)
def test_identity_p_plus_one_splitting(n, p, omega):
    G, M, L, C = n
    rep = functionals_from_norms(G, M, L, C, ModelParams(p, omega))
    lhs = rep.action - rep.nehari / (p + 1.0)
    rhs = (0.5 - 1.0 / (p + 1.0)) * (G + omega * M) + (1.0 / (p + 1.0) - 1.0 / 6.0) * C
    assert abs(lhs - rhs) <= 1e-12 * (abs(lhs) + G + omega * M + C)


def test_dagger_functionals():
    rep = functionals_from_norms(2.0, 1.0, 1.0, 3.0, ModelParams(2.0, 1.0))
    assert rep.h_dag == pytest.approx(0.5 * 2.0 - 3.0 / 6.0)
    assert rep.n_dag == pytest.approx(2.0 - 3.0)


def test_pohozaev_only_in_three_dimensions():
    g = make_grid(10.0, 200, d=4)
    rep = evaluate_functionals(g.sample(gaussian), ModelParams(2.0, 1.0, d=4))
    assert rep.pohozaev is None


def test_dimension_mismatch(uniform_grid):
    with pytest.raises(ValueError):
        evaluate_functionals(uniform_grid.sample(gaussian), ModelParams(2.0, 1.0, d=4))


@pytest.mark.parametrize(
    "a, b, bexp, c, expected",
    [
        (1.0, 0.0, 4.0, 1.0, 1.0),
        (3.0, 1.0, 4.0, 1.0, math.sqrt((-1.0 + math.sqrt(13.0)) / 2.0)),
    ],
)
def test_scaling_root_examples(a, b, bexp, c, expected):
    assert scaling_root(a, b, bexp, c, 6.0) == pytest.approx(expected, rel=1e-13)


@given(a=st.floats(1e-3, 1e3), b=st.floats(0.0, 1e3), c=st.floats(1e-6, 1e3), bexp=st.floats(2.05, 5.95))
def test_scaling_root_against_brentq(a, b, c, bexp):
    t = scaling_root(a, b, bexp, c, 6.0)
    g = lambda s: a - b * s ** (bexp - 2.0) - c * s**4
    ref = brentq(g, 1e-300, 1e4, xtol=1e-300, rtol=1e-15)
    assert t == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("a, b, c", [(0.0, 1.0, 1.0), (1.0, 0.0, 0.0), (1.0, -1.0, 1.0)])
def test_scaling_root_errors(a, b, c):
    with pytest.raises(ValueError):
        scaling_root(a, b, 4.0, c, 6.0)


@given(amp=st.floats(0.05, 20.0), width=st.floats(0.3, 3.0), p=valid_p, omega=valid_omega)
def test_nehari_projection(amp, width, p, omega):
    g = make_grid(15.0, 300)
    u = g.sample(lambda r: amp * np.exp(-((r / width) ** 2)))
    params = ModelParams(p, omega)
    t, v = nehari_project(u, params)
    rep, rep0 = evaluate_functionals(v, params), evaluate_functionals(u, params)
    assert abs(rep.nehari) <= 1e-10 * (rep.grad_sq + omega * rep.mass)
    assume(abs(rep0.nehari) > 1e-8 * (rep0.grad_sq + omega * rep0.mass))
    assert (t < 1.0) == (rep0.nehari < 0.0)


@given(amp=st.floats(0.05, 20.0), p=st.floats(2.35, 4.95), omega=valid_omega)
def test_k_projection(amp, p, omega):
    g = make_grid(15.0, 300)
    u = g.sample(lambda r: amp * np.exp(-r * r))
    params = ModelParams(p, omega)
    t, v = k_project(u, params)
    rep = evaluate_functionals(v, params)
    assert abs(rep.k_val) <= 1e-10 * rep.grad_sq


def test_k_projection_requires_large_p(uniform_grid):
    with pytest.raises(ValueError, match="1 \\+ 4/d"):
        k_project(uniform_grid.sample(gaussian), ModelParams(2.0, 1.0))


def test_projection_of_zero_field(uniform_grid):
    with pytest.raises(ValueError):
        nehari_project(uniform_grid.field(np.zeros(uniform_grid.nodes.size)), ModelParams(2.0, 1.0))


def test_sobolev_constants(talenti_grid):
    sc = sobolev_constants(talenti_grid)
    assert sc.sigma_pow == pytest.approx(SIGMA, rel=1e-5)
    assert sc.m_inf == sc.sigma_pow / 3.0


def test_talenti_critical_balance(talenti_grid):
    # W solves the critical equation, so its gradient and L^6 powers agree
    G, _, _, C = norm_powers(talenti(talenti_grid), ModelParams(3.0, 1.0))
    R = talenti_grid.nodes[-1]
    G += 12.0 * math.pi / R  # |W'|^2 ~ 3 r^-4 beyond the box
    C += 36.0 * math.pi / R**3
    assert G / C == pytest.approx(1.0, abs=1e-4)
    assert scaling_root(G, 0.0, 4.0, C, 6.0) == pytest.approx(1.0, abs=1e-4)


def test_lambda_w_matches_definition(talenti_grid):
    W = talenti(talenti_grid)
    LW = lambda_w(talenti_grid)
    np.testing.assert_allclose(LW.values, 0.5 * W.values + talenti_grid.nodes * W.slope, atol=1e-15)


def test_rescale_identity(uniform_grid):
    u = RadialField(uniform_grid, gaussian(uniform_grid.nodes), gaussian_slope(uniform_grid.nodes))
    v = rescale(u, 1.0)
    np.testing.assert_array_equal(v.values, u.values)
    np.testing.assert_array_equal(v.grid.nodes, u.grid.nodes)


@given(nu=st.floats(0.2, 5.0))
def test_rescale_invariances(nu):
    g = make_grid(12.0, 600)
    u = RadialField(g, gaussian(g.nodes), gaussian_slope(g.nodes))
    params = ModelParams(2.0, 1.0)
    v = rescale(u, nu)
    G0, M0, _, C0 = norm_powers(u, params)
    G1, M1, _, C1 = norm_powers(v, params)
    assert G1 == pytest.approx(G0, rel=1e-12)
    assert C1 == pytest.approx(C0, rel=1e-12)
    assert M1 == pytest.approx(nu**4 * M0, rel=1e-12)


def test_rescale_talenti_energy(talenti_grid):
    for nu in (0.5, 2.0):
        assert gradient_sq_norm(rescale(talenti(talenti_grid), nu)) == pytest.approx(
            gradient_sq_norm(talenti(talenti_grid)), rel=1e-12
        )


def test_rescale_rejects_nonpositive(uniform_grid):
    with pytest.raises(ValueError):
        rescale(uniform_grid.sample(gaussian), 0.0)


def test_gaussian_mass_scaling():
    g = make_grid(12.0, 4000)
    u = g.sample(gaussian)
    assert quadrature(rescale(u, 0.7).with_values(rescale(u, 0.7).values ** 2)) == pytest.approx(
        0.7**4 * GAUSS["mass"], rel=1e-5
    )
