import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nehari_lab.grid import gradient_sq_norm, graded_grid, integrate, make_grid
from nehari_lab.model import (
    ModelParams,
    bubble_norms,
    critical_level,
    cutoff,
    cutoff_bubble,
    cutoff_slope,
    norm_powers,
    scaled_talenti,
)
from nehari_lab.verify import bubble_asymptotics

SIGMA = critical_level(3)


@given(r=st.floats(0.0, 3.0))
def test_cutoff_shape(r):
    c = float(cutoff(r))
    assert 0.0 <= c <= 1.0
    assert abs(float(cutoff_slope(r))) <= math.pi / 2 + 1e-15
    if r <= 1.0:
        assert c == 1.0
    if r >= 2.0:
        assert c == 0.0


def test_bubble_equals_scaled_talenti_inside_unit_ball():
    g = graded_grid(3.0, 0.5, 1.002, 4000)
    eps = 0.2
    v = cutoff_bubble(eps, g)
    inside = g.nodes <= 1.0
    np.testing.assert_array_equal(v.values[inside], scaled_talenti(g.nodes[inside], eps))
    assert np.all(v.values[g.nodes >= 2.0] == 0.0)


def test_bubble_rejects_unresolved_scale():
    g = make_grid(3.0, 100)
    with pytest.raises(ValueError, match="not resolved"):
        cutoff_bubble(0.01, g)


@pytest.mark.parametrize("eps", [0.1, 0.2])
def test_bubble_norms_match_grid_quadrature(eps):
    g = graded_grid(3.0, 0.2, 1.001, 20000)
    v = cutoff_bubble(eps, g)
    G, M, L, C = norm_powers(v, ModelParams(3.0, 1.0))
    b = bubble_norms(eps, 3.0)
    assert G == pytest.approx(b.grad_sq, rel=1e-5)
    assert M == pytest.approx(b.mass, rel=1e-5)
    assert L == pytest.approx(b.lp_power, rel=1e-5)
    assert C == pytest.approx(b.crit_power, rel=1e-5)


@pytest.mark.parametrize("eps", [1e-3, 1e-2, 0.1])
def test_bubble_energy_is_near_sigma(eps):
    b = bubble_norms(eps, 2.0)
    assert b.grad_excess > 0 and b.crit_deficit > 0
    assert b.grad_sq == pytest.approx(SIGMA + b.grad_excess, rel=1e-14)
    assert abs(b.grad_excess) < 60 * eps**2


def test_bubble_norms_reject_nonpositive_eps():
    with pytest.raises(ValueError):
        bubble_norms(0.0, 2.0)


def test_asymptotic_slopes():
    d = bubble_asymptotics()
    assert d["grad_excess_slope"] == pytest.approx(2.0, abs=0.15)
    assert d["crit_deficit_slope"] == pytest.approx(6.0, abs=0.3)
    assert d["lp_p3_slope"] == pytest.approx(2.0, abs=0.15)
    assert d["t_minus_1_slope"] == pytest.approx(2.0, abs=0.2)
    assert d["p2_fit_residual"] <= 0.05
