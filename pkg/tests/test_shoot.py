import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_bvp

from nehari_lab.grid import make_grid
from nehari_lab.model import ModelParams, m_infinity
from nehari_lab.shoot import (
    NoSolutionError,
    Outcome,
    ResidualToleranceError,
    all_solutions,
    branch_brackets,
    crossing_class,
    equilibrium_height,
    find_positive_solution,
    min_action_solution,
    scan_heights,
    shoot,
)


@pytest.fixture(scope="module")
def ground_p2():
    return min_action_solution(ModelParams(2.0, 0.1))


def _bvp_height(params, guess, L=60.0):
    om, p = params.omega, params.p
    k = math.sqrt(om)

    def rhs(r, y):
        u = y[0]
        return np.vstack([y[1], om * u - np.abs(u) ** (p - 1) * u - np.abs(u) ** 4 * u - 2.0 * y[1] / r])

    def bc(a, b):
        # Yukawa tail e^{-k r}/r at the far end
        return np.array([a[1], b[1] + (k + 1.0 / L) * b[0]])

    r = np.linspace(1e-6, L, 2000)
    y = np.vstack([guess / np.cosh(k * r / 1.2) ** 2, np.zeros_like(r)])
    sol = solve_bvp(rhs, bc, r, y, tol=1e-6, max_nodes=200000)
    assert sol.status == 0
    return sol.y[0, 0]


def test_height_matches_bvp_oracle(ground_p2):
    assert ground_p2.height == pytest.approx(_bvp_height(ground_p2.params, 0.43), rel=1e-7)


def test_ground_state_quality(ground_p2):
    s = ground_p2
    assert s.branch_index == 0
    assert abs(s.nehari_residual) <= 1e-6
    assert abs(s.pohozaev_residual) <= 1e-6
    assert s.decay_rate == pytest.approx(math.sqrt(0.1), rel=1e-3)
    assert 0.0 < s.action < m_infinity(3)
    assert np.all(s.field.values > 0.0)
    assert s.field.values[0] == pytest.approx(s.height)


def test_summary_keys(ground_p2):
    d = ground_p2.summary()
    for key in ("height", "action", "nehari_residual", "pohozaev_residual", "decay_rate", "grid", "report"):
        assert key in d


@pytest.mark.parametrize("p, omega", [(2.0, 1.0), (3.0, 1.0)])
def test_no_solution_at_large_omega(p, omega):
    with pytest.raises(NoSolutionError):
        min_action_solution(ModelParams(p, omega), n_scan=40)


def test_coarse_grid_fails_residuals():
    params = ModelParams(2.0, 0.1)
    with pytest.raises(ResidualToleranceError) as info:
        min_action_solution(params, grid=make_grid(40.0, 200))
    assert info.value.candidate is not None


def test_negative_branch_count():
    with pytest.raises(ValueError):
        min_action_solution(ModelParams(2.0, 0.1), max_branches=-1)


@given(omega=st.floats(0.01, 3.0), p=st.floats(1.5, 4.5))
@settings(max_examples=20)
def test_below_equilibrium_stays_positive(omega, p):
    params = ModelParams(p, omega)
    u_star = equilibrium_height(params)
    assert omega - u_star ** (p - 1) - u_star**4 == pytest.approx(0.0, abs=1e-12)
    assert shoot(params, 0.5 * u_star).outcome == Outcome.STAYS_POSITIVE


def test_shoot_rejects_nonpositive_height():
    with pytest.raises(ValueError):
        shoot(ModelParams(2.0, 0.1), 0.0)


def test_brackets_bracket_class_changes():
    params = ModelParams(2.0, 0.1)
    heights, classes = scan_heights(params, max_branches=1, n_scan=60)
    assert np.all(classes >= 0) and np.all(classes <= 2)
    brackets = branch_brackets(heights, classes, 1)
    assert [b for b, _ in brackets][:1] == [0]
    for branch, (lo, hi) in brackets:
        assert {crossing_class(params, lo, 2), crossing_class(params, hi, 2)} >= {branch, branch + 1} or \
            min(crossing_class(params, lo, 2), crossing_class(params, hi, 2)) <= branch


def test_branch_brackets_synthetic():
    h = [1.0, 2.0, 3.0, 4.0]
    assert branch_brackets(h, [0, 0, 2, 1], 5) == [(0, (2.0, 3.0)), (1, (2.0, 3.0)), (1, (3.0, 4.0))]
    assert branch_brackets(h, [0, 0, 2, 1], 0) == [(0, (2.0, 3.0))]


def test_two_positive_solutions_and_least_action(ground_p2):
    # a second, concentrated positive solution sits just above the bubble level
    sols = all_solutions(ModelParams(2.0, 0.1), max_branches=1, n_scan=80)
    positive = sorted((s for s in sols if s.branch_index == 0), key=lambda s: s.height)
    assert len(positive) >= 2
    assert positive[-1].height > 10.0 * positive[0].height
    assert positive[-1].action > m_infinity(3) > positive[0].action
    assert min(s.action for s in sols) == pytest.approx(ground_p2.action, rel=1e-9)
    for s in positive:
        assert np.all(s.field.values > 0.0)


def test_find_positive_solution_bad_bracket():
    params = ModelParams(2.0, 0.1)
    u_star = equilibrium_height(params)
    with pytest.raises(ValueError, match="same side"):
        find_positive_solution(params, (1.01 * u_star, 1.02 * u_star))
