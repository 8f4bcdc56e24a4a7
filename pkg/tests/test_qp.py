import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_qp
from gce_market.errors import ConvergenceError
from gce_market.model import Polyhedron, QuadraticFunction, SolverSettings
from gce_market.qp import (INFEASIBLE, OPTIMAL, UNBOUNDED, QuadraticProgram, dual_objective, kkt_residuals,
                           solve_lp, solve_qp)


def qp(Q, c, **poly):
    Q = np.atleast_2d(np.asarray(Q, float))
    return QuadraticProgram(QuadraticFunction(Q, np.asarray(c, float)), Polyhedron.build(Q.shape[0], **poly))


def test_bound_constrained_square():
    # min x^2 s.t. x >= 1
    sol = solve_qp(qp([[2.0]], [0.0], lower=1.0))
    assert sol.status == OPTIMAL
    assert sol.primal[0] == pytest.approx(1.0, abs=1e-7)
    assert sol.duals_lower[0] == pytest.approx(2.0, abs=1e-6)
    assert sol.objective_value == pytest.approx(1.0, abs=1e-7)


def test_equality_dual_is_marginal_cost_of_rhs():
    # min g1^2 + g2^2 s.t. g1 + g2 = b, g >= 0; optimum b^2/2, so d/db = b
    sol = solve_qp(qp(2 * np.eye(2), [0, 0], eq=([[1.0, 1.0]], [1.0]), lower=0.0))
    assert sol.primal == pytest.approx([0.5, 0.5], abs=1e-7)
    assert sol.duals_eq[0] == pytest.approx(1.0, abs=1e-6)
    eps = 1e-5
    up = solve_qp(qp(2 * np.eye(2), [0, 0], eq=([[1.0, 1.0]], [1.0 + eps]), lower=0.0)).objective_value
    dn = solve_qp(qp(2 * np.eye(2), [0, 0], eq=([[1.0, 1.0]], [1.0 - eps]), lower=0.0)).objective_value
    assert (up - dn) / (2 * eps) == pytest.approx(sol.duals_eq[0], rel=1e-4)


def test_mixed_linear_quadratic_matches_grid_search():
    # min x1^2 + x2 s.t. x1 + x2 = 1, x >= 0
    sol = solve_qp(qp([[2.0, 0.0], [0.0, 0.0]], [0.0, 1.0], eq=([[1.0, 1.0]], [1.0]), lower=0.0))
    grid = np.arange(0, 1 + 1e-12, 1e-4)
    vals = grid ** 2 + (1 - grid)
    assert sol.primal == pytest.approx([0.5, 0.5], abs=1e-6)
    assert sol.objective_value == pytest.approx(0.75, abs=1e-7)
    assert sol.objective_value <= vals.min() + 1e-9
    assert grid[np.argmin(vals)] == pytest.approx(0.5, abs=1e-4)


def test_lp_box():
    sol = solve_lp([-1.0], Polyhedron.build(1, lower=0.0, upper=2.0))
    assert sol.primal[0] == pytest.approx(2.0, abs=1e-7)
    assert sol.non_unique is False


def test_lp_point_is_unique():
    sol = solve_lp([0.0], Polyhedron.build(1, eq=([[1.0]], [3.0])))
    assert sol.primal[0] == pytest.approx(3.0, abs=1e-8)
    assert sol.non_unique is False


def test_lp_whole_face_optimal():
    sol = solve_lp([1.0, 1.0], Polyhedron.build(2, eq=([[1.0, 1.0]], [1.0]), lower=0.0))
    assert sol.objective_value == pytest.approx(1.0, abs=1e-7)
    assert sol.non_unique is True


def test_infeasible_gets_certificate():
    sol = solve_qp(qp(np.eye(2), [0, 0], eq=([[1.0, 1.0]], [3.0]), upper=1.0))
    assert sol.status == INFEASIBLE
    assert sol.certificate
    with pytest.raises(Exception):
        sol.raise_for_status("test")


def test_unbounded_lp_detected():
    sol = solve_lp([-1.0, 0.0], Polyhedron.build(2, lower=0.0, upper=[np.inf, 1.0]))
    assert sol.status == UNBOUNDED
    assert "direction" in sol.certificate or sol.certificate


def test_crossed_bounds_are_infeasible():
    sol = solve_qp(qp([[1.0]], [0.0], lower=2.0, upper=1.0))
    assert sol.status == INFEASIBLE


def test_fixed_variable_dual():
    # x pinned at 2 by equal bounds; min (x-3)^2 pushes up, so the upper side is active
    sol = solve_qp(qp([[2.0]], [-6.0], lower=2.0, upper=2.0))
    assert sol.primal[0] == pytest.approx(2.0)
    assert sol.duals_upper[0] - sol.duals_lower[0] == pytest.approx(2.0, abs=1e-6)


def test_redundant_equalities_are_dropped():
    sol = solve_qp(qp(np.eye(2), [0, 0], eq=([[1.0, 1.0], [2.0, 2.0]], [1.0, 2.0])))
    assert sol.status == OPTIMAL
    assert sol.primal == pytest.approx([0.5, 0.5], abs=1e-7)
    assert sol.dual_unique is False


def test_inconsistent_equalities_are_infeasible():
    sol = solve_qp(qp(np.eye(2), [0, 0], eq=([[1.0, 1.0], [2.0, 2.0]], [1.0, 3.0])))
    assert sol.status == INFEASIBLE


def test_scaling_objective_scales_duals():
    base = qp([[2.0, 0.5], [0.5, 1.0]], [1.0, -1.0], eq=([[1.0, 2.0]], [1.0]), lower=0.0)
    s1 = solve_qp(base)
    k = 7.5
    s2 = solve_qp(QuadraticProgram(base.objective.scaled(k), base.constraints))
    assert s2.primal == pytest.approx(s1.primal, abs=1e-7)
    assert s2.duals_eq == pytest.approx(k * s1.duals_eq, rel=1e-6, abs=1e-7)
    assert s2.duals_lower == pytest.approx(k * s1.duals_lower, rel=1e-6, abs=1e-6)


def test_deterministic_output():
    p = qp([[2.0, 0.5], [0.5, 1.0]], [1.0, -1.0], ineq=([[1.0, 1.0]], [0.5]), lower=-1.0)
    a, b = solve_qp(p), solve_qp(p)
    assert np.array_equal(a.primal, b.primal)
    assert np.array_equal(a.duals_ineq, b.duals_ineq)


def test_degenerate_lp_with_far_bounds():
    # nearly orthogonal objective over a face bounded only by 1e6 boxes; the
    # interior method stalls here and the simplex fallback must take over
    eq = np.array([[-1, 0, -1, 0, 1, 0, -1, 0], [0, -1, 0, -1, 0, 1, 0, -1], [0, 0, 0, 0, 0, 0, 1, 1]], float)
    ineq = np.zeros((2, 8))
    ineq[0, 6], ineq[1, 6] = 1.0, -1.0
    lo = np.r_[np.zeros(6), -np.inf, -np.inf]
    up = np.r_[np.full(4, np.inf), 1e6, 1e6, np.inf, np.inf]
    poly = Polyhedron(eq, np.zeros(3), ineq, np.full(2, 1e6), lo, up)
    c = np.r_[np.full(4, -7.6190476176936155), 7.61904762338043, 7.619047623380428, 0.0, 0.0]
    sol = solve_lp(c, poly)
    assert sol.status == OPTIMAL
    assert max(sol.kkt_residuals.values()) <= 1e-8
    assert poly.contains(sol.primal, tol=1e-6)


def test_max_iter_reports_residuals():
    p = qp([[2.0, 0.5], [0.5, 1.0]], [1.0, -1.0], eq=([[1.0, 2.0]], [1.0]), lower=0.0)
    sol = solve_qp(p, SolverSettings(tolerance=1e-8, max_iter=1))
    assert sol.status == "max_iter"
    assert set(sol.kkt_residuals) >= {"stationarity", "primal_feas", "dual_feas", "complementarity"}
    with pytest.raises(ConvergenceError):
        sol.raise_for_status()


@pytest.mark.parametrize("seed", range(40))
def test_random_psd_qp_satisfies_kkt(seed):
    prob = random_qp(seed)
    sol = solve_qp(prob)
    assert sol.status == OPTIMAL
    Q, c = prob.objective.quad, prob.objective.lin
    P = prob.constraints
    r = (Q @ sol.primal + c - P.eq_lhs.T @ sol.duals_eq + P.ineq_lhs.T @ sol.duals_ineq
         - sol.duals_lower + sol.duals_upper)
    assert np.max(np.abs(r)) <= 1e-6
    assert np.all(sol.duals_ineq >= -1e-9)
    slack = P.ineq_rhs - P.ineq_lhs @ sol.primal
    assert np.all(np.abs(sol.duals_ineq * slack) <= 1e-6)
    assert abs(sol.objective_value - dual_objective(prob.objective, P, sol)) <= 10 * 1e-8 * (1 + abs(sol.objective_value))
    assert max(sol.kkt_residuals.values()) <= 1e-8


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.1, 10.0), min_size=1, max_size=5), st.lists(st.floats(-5, 5), min_size=5, max_size=5))
def test_separable_box_qp_closed_form(diag, lin):
    n = len(diag)
    d = np.asarray(diag)
    c = np.asarray(lin[:n])
    sol = solve_qp(qp(np.diag(d), c, lower=-1.0, upper=1.0))
    assert sol.primal == pytest.approx(np.clip(-c / d, -1.0, 1.0), abs=1e-6)


def test_kkt_residuals_flag_wrong_duals():
    prob = qp([[2.0]], [0.0], lower=1.0)
    P = prob.constraints
    good = kkt_residuals(prob.objective, P, np.array([1.0]), np.zeros(0), np.zeros(0), np.array([2.0]), np.zeros(1))
    bad = kkt_residuals(prob.objective, P, np.array([1.0]), np.zeros(0), np.zeros(0), np.array([1.0]), np.zeros(1))
    assert max(good.values()) < 1e-12
    assert bad["stationarity"] > 0.1
