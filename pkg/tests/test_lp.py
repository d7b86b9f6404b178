import numpy as np
import pytest

from dampc.lp import INFEASIBLE, OPTIMAL, UNBOUNDED, LpProblem, dual_objective, solve_lp

from .oracles import brute_force_lp, random_lp_instance


def test_box_max_is_one():
    # max x s.t. 0 <= x <= 1  ->  (optimal, 1, 1)
    res = solve_lp(LpProblem(c=[-1.0], a_ub=[[1.0], [-1.0]], b_ub=[1.0, 0.0]))
    assert res.status == OPTIMAL
    assert res.x[0] == pytest.approx(1.0, abs=1e-9)
    assert -res.objective == pytest.approx(1.0, abs=1e-9)


def test_contradictory_bounds_infeasible():
    # 1 <= x <= 0 is empty
    res = solve_lp(LpProblem(c=[1.0], a_ub=[[1.0], [-1.0]], b_ub=[0.0, -1.0]))
    assert res.status == INFEASIBLE


def test_unbounded_direction():
    res = solve_lp(LpProblem(c=[-1.0], a_ub=[[-1.0]], b_ub=[0.0]))
    assert res.status == UNBOUNDED


def test_equality_constraints():
    # min x + y s.t. x + y = 1, x,y >= 0 -> objective 1
    res = solve_lp(
        LpProblem(
            c=[1.0, 1.0],
            a_ub=[[-1.0, 0.0], [0.0, -1.0]],
            b_ub=[0.0, 0.0],
            a_eq=[[1.0, 1.0]],
            b_eq=[1.0],
        )
    )
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(1.0, abs=1e-9)


def test_redundant_rows_handled():
    # duplicated equality row must not break the solve or the duals
    res = solve_lp(
        LpProblem(
            c=[1.0, 2.0],
            a_ub=[[-1.0, 0.0], [0.0, -1.0]],
            b_ub=[0.0, 0.0],
            a_eq=[[1.0, 1.0], [1.0, 1.0]],
            b_eq=[1.0, 1.0],
        )
    )
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(1.0, abs=1e-8)


def test_random_lps_match_vertex_enumeration():
    # randomized instances vs the brute-force vertex oracle (the acceptance
    # suite combines this batch with the QP batch for the 200-instance gate)
    rng = np.random.default_rng(7)
    for _ in range(120):
        c, a, b = random_lp_instance(rng)
        oracle = brute_force_lp(c, a, b)
        res = solve_lp(LpProblem(c=c, a_ub=a, b_ub=b))
        assert res.status == OPTIMAL
        assert res.objective == pytest.approx(oracle, abs=1e-7)


def test_duality_gap_zero():
    rng = np.random.default_rng(12)
    for _ in range(60):
        d = 4
        a = np.vstack([rng.normal(size=(8, d)), np.eye(d), -np.eye(d)])
        b = np.concatenate([rng.uniform(0.5, 2.0, size=8), np.full(2 * d, 3.0)])
        c = rng.normal(size=d)
        problem = LpProblem(c=c, a_ub=a, b_ub=b)
        res = solve_lp(problem)
        assert res.status == OPTIMAL
        assert dual_objective(problem, res) == pytest.approx(res.objective, abs=1e-6)


def test_lexicographic_tie_break():
    # every point of the segment x+y=1, x,y in [0,1] is optimal; the
    # lexicographically smallest is (0, 1)
    problem = LpProblem(
        c=[1.0, 1.0],
        a_ub=[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]],
        b_ub=[1.0, 0.0, 1.0, 0.0],
        a_eq=None,
        b_eq=None,
    )
    # force the optimal face to be the segment by bounding below
    problem = LpProblem(
        c=[0.0, 0.0],
        a_ub=problem.a_ub,
        b_ub=problem.b_ub,
        a_eq=[[1.0, 1.0]],
        b_eq=[1.0],
    )
    res = solve_lp(problem, lexicographic=True)
    assert res.status == OPTIMAL
    assert np.allclose(res.x, [0.0, 1.0], atol=1e-9)


def test_degenerate_problem_terminates():
    # many redundant constraints through the same vertex (degeneracy)
    a = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, 2.0], [1.0, 2.0], [2.0, 1.0]])
    b = np.zeros(6)
    res = solve_lp(LpProblem(c=[-1.0, -1.0], a_ub=a, b_ub=b))
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(0.0, abs=1e-10)
