import numpy as np
import pytest

from dampc.qp import INFEASIBLE, OPTIMAL, QpProblem, QpSolver, kkt_residuals, solve_qp

from .oracles import kkt_equality_qp, random_equality_qp_instance


def test_scalar_bound():
    # min x^2 s.t. x >= 1  ->  x* = 1
    res = solve_qp(QpProblem(P=[[2.0]], q=[0.0], a_ub=[[-1.0]], b_ub=[-1.0]))
    assert res.status == OPTIMAL
    assert res.x[0] == pytest.approx(1.0, abs=1e-7)


def test_symmetric_projection():
    # min (x-2)^2 + (y-2)^2 s.t. x + y <= 2  ->  (1, 1)
    res = solve_qp(
        QpProblem(P=2.0 * np.eye(2), q=[-4.0, -4.0], a_ub=[[1.0, 1.0]], b_ub=[2.0])
    )
    assert res.status == OPTIMAL
    assert np.allclose(res.x, [1.0, 1.0], atol=1e-7)


def test_infeasible_detected():
    res = solve_qp(
        QpProblem(P=np.eye(1), q=[0.0], a_ub=[[1.0], [-1.0]], b_ub=[0.0, -1.0])
    )
    assert res.status == INFEASIBLE


def test_random_equality_qps_match_kkt_oracle():
    rng = np.random.default_rng(21)
    for _ in range(120):
        P, q, a_eq, b_eq = random_equality_qp_instance(rng)
        oracle = kkt_equality_qp(P, q, a_eq, b_eq)
        res = solve_qp(QpProblem(P=P, q=q, a_eq=a_eq, b_eq=b_eq))
        assert res.status == OPTIMAL
        assert np.max(np.abs(res.x - oracle)) < 1e-6


def test_kkt_residuals_enforced_on_return():
    rng = np.random.default_rng(3)
    for _ in range(25):
        n = 5
        root = rng.normal(size=(n, n))
        P = root.T @ root + 0.1 * np.eye(n)
        q = rng.normal(size=n)
        a_ub = rng.normal(size=(8, n))
        b_ub = rng.uniform(0.2, 1.5, size=8)
        res = solve_qp(QpProblem(P=P, q=q, a_ub=a_ub, b_ub=b_ub))
        assert res.status == OPTIMAL
        assert res.kkt_residual <= 1e-6 * (1.0 + np.max(np.abs(res.x)))


def test_solver_handle_update_and_warm_start():
    problem = QpProblem(
        P=2.0 * np.eye(2),
        q=[0.0, 0.0],
        a_ub=[[-1.0, 0.0], [0.0, -1.0]],
        b_ub=[-1.0, -1.0],
    )
    solver = QpSolver(problem)
    first = solver.solve()
    assert np.allclose(first.x, [1.0, 1.0], atol=1e-7)
    solver.update(q=np.array([10.0, 10.0]))
    second = solver.solve()
    assert np.allclose(second.x, [1.0, 1.0], atol=1e-7)
    solver.update(q=np.array([-10.0, -10.0]))
    third = solver.solve()
    assert np.allclose(third.x, [5.0, 5.0], atol=1e-6)


def test_psd_validation():
    problem = QpProblem(P=np.diag([1.0, -1.0]), q=[0.0, 0.0])
    with pytest.raises(ValueError):
        problem.check_psd()
