"""Dense linear programming by two-phase primal simplex.

The solver targets the small dense LPs used throughout the package
(support values, set-membership bound updates, random test instances).
Pivoting follows Bland's rule, so the method terminates on degenerate
problems and is bit-reproducible. Optimizer ties can additionally be
broken by picking the lexicographically smallest optimal point.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalFailure
from .tolerances import FEAS_TOL

_PIVOT_TOL = 1e-10
_COST_TOL = 1e-10

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


@dataclass
class LpProblem:
    """min c @ x  s.t.  a_ub @ x <= b_ub,  a_eq @ x == b_eq  (x free)."""

    c: np.ndarray
    a_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        d = self.c.size
        if self.a_ub is None:
            self.a_ub = np.zeros((0, d))
            self.b_ub = np.zeros(0)
        if self.a_eq is None:
            self.a_eq = np.zeros((0, d))
            self.b_eq = np.zeros(0)
        self.a_ub = np.atleast_2d(np.asarray(self.a_ub, dtype=float))
        self.a_eq = np.atleast_2d(np.asarray(self.a_eq, dtype=float))
        self.b_ub = np.atleast_1d(np.asarray(self.b_ub, dtype=float))
        self.b_eq = np.atleast_1d(np.asarray(self.b_eq, dtype=float))
        if self.a_ub.shape != (self.b_ub.size, d):
            raise ValueError("inequality block has inconsistent shape")
        if self.a_eq.shape != (self.b_eq.size, d):
            raise ValueError("equality block has inconsistent shape")

    @property
    def dim(self):
        return self.c.size


@dataclass
class LpResult:
    status: str
    x: np.ndarray | None = None
    objective: float = np.nan
    # Multipliers satisfying c + a_ub' y_ub - a_eq' y_eq = 0 with y_ub >= 0.
    y_ub: np.ndarray | None = None
    y_eq: np.ndarray | None = None
    iterations: int = 0


def _pivot(tableau, basis, row, col):
    tableau[row] /= tableau[row, col]
    factors = tableau[:, col].copy()
    factors[row] = 0.0
    tableau -= np.outer(factors, tableau[row])
    basis[row] = col


def _simplex_phase(tableau, basis, cost, allowed, max_iter):
    """Primal simplex with Bland's rule on a tableau in canonical form.

    ``tableau`` is m x (n+1) with the rightmost column holding the current
    basic solution; ``allowed`` marks columns eligible to enter the basis.
    """
    it = 0
    while True:
        it += 1
        if it > max_iter:
            raise NumericalFailure("simplex iteration limit reached")
        reduced = cost - cost[basis] @ tableau[:, :-1]
        reduced[~allowed] = 0.0
        candidates = np.flatnonzero(reduced < -_COST_TOL)
        if candidates.size == 0:
            return it, OPTIMAL
        col = candidates[0]  # Bland: smallest eligible index
        positive = np.flatnonzero(tableau[:, col] > _PIVOT_TOL)
        if positive.size == 0:
            return it, UNBOUNDED
        ratios = tableau[positive, -1] / tableau[positive, col]
        best = ratios.min()
        ties = positive[ratios <= best + _PIVOT_TOL * (1.0 + abs(best))]
        row = ties[np.argmin(basis[ties])]  # Bland: smallest basis index
        _pivot(tableau, basis, row, col)


def _solve_standard(a, b, cost, max_iter):
    """Two-phase simplex for min cost@z s.t. a z = b, z >= 0 (b >= 0).

    Returns (status, z, (basis, tableau), iterations). Artificial columns
    occupy indices n..n+m-1; redundant rows keep a zero-level artificial in
    the basis so the final basis matrix stays square.
    """
    m, n = a.shape
    tableau = np.hstack([a, np.eye(m), b[:, None]])
    basis = np.arange(n, n + m)
    phase1_cost = np.concatenate([np.zeros(n), np.ones(m)])
    allowed = np.ones(n + m, dtype=bool)
    it1, status = _simplex_phase(tableau, basis, phase1_cost, allowed, max_iter)
    if status != OPTIMAL:
        raise NumericalFailure("phase one terminated abnormally")
    if phase1_cost[basis] @ tableau[:, -1] > 1e-8:
        return INFEASIBLE, None, None, it1

    # Drive leftover artificials out of the basis where possible. Rows whose
    # artificial cannot leave are redundant; the artificial stays basic at
    # zero level and is barred from phase two.
    for i in range(m):
        if basis[i] >= n:
            pivots = np.flatnonzero(np.abs(tableau[i, :n]) > 1e-9)
            if pivots.size:
                _pivot(tableau, basis, i, pivots[0])

    allowed = np.zeros(n + m, dtype=bool)
    allowed[:n] = True
    phase2_cost = np.concatenate([cost, np.zeros(m)])
    it2, status = _simplex_phase(tableau, basis, phase2_cost, allowed, max_iter)
    if status == UNBOUNDED:
        return UNBOUNDED, None, None, it1 + it2
    z = np.zeros(n)
    in_range = basis < n
    z[basis[in_range]] = tableau[in_range, -1]
    return OPTIMAL, z, (basis, tableau), it1 + it2


def _standard_form(problem):
    """Split free variables and add slacks: returns (a, b, cost, signs)."""
    n_ub = problem.b_ub.size
    n_eq = problem.b_eq.size
    a_rows = np.vstack([problem.a_ub, problem.a_eq])
    b = np.concatenate([problem.b_ub, problem.b_eq])
    slack = np.vstack([np.eye(n_ub), np.zeros((n_eq, n_ub))])
    a = np.hstack([a_rows, -a_rows, slack])
    signs = np.where(b < 0, -1.0, 1.0)
    return a * signs[:, None], b * signs, np.concatenate(
        [problem.c, -problem.c, np.zeros(n_ub)]
    ), signs


def solve_lp(problem, lexicographic=False, max_iter=None) -> LpResult:
    """Solve an LpProblem.

    With ``lexicographic=True`` the returned optimizer is the
    lexicographically smallest point of the optimal face, found by a
    sequence of auxiliary solves that pin one coordinate at a time.
    """
    d = problem.dim
    if max_iter is None:
        max_iter = 2000 + 200 * (d + problem.b_ub.size + problem.b_eq.size)

    a, b, cost, signs = _standard_form(problem)
    status, z, basis_info, iters = _solve_standard(a, b, cost, max_iter)
    if status != OPTIMAL:
        return LpResult(status=status, iterations=iters)

    x = z[:d] - z[d : 2 * d]
    y_ub, y_eq = _recover_duals(problem, a, cost, signs, basis_info)
    if lexicographic:
        x = _lex_refine(problem, x, max_iter)

    result = LpResult(OPTIMAL, x, float(problem.c @ x), y_ub, y_eq, iters)
    _assert_primal_feasible(problem, result)
    return result


def _recover_duals(problem, a, cost, signs, basis_info):
    basis, _ = basis_info
    m = a.shape[0]
    n = a.shape[1]
    bmat = np.empty((m, m))
    cb = np.empty(m)
    for k, idx in enumerate(basis):
        if idx < n:
            bmat[:, k] = a[:, idx]
            cb[k] = cost[idx]
        else:  # zero-level artificial on a redundant row
            bmat[:, k] = 0.0
            bmat[idx - n, k] = 1.0
            cb[k] = 0.0
    try:
        y = np.linalg.solve(bmat.T, cb)
    except np.linalg.LinAlgError:
        y, *_ = np.linalg.lstsq(bmat.T, cb, rcond=None)
    y_hat = signs * y  # multipliers for the original row orientation
    n_ub = problem.b_ub.size
    y_ub = np.maximum(-y_hat[:n_ub], 0.0)
    y_eq = y_hat[n_ub:]
    return y_ub, y_eq


def _lex_refine(problem, x, max_iter):
    """Minimize coordinates in index order over the optimal face."""
    d = problem.dim
    opt = float(problem.c @ x)
    eqs_a = [problem.a_eq, problem.c[None, :]]
    eqs_b = [problem.b_eq, np.array([opt])]
    current = x.copy()
    for i in range(d):
        sub = LpProblem(
            c=np.eye(d)[i],
            a_ub=problem.a_ub,
            b_ub=problem.b_ub,
            a_eq=np.vstack(eqs_a),
            b_eq=np.concatenate(eqs_b),
        )
        a, b, cost, _ = _standard_form(sub)
        status, z, _, _ = _solve_standard(a, b, cost, max_iter)
        if status != OPTIMAL:
            break  # numerical edge: keep the best point found so far
        current = z[:d] - z[d : 2 * d]
        eqs_a.append(np.eye(d)[i][None, :])
        eqs_b.append(np.array([current[i]]))
    return current


def _assert_primal_feasible(problem, result):
    x = result.x
    res = 0.0
    if problem.b_ub.size:
        res = max(res, float(np.max(problem.a_ub @ x - problem.b_ub)))
    if problem.b_eq.size:
        res = max(res, float(np.max(np.abs(problem.a_eq @ x - problem.b_eq))))
    if res > FEAS_TOL:
        raise NumericalFailure(f"simplex returned infeasible point (residual {res:.2e})")


def dual_objective(problem, result):
    """Dual objective b_eq' y_eq - b_ub' y_ub of an optimal LpResult."""
    val = 0.0
    if result.y_eq is not None and problem.b_eq.size:
        val += float(problem.b_eq @ result.y_eq)
    if result.y_ub is not None and problem.b_ub.size:
        val -= float(problem.b_ub @ result.y_ub)
    return val
