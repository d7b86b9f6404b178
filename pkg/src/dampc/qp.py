"""Convex quadratic programming behind a verified KKT contract.

Problems are solved by operator splitting (OSQP backend) and every
returned solution is checked against the KKT residual tolerance. When
the splitting solution is not accurate enough, an active-set refinement
re-solves the equality-constrained KKT system on the identified active
rows. Solver handles support warm starts and linear-term updates so the
consensus layer can re-solve the same problem cheaply many times.
"""

from dataclasses import dataclass, field

import numpy as np
import osqp
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import Infeasible, NumericalFailure, Unbounded
from .tolerances import FEAS_TOL, KKT_TOL, QP_REG

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"

_OSQP_SETTINGS = dict(
    verbose=False,
    eps_abs=1e-9,
    eps_rel=1e-9,
    eps_prim_inf=1e-9,
    eps_dual_inf=1e-9,
    max_iter=100000,
    polishing=True,
    polish_refine_iter=10,
    scaling=10,
    adaptive_rho_interval=50,  # iteration-based, keeps runs reproducible
    check_termination=25,
)


def _to_csc(m):
    if m is None:
        return None
    if sp.issparse(m):
        return m.tocsc()
    return sp.csc_matrix(np.atleast_2d(np.asarray(m, dtype=float)))


@dataclass
class QpProblem:
    """min 0.5 x'Px + q'x  s.t.  a_ub x <= b_ub,  a_eq x == b_eq.

    ``P`` must be symmetric positive semidefinite; a fixed regularization
    of QP_REG * I is added internally so the objective is strictly convex.
    Matrices may be dense arrays or scipy sparse matrices.
    """

    P: object
    q: np.ndarray
    a_ub: object = None
    b_ub: np.ndarray | None = None
    a_eq: object = None
    b_eq: np.ndarray | None = None

    def __post_init__(self):
        self.q = np.atleast_1d(np.asarray(self.q, dtype=float))
        n = self.q.size
        self.P = _to_csc(self.P)
        if self.P.shape != (n, n):
            raise ValueError("P has inconsistent shape")
        self.a_ub = _to_csc(self.a_ub) if self.a_ub is not None else sp.csc_matrix((0, n))
        self.a_eq = _to_csc(self.a_eq) if self.a_eq is not None else sp.csc_matrix((0, n))
        self.b_ub = (
            np.zeros(0) if self.b_ub is None else np.atleast_1d(np.asarray(self.b_ub, dtype=float))
        )
        self.b_eq = (
            np.zeros(0) if self.b_eq is None else np.atleast_1d(np.asarray(self.b_eq, dtype=float))
        )
        if self.a_ub.shape != (self.b_ub.size, n) or self.a_eq.shape != (self.b_eq.size, n):
            raise ValueError("constraint blocks have inconsistent shapes")

    @property
    def dim(self):
        return self.q.size

    def check_psd(self, tol=1e-8):
        dense = self.P.toarray()
        if np.max(np.abs(dense - dense.T)) > 1e-10:
            raise ValueError("P is not symmetric")
        w = np.linalg.eigvalsh(0.5 * (dense + dense.T))
        if w.min() < -tol:
            raise ValueError(f"P has negative eigenvalue {w.min():.2e}")


@dataclass
class QpResult:
    status: str
    x: np.ndarray | None = None
    objective: float = np.nan
    y_ub: np.ndarray | None = None
    y_eq: np.ndarray | None = None
    iterations: int = 0
    kkt_residual: float = np.nan


def kkt_residuals(problem, x, y_ub, y_eq):
    """(stationarity, primal, dual, complementarity) max-norm residuals."""
    n = problem.dim
    reg = QP_REG
    grad = problem.P @ x + reg * x + problem.q
    if problem.b_ub.size:
        grad = grad + problem.a_ub.T @ y_ub
    if problem.b_eq.size:
        grad = grad + problem.a_eq.T @ y_eq
    stat = float(np.max(np.abs(grad))) if n else 0.0
    primal = 0.0
    dual = 0.0
    comp = 0.0
    if problem.b_ub.size:
        slack = problem.b_ub - problem.a_ub @ x
        primal = max(primal, float(np.max(-slack, initial=0.0)))
        dual = max(dual, float(np.max(-y_ub, initial=0.0)))
        # scale-aware complementarity: large multipliers on active rows must
        # not fail the check through roundoff-level slacks
        pair = np.abs(y_ub * slack) / (1.0 + np.abs(y_ub) + np.abs(slack))
        comp = float(np.max(pair, initial=0.0))
    if problem.b_eq.size:
        primal = max(primal, float(np.max(np.abs(problem.a_eq @ x - problem.b_eq))))
    return stat, primal, dual, comp


class QpSolver:
    """Reusable solver handle for one QpProblem.

    ``update(q=..., b_ub=..., b_eq=...)`` changes the linear term or right
    hand sides without refactorizing; successive ``solve()`` calls warm
    start from the previous solution.
    """

    def __init__(self, problem, **overrides):
        self.problem = problem
        n = problem.dim
        self._n_eq = problem.b_eq.size
        self._n_ub = problem.b_ub.size
        a = sp.vstack([problem.a_eq, problem.a_ub], format="csc") if (
            self._n_eq + self._n_ub
        ) else sp.csc_matrix((0, n))
        self._a = a
        p_reg = (problem.P + QP_REG * sp.identity(n, format="csc")).tocsc()
        p_reg.sort_indices()
        a.sort_indices()
        self._l = np.concatenate([problem.b_eq, np.full(self._n_ub, -np.inf)])
        self._u = np.concatenate([problem.b_eq, problem.b_ub])
        settings = dict(_OSQP_SETTINGS)
        settings.update(overrides)
        self._eps = (settings["eps_abs"], settings["eps_rel"])
        self._solver = osqp.OSQP()
        self._solver.setup(P=p_reg, q=problem.q.copy(), A=a, l=self._l, u=self._u, **settings)
        self._last = None

    def update(self, q=None, b_ub=None, b_eq=None):
        if q is not None:
            self.problem.q = np.asarray(q, dtype=float)
            self._solver.update(q=self.problem.q)
        if b_ub is not None or b_eq is not None:
            if b_eq is not None:
                self.problem.b_eq = np.asarray(b_eq, dtype=float)
                self._l[: self._n_eq] = self.problem.b_eq
                self._u[: self._n_eq] = self.problem.b_eq
            if b_ub is not None:
                self.problem.b_ub = np.asarray(b_ub, dtype=float)
                self._u[self._n_eq :] = self.problem.b_ub
            self._solver.update(l=self._l, u=self._u)

    def warm_start(self, x=None, y=None):
        self._solver.warm_start(x=x, y=y)

    def solve(self, refine=True) -> QpResult:
        raw = self._solver.solve(raise_error=False)
        status = raw.info.status.strip()
        if status in ("primal infeasible", "primal infeasible inaccurate"):
            return QpResult(status=INFEASIBLE, iterations=raw.info.iter)
        if status in ("dual infeasible", "dual infeasible inaccurate"):
            # With the strict convexity regularization this signals numbers
            # going bad rather than a genuinely unbounded problem.
            raise Unbounded("QP reported dual infeasibility")
        if raw.x is None or np.any(~np.isfinite(raw.x)):
            raise NumericalFailure(f"QP solver returned status '{status}'")

        x = np.asarray(raw.x, dtype=float)
        y = np.asarray(raw.y, dtype=float) if raw.y is not None else np.zeros(self._a.shape[0])
        y_eq = y[: self._n_eq]
        y_ub = np.maximum(y[self._n_eq :], 0.0)
        result = self._finish(x, y_ub, y_eq, raw.info.iter)
        if result is not None:
            return result
        if refine:
            refined = self._active_set_refine(x, y_ub, y_eq)
            if refined is not None:
                result = self._finish(*refined, raw.info.iter)
                if result is not None:
                    return result
            rescue = self._tighten_and_resolve()
            if rescue is not None:
                return rescue
        resid = kkt_residuals(self.problem, x, y_ub, y_eq)
        raise NumericalFailure(
            f"QP solution failed the KKT contract (status '{status}', "
            f"stat/primal/dual/comp = {resid[0]:.2e}/{resid[1]:.2e}/"
            f"{resid[2]:.2e}/{resid[3]:.2e})"
        )

    def _tighten_and_resolve(self):
        """Rescue path: re-solve warm-started at much tighter tolerances.

        The operator-splitting termination test is scaled, so marginal
        unscaled residuals occasionally survive it; a short tightened
        continuation from the current iterate reliably clears the
        contract. Settings are restored afterwards.
        """
        try:
            self._solver.update_settings(eps_abs=1e-12, eps_rel=1e-12)
        except (AttributeError, ValueError):
            return None
        try:
            raw = self._solver.solve(raise_error=False)
            if raw.x is None or np.any(~np.isfinite(raw.x)):
                return None
            x = np.asarray(raw.x, dtype=float)
            y = np.asarray(raw.y, dtype=float)
            y_eq = y[: self._n_eq]
            y_ub = np.maximum(y[self._n_eq :], 0.0)
            result = self._finish(x, y_ub, y_eq, raw.info.iter)
            if result is not None:
                return result
            refined = self._active_set_refine(x, y_ub, y_eq)
            if refined is not None:
                return self._finish(*refined, raw.info.iter)
            return None
        finally:
            self._solver.update_settings(eps_abs=self._eps[0], eps_rel=self._eps[1])

    def _finish(self, x, y_ub, y_eq, iterations):
        stat, primal, dual, comp = kkt_residuals(self.problem, x, y_ub, y_eq)
        scale = 1.0 + float(np.max(np.abs(x)))
        if primal > FEAS_TOL * scale and primal > KKT_TOL:
            return None
        if max(stat, dual, comp) > KKT_TOL * scale:
            return None
        self._last = (x, y_ub, y_eq)
        obj = float(0.5 * x @ (self.problem.P @ x) + self.problem.q @ x)
        return QpResult(OPTIMAL, x, obj, y_ub, y_eq, iterations, max(stat, primal, dual, comp))

    def _active_set_refine(self, x, y_ub, y_eq, passes=12):
        """Solve the KKT system restricted to the apparent active set.

        Wrong-signed multipliers leave the working set and violated rows
        join it simultaneously each pass; a visited-set guard breaks
        cycling on degenerate faces. Returns None when no consistent
        active set is found.
        """
        problem = self.problem
        n = problem.dim
        slack = problem.b_ub - problem.a_ub @ x if self._n_ub else np.zeros(0)
        active = (y_ub > 1e-9) | (slack < 1e-7 * (1.0 + np.abs(problem.b_ub)))
        seen = set()
        best = None
        for _ in range(passes):
            key = active.tobytes()
            if key in seen:
                break
            seen.add(key)
            rows = [problem.a_eq] if self._n_eq else []
            rhs = [problem.b_eq] if self._n_eq else []
            idx = np.flatnonzero(active)
            if idx.size:
                rows.append(problem.a_ub[idx])
                rhs.append(problem.b_ub[idx])
            a_act = sp.vstack(rows, format="csc") if rows else sp.csc_matrix((0, n))
            b_act = np.concatenate(rhs) if rhs else np.zeros(0)
            m = a_act.shape[0]
            reg = 1e-9
            kkt = sp.bmat(
                [
                    [problem.P + QP_REG * sp.identity(n), a_act.T],
                    [a_act, -reg * sp.identity(m) if m else None],
                ],
                format="csc",
            )
            rhs_full = np.concatenate([-problem.q, b_act])
            try:
                lu = spla.splu(kkt.tocsc())
                sol = lu.solve(rhs_full)
                for _ in range(3):  # iterative refinement
                    sol = sol + lu.solve(rhs_full - kkt @ sol)
            except RuntimeError:
                return best
            x_new = sol[:n]
            nu = sol[n:]
            y_eq_new = nu[: self._n_eq]
            y_act = nu[self._n_eq :]
            y_ub_new = np.zeros(self._n_ub)
            if idx.size:
                y_ub_new[idx] = np.maximum(y_act, 0.0)
            wrong = y_act < -1e-9
            violated = (
                problem.a_ub @ x_new - problem.b_ub > 1e-9
                if self._n_ub
                else np.zeros(0, bool)
            )
            newly = violated & ~active
            if not np.any(wrong) and not np.any(newly):
                return x_new, y_ub_new, y_eq_new
            resid = max(kkt_residuals(problem, x_new, y_ub_new, y_eq_new))
            if np.isfinite(resid) and resid < 1e-4 and (best is None or resid < best[3]):
                best = (x_new, y_ub_new, y_eq_new, resid)
            if np.any(wrong):
                active[idx[wrong]] = False
            active |= violated
        return best[:3] if best is not None else None


def solve_qp(problem, **overrides) -> QpResult:
    """One-shot QP solve; see QpSolver for the reusable interface."""
    return QpSolver(problem, **overrides).solve()
