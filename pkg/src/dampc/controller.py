"""Consensus ADMM controller for the structured tube MPC problem.

Each time step, every agent owns a local quadratic program over its own
private variables plus local copies of the shared (z, alpha, xhat)
blocks of its whole neighborhood. The coordinator iterates the three
general-form consensus steps: local minimization with the quadratic
disagreement penalty, averaging of the copies into the global vector,
and dual ascent. The averaged decision is then refined by one exact
solve of the assembled structured program (same variables, single copy),
which certifies feasibility to solver tolerance; the refined decision is
what the closed loop applies and what the tube/candidate checks audit.

A centralized solver for the unstructured problem (full multiplier
matrix on the original parameter set, vertex combinations of the full
network tube) is provided as the equivalence oracle for small networks.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DimensionTooLarge, EmptyParamSet, Infeasible, LocalInfeasible
from .formulation import (
    Layout,
    agent_step_matrices,
    build_agent_template,
    build_geometry,
    build_global_layout,
    explicit_multiplier_equalities,
    local_column_indices,
    make_step_data,
    shared_block_indices,
    true_objective,
)
from .offline import build_redundant_theta, compute_offline_constants
from .poly import box_vertices
from .qp import INFEASIBLE as QP_INFEASIBLE
from .qp import QpProblem, QpSolver
from .tolerances import QP_REG


def build_agent_cost(cfg, lay, geoms, s):
    """Agent s's own stage costs as a sparse quadratic (2x convention)."""
    rows, cols, vals = [], [], []

    def add_block(ridx, cidx, mat):
        mat = np.asarray(mat, dtype=float)
        r_grid, c_grid = np.meshgrid(ridx, cidx, indexing="ij")
        rows.extend(r_grid.ravel().tolist())
        cols.extend(c_grid.ravel().tolist())
        vals.extend(mat.ravel().tolist())

    design = cfg.designs[s]
    geom = geoms[s]
    for l in range(cfg.horizon):
        x_own = lay.idx(("xhat", s, l))
        add_block(x_own, x_own, 2.0 * design.Q)
        v_idx = lay.idx(("v", s, l))
        xh_nb = np.concatenate([lay.idx(("xhat", sig, l)) for sig in geom.neighbors])
        K = design.K
        add_block(xh_nb, xh_nb, 2.0 * K.T @ design.R @ K)
        add_block(xh_nb, v_idx, 2.0 * K.T @ design.R)
        add_block(v_idx, xh_nb, 2.0 * design.R @ K)
        add_block(v_idx, v_idx, 2.0 * design.R)
    xN = lay.idx(("xhatN", s))
    add_block(xN, xN, 2.0 * design.P)
    P = sp.csc_matrix((vals, (rows, cols)), shape=(lay.total, lay.total))
    P.sum_duplicates()
    return P


@dataclass
class LocalDecision:
    """One agent's accepted tube MPC decision."""

    z: np.ndarray       # (N+1, n), z[N] == 0
    v: np.ndarray       # (N, m)
    alpha: np.ndarray   # (N+1,)
    xhat: np.ndarray    # (N+1, n)
    uhat: np.ndarray    # (N, m)
    lam: dict           # (stage, combo index) -> multiplier matrix


@dataclass
class ConsensusReport:
    iterations: int = 0
    primal_residuals: list = field(default_factory=list)
    dual_residuals: list = field(default_factory=list)
    converged: bool = False
    consensus_cost: float = np.nan
    final_cost: float = np.nan
    agent_costs: list = field(default_factory=list)
    candidate_residual: float = np.nan
    candidate_feasible: bool = True
    tube_margin: float = np.nan


class DampcController:
    """Per-run controller: templates, solver handles, consensus state."""

    def __init__(self, cfg, tubes=None, structure=None, rho=None, max_iters=None,
                 tol=None):
        self.cfg = cfg
        self.tubes = tubes if tubes is not None else compute_offline_constants(cfg)
        self.structure = (
            structure if structure is not None else build_redundant_theta(cfg)
        )
        self.rho = cfg.rho if rho is None else float(rho)
        self.max_iters = cfg.admm_max_iters if max_iters is None else int(max_iters)
        self.tol = cfg.admm_tol if tol is None else float(tol)
        self.geoms = build_geometry(cfg, self.tubes, self.structure)
        self.lay = build_global_layout(cfg, self.geoms, self.structure)
        self.templates = [
            build_agent_template(cfg, self.lay, self.geoms, self.structure, s)
            for s in range(cfg.n_agents)
        ]
        self.agent_costs = [
            build_agent_cost(cfg, self.lay, self.geoms, s)
            for s in range(cfg.n_agents)
        ]
        self.P_global = sum(self.agent_costs[1:], start=self.agent_costs[0]).tocsc()
        self.local_cols = [
            local_column_indices(cfg, self.lay, self.geoms, s)
            for s in range(cfg.n_agents)
        ]
        self.shared_total = min(
            self.lay.offsets[("v", s, 0)] for s in range(cfg.n_agents)
        )
        self.c_maps = [
            np.concatenate(
                [shared_block_indices(cfg, self.lay, sig) for sig in a.neighbors]
            )
            for a in cfg.agents
        ]
        counts = np.zeros(self.lay.total)
        for cm in self.c_maps:
            counts[cm] += 1.0
        self.share_counts = counts[: self.shared_total]
        self._local_solvers = [None] * cfg.n_agents
        self._global_solver = None
        self._candidate_solver = None
        self.q_global = np.zeros(self.lay.total)
        self._warm_T = None
        self._warm_Y = None

    # --- per-step matrix assembly -------------------------------------------

    def _assemble(self, step):
        mats = []
        for s in range(self.cfg.n_agents):
            a_ineq, b_ineq, a_eq, b_eq = agent_step_matrices(
                self.cfg, self.templates[s], self.geoms[s], step
            )
            if not self.geoms[s].box_mode and ("lam", s) in self.lay.sizes:
                a_mult, b_mult = explicit_multiplier_equalities(
                    self.cfg, self.lay, self.geoms[s], self.structure, s
                )
                a_eq = sp.vstack([a_eq, a_mult], format="csc")
                b_eq = np.concatenate([b_eq, b_mult])
            mats.append((a_ineq, b_ineq, a_eq, b_eq))
        return mats

    def _local_solver(self, s, mats, step):
        a_ineq, b_ineq, a_eq, b_eq = mats[s]
        template = self.templates[s]
        cfg = self.cfg
        cols = self.local_cols[s]
        n_c = sum(
            len(shared_block_indices(cfg, self.lay, sig))
            for sig in cfg.agents[s].neighbors
        )
        pin_vals = [
            step.x[cfg.agent_state_slice(sig)] for sig in template.copy_pin_agents
        ]
        b_eq_l = np.concatenate([b_eq] + pin_vals) if pin_vals else b_eq
        b_ineq_l = np.concatenate([b_ineq, template.copy_b_ineq])
        if self._local_solvers[s] is None:
            a_ineq_l = sp.vstack([a_ineq, template.copy_ineq], format="csc")[:, cols].tocsc()
            a_eq_l = sp.vstack([a_eq, template.copy_eq], format="csc")[:, cols].tocsc()
            P_l = self.agent_costs[s][cols][:, cols].tocsc()
            rho_diag = np.zeros(cols.size)
            rho_diag[:n_c] = self.rho
            P_l = (P_l + sp.diags(rho_diag)).tocsc()
            problem = QpProblem(
                P=P_l, q=self.q_global[cols].copy(), a_ub=a_ineq_l,
                b_ub=b_ineq_l, a_eq=a_eq_l, b_eq=b_eq_l,
            )
            self._local_solvers[s] = (QpSolver(problem, eps_abs=3e-9, eps_rel=3e-9), n_c)
        else:
            solver, _ = self._local_solvers[s]
            a_ineq_l = sp.vstack([a_ineq, template.copy_ineq], format="csc")[:, cols].tocsc()
            a_eq_l = sp.vstack([a_eq, template.copy_eq], format="csc")[:, cols].tocsc()
            self._update_matrix(solver, a_ineq_l, a_eq_l)
            solver.update(b_ub=b_ineq_l, b_eq=b_eq_l)
        return self._local_solvers[s]

    @staticmethod
    def _update_matrix(solver, a_ineq, a_eq):
        problem = solver.problem
        stacked = sp.vstack([a_eq, a_ineq], format="csc")
        stacked.sort_indices()
        if stacked.nnz != solver._a.nnz:
            raise RuntimeError("constraint sparsity pattern changed between steps")
        solver._a = stacked
        problem.a_ub = a_ineq
        problem.a_eq = a_eq
        solver._solver.update(Ax=stacked.data)

    def _global_qp(self, mats, warm=None):
        a_ineq = sp.vstack([m[0] for m in mats], format="csc")
        b_ineq = np.concatenate([m[1] for m in mats])
        a_eq = sp.vstack([m[2] for m in mats], format="csc")
        b_eq = np.concatenate([m[3] for m in mats])
        if self._global_solver is None:
            problem = QpProblem(
                P=self.P_global, q=self.q_global.copy(), a_ub=a_ineq,
                b_ub=b_ineq, a_eq=a_eq, b_eq=b_eq,
            )
            self._global_solver = QpSolver(problem, eps_abs=1e-9, eps_rel=1e-9)
        else:
            self._update_matrix(self._global_solver, a_ineq, a_eq)
            self._global_solver.update(b_ub=b_ineq, b_eq=b_eq)
        if warm is not None:
            self._global_solver.warm_start(x=warm)
        return self._global_solver

    # --- consensus iterations -------------------------------------------------

    def admm_solve(self, step, report=None, warm_start=True, mats=None):
        """Run the consensus iterations for one step.

        Returns (mats, report, xg) where xg stacks the averaged shared
        vector with the agents' private variables.
        """
        cfg = self.cfg
        mats = self._assemble(step) if mats is None else mats
        report = report if report is not None else ConsensusReport()

        S = cfg.n_agents
        T = np.zeros(self.shared_total)
        Y = [np.zeros(cm.size) for cm in self.c_maps]
        if warm_start and self._warm_T is not None:
            T = self._warm_T.copy()
            Y = [y.copy() for y in self._warm_Y]

        solvers = [self._local_solver(s, mats, step) for s in range(S)]
        C = [np.zeros(cm.size) for cm in self.c_maps]
        E = [None] * S
        converged = False
        it = 0
        for it in range(1, self.max_iters + 1):
            for s in range(S):
                solver, n_c = solvers[s]
                q = self.q_global[self.local_cols[s]].copy()
                q[:n_c] = Y[s] - self.rho * T[self.c_maps[s]]
                solver.update(q=q)
                res = solver.solve()
                if res.status != "optimal":
                    raise LocalInfeasible(s, f"status {res.status}")
                C[s] = res.x[:n_c]
                E[s] = res.x[n_c:]
            T_old = T
            acc = np.zeros(self.shared_total)
            for s in range(S):
                acc[self.c_maps[s]] += C[s]
            T = acc / self.share_counts
            primal_sq = 0.0
            for s in range(S):
                diff = C[s] - T[self.c_maps[s]]
                Y[s] = Y[s] + self.rho * diff
                primal_sq += float(diff @ diff)
            primal = np.sqrt(primal_sq)
            dual = self.rho * float(np.linalg.norm((T - T_old) * np.sqrt(self.share_counts)))
            c_norm = max(
                float(np.linalg.norm(np.concatenate(C))), float(np.linalg.norm(T)), 1.0
            )
            y_norm = max(
                float(np.linalg.norm(np.concatenate(Y))),
                self.rho * float(np.linalg.norm(T)),
                1.0,
            )
            report.primal_residuals.append(primal)
            report.dual_residuals.append(dual)
            if primal <= self.tol * c_norm and dual <= self.tol * y_norm:
                converged = True
                break
        report.iterations = it
        report.converged = converged

        xg = np.zeros(self.lay.total)
        xg[: self.shared_total] = T
        for s in range(S):
            priv = self.local_cols[s][self.c_maps[s].size :]
            xg[priv] = E[s]
        report.consensus_cost = true_objective(cfg, self.lay, self.geoms, xg)

        self._warm_T = T
        self._warm_Y = Y
        return mats, report, xg

    def refine(self, mats, xg_warm):
        solver = self._global_qp(mats, warm=xg_warm)
        res = solver.solve()
        if res.status == QP_INFEASIBLE:
            raise Infeasible("structured tube MPC program is infeasible")
        return res.x

    def solve_step(self, step, warm_start=True, refine=True, mats=None):
        mats, report, xg = self.admm_solve(step, warm_start=warm_start, mats=mats)
        if refine:
            xg = self.refine(mats, xg)
        report.final_cost = true_objective(self.cfg, self.lay, self.geoms, xg)
        report.agent_costs = [
            float(xg @ (self.agent_costs[s] @ xg)) * 0.5
            for s in range(self.cfg.n_agents)
        ]
        decisions = self.extract_decisions(xg, step)
        return decisions, report, xg, mats

    # --- decision extraction ----------------------------------------------------

    def extract_decisions(self, xg, step):
        cfg = self.cfg
        N = cfg.horizon
        decisions = []
        for s, agent in enumerate(cfg.agents):
            geom = self.geoms[s]
            z = np.zeros((N + 1, agent.n))
            alpha = np.zeros(N + 1)
            xhat = np.zeros((N + 1, agent.n))
            v = np.zeros((N, agent.m))
            for l in range(N):
                z[l] = xg[self.lay.sl(("z", s, l))]
                alpha[l] = xg[self.lay.offsets[("alpha", s, l)]]
                xhat[l] = xg[self.lay.sl(("xhat", s, l))]
                v[l] = xg[self.lay.sl(("v", s, l))]
            alpha[N] = xg[self.lay.offsets[("alphaN", s)]]
            xhat[N] = xg[self.lay.sl(("xhatN", s))]
            uhat = np.zeros((N, agent.m))
            for l in range(N):
                xh_nb = np.concatenate(
                    [xg[self.lay.sl(("xhat", sig, l))] for sig in geom.neighbors]
                )
                uhat[l] = geom.K @ xh_nb + v[l]
            lam = self._certificates(s, xg, step)
            decisions.append(
                LocalDecision(z=z, v=v, alpha=alpha, xhat=xhat, uhat=uhat, lam=lam)
            )
        return decisions

    def _regressor_rows(self, s, xg, l):
        """g matrices per combo: (n_combo, n_x, p) at stage l."""
        geom = self.geoms[s]
        cfg = self.cfg
        z_nb = np.concatenate(
            [xg[self.lay.sl(("z", sig, l))] for sig in geom.neighbors]
        )
        alpha_rep = np.concatenate(
            [
                np.full(cfg.agents[sig].n, xg[self.lay.offsets[("alpha", sig, l)]])
                for sig in geom.neighbors
            ]
        )
        X = z_nb[None, :] + geom.combo_states * alpha_rep[None, :]
        v_l = xg[self.lay.sl(("v", s, l))]
        G = np.zeros((X.shape[0], geom.n_x, geom.p))
        for i in range(geom.p):
            img = X @ geom.a_cl[i + 1].T + (geom.b_blocks[i + 1] @ v_l)[None, :]
            G[:, :, i] = img @ geom.H_x.T
        return X, G

    def _certificates(self, s, xg, step):
        """Nonnegative multiplier matrices for every (stage, combo).

        Box-mode agents get the closed-form positive/negative-part
        construction on their axis rows; explicit-mode agents read the
        multiplier variables directly.
        """
        geom = self.geoms[s]
        block = self.structure.blocks[s]
        N = self.cfg.horizon
        lam = {}
        if not geom.box_mode:
            if ("lam", s) not in self.lay.sizes:
                return lam
            flat = xg[self.lay.sl(("lam", s))]
            n_combo = len(geom.combos)
            for l in range(N):
                for c_i in range(n_combo):
                    base = ((l * n_combo + c_i) * geom.n_x) * block.n_rows
                    mat = flat[base : base + geom.n_x * block.n_rows]
                    lam[(l, c_i)] = mat.reshape(geom.n_x, block.n_rows)
            return lam
        for l in range(N):
            _, G = self._regressor_rows(s, xg, l)
            for c_i in range(len(geom.combos)):
                mat = np.zeros((geom.n_x, block.n_rows))
                for i in range(geom.p):
                    r_ub, c_ub = block.ub_rows[i][0]
                    r_lb, c_lb = block.lb_rows[i][0]
                    g = G[c_i, :, i]
                    mat[:, r_ub] += np.maximum(g, 0.0) / c_ub
                    mat[:, r_lb] += np.maximum(-g, 0.0) / (-c_lb)
                lam[(l, c_i)] = mat
        return lam

    # --- tube verification and candidate ----------------------------------------

    def verify_tube(self, xg, step, tol=1e-6):
        """Brute-force one-step inclusion check, independent of multipliers.

        For every stage, vertex combination and parameter-set vertex, the
        propagated tube state must remain in the next cross-section with
        the worst-case disturbance row offsets. Returns the worst margin
        (negative is a violation beyond ``tol``).
        """
        cfg = self.cfg
        N = cfg.horizon
        worst = -np.inf
        for s in range(cfg.n_agents):
            geom = self.geoms[s]
            lb, ub = step.bounds[s]
            if geom.p:
                th_verts = box_vertices(lb, ub).vertices
            else:
                th_verts = np.zeros((1, 0))
            for l in range(N):
                X, G = self._regressor_rows(s, xg, l)
                v_l = xg[self.lay.sl(("v", s, l))]
                base = (X @ geom.a_cl[0].T + (geom.b_blocks[0] @ v_l)[None, :]) @ geom.H_x.T
                if l < N - 1:
                    z_next = xg[self.lay.sl(("z", s, l + 1))]
                    alpha_next = xg[self.lay.offsets[("alpha", s, l + 1)]]
                else:
                    z_next = np.zeros(geom.n)
                    alpha_next = xg[self.lay.offsets[("alphaN", s)]]
                offs = geom.H_x @ z_next
                vals = base - offs[None, :] + geom.w_bar[None, :] - alpha_next
                if geom.p:
                    param_part = np.einsum("cxp,vp->cvx", G, th_verts)
                    total = vals[:, None, :] + param_part
                else:
                    total = vals[:, None, :]
                worst = max(worst, float(total.max()))
        return -worst  # margin: >= -tol means no violation

    def candidate_vector(self, prev_xg, step):
        """Shift the previous decision one stage and re-roll the estimate
        trajectory; returns (candidate xg, required alpha_N per agent)."""
        cfg = self.cfg
        N = cfg.horizon
        xg = np.zeros(self.lay.total)
        for s in range(cfg.n_agents):
            for l in range(N):
                src_z = (
                    prev_xg[self.lay.sl(("z", s, l + 1))]
                    if l < N - 1
                    else np.zeros(cfg.agents[s].n)
                )
                xg[self.lay.sl(("z", s, l))] = src_z
                src_a = (
                    prev_xg[self.lay.offsets[("alpha", s, l + 1)]]
                    if l < N - 1
                    else prev_xg[self.lay.offsets[("alphaN", s)]]
                )
                xg[self.lay.offsets[("alpha", s, l)]] = src_a
                if l < N - 1:
                    xg[self.lay.sl(("v", s, l))] = prev_xg[self.lay.sl(("v", s, l + 1))]
        # certainty-equivalence re-roll from the measured state
        xs = step.x.copy()
        for l in range(N):
            for s in range(cfg.n_agents):
                xg[self.lay.sl(("xhat", s, l))] = xs[cfg.agent_state_slice(s)]
            nxt = np.zeros_like(xs)
            for s, agent in enumerate(cfg.agents):
                geom = self.geoms[s]
                th = step.theta_hat[s]
                a_cl = geom.a_cl[0].copy()
                b_th = geom.b_blocks[0].copy()
                for i in range(geom.p):
                    a_cl = a_cl + th[i] * geom.a_cl[i + 1]
                    b_th = b_th + th[i] * geom.b_blocks[i + 1]
                xh_nb = xs[cfg.nbhd_state_indices(s)]
                nxt[cfg.agent_state_slice(s)] = a_cl @ xh_nb + b_th @ xg[
                    self.lay.sl(("v", s, l))
                ]
            xs = nxt
        for s in range(cfg.n_agents):
            xg[self.lay.sl(("xhatN", s))] = xs[cfg.agent_state_slice(s)]
        return xg

    def candidate_residual(self, prev_xg, step, mats):
        """Feasibility residual of the one-step-shifted input sequence.

        The candidate pins v_l := v*_{l+1} (v_{N-1} := 0) under the
        updated parameter set and re-certifies the tube variables by one
        feasibility solve, warm-started from the fully shifted previous
        decision. Returns the max constraint violation of the certified
        point (solver tolerance when recursively feasible) or +inf when
        no certificate exists.
        """
        cfg = self.cfg
        N = cfg.horizon
        pin_rows = []
        pin_vals = []
        for s in range(cfg.n_agents):
            for l in range(N):
                idx = self.lay.idx(("v", s, l))
                src = (
                    prev_xg[self.lay.sl(("v", s, l + 1))]
                    if l < N - 1
                    else np.zeros(cfg.agents[s].m)
                )
                pin_rows.append(idx)
                pin_vals.append(src)
        n_pin = sum(len(r) for r in pin_rows)
        rows = np.arange(n_pin)
        cols = np.concatenate(pin_rows)
        v_pin = sp.csc_matrix(
            (np.ones(n_pin), (rows, cols)), shape=(n_pin, self.lay.total)
        )
        b_pin = np.concatenate(pin_vals)

        a_ineq = sp.vstack([m[0] for m in mats], format="csc")
        b_ineq = np.concatenate([m[1] for m in mats])
        a_eq = sp.vstack([m[2] for m in mats] + [v_pin], format="csc")
        b_eq = np.concatenate([m[3] for m in mats] + [b_pin])
        if self._candidate_solver is None:
            problem = QpProblem(
                P=self.P_global, q=self.q_global.copy(), a_ub=a_ineq,
                b_ub=b_ineq, a_eq=a_eq, b_eq=b_eq,
            )
            self._candidate_solver = QpSolver(problem, eps_abs=1e-9, eps_rel=1e-9)
        else:
            self._update_matrix(self._candidate_solver, a_ineq, a_eq)
            self._candidate_solver.update(b_ub=b_ineq, b_eq=b_eq)
        warm = self.candidate_vector(prev_xg, step)
        self._candidate_solver.warm_start(x=warm)
        try:
            res = self._candidate_solver.solve()
        except Exception:
            return np.inf
        if res.status != "optimal":
            return np.inf
        x = res.x
        worst = float(np.max(a_ineq @ x - b_ineq))
        worst = max(worst, float(np.max(np.abs(a_eq @ x - b_eq))))
        return worst

    def shift_warm_start(self):
        """Shift the stored consensus state by one stage for the next step."""
        if self._warm_T is None:
            return
        cfg = self.cfg
        N = cfg.horizon
        T = self._warm_T
        shifted = T.copy()
        for s in range(cfg.n_agents):
            for l in range(N - 1):
                shifted[self.lay.sl(("z", s, l))] = T[self.lay.sl(("z", s, l + 1))]
                shifted[self.lay.offsets[("alpha", s, l)]] = T[
                    self.lay.offsets[("alpha", s, l + 1)]
                ]
                shifted[self.lay.sl(("xhat", s, l))] = T[self.lay.sl(("xhat", s, l + 1))]
            shifted[self.lay.sl(("z", s, N - 1))] = 0.0
        self._warm_T = shifted
        # duals keep their values; they re-equilibrate within a few iterations


def extract_control(decision, design, x_nbhd):
    """Applied input u = K x_nbhd + v_0."""
    return design.K @ np.asarray(x_nbhd, dtype=float) + decision.v[0]


# --- centralized oracle -------------------------------------------------------


def centralized_solve(cfg, x, theta_hats=None, h_theta=None, tubes=None,
                      n_cap=12):
    """Solve the unstructured tube MPC program exactly (small networks).

    Uses the original parameter constraints (no redundancy), one full
    nonnegative multiplier matrix per stage and per vertex combination of
    the whole network tube. Per-agent tube scalings are kept so the
    structured solution is a feasible point of this program; the optimal
    value therefore lower-bounds the structured one.
    """
    import itertools

    n = sum(a.n for a in cfg.agents)
    if n > n_cap:
        raise DimensionTooLarge(f"centralized oracle capped at n <= {n_cap}")
    tubes = tubes if tubes is not None else compute_offline_constants(cfg)
    structure = build_redundant_theta(cfg)
    geoms = build_geometry(cfg, tubes, structure)
    N = cfg.horizon
    S = cfg.n_agents
    H_theta = cfg.theta0.H
    h_theta = cfg.theta0.h if h_theta is None else np.asarray(h_theta, dtype=float)
    n_theta = H_theta.shape[0]
    if theta_hats is None:
        lo, hi = cfg.theta0.interval_hull()
        mid = 0.5 * (lo + hi)
        theta_hats = [mid[a.param_map] for a in cfg.agents]

    lay = Layout()
    for s, agent in enumerate(cfg.agents):
        for l in range(N):
            lay.add(("z", s, l), agent.n)
        for l in range(N):
            lay.add(("alpha", s, l), 1)
        for l in range(N):
            lay.add(("xhat", s, l), agent.n)
    for s, agent in enumerate(cfg.agents):
        for l in range(N):
            lay.add(("v", s, l), agent.m)
        lay.add(("alphaN", s), 1)
        lay.add(("xhatN", s), agent.n)
    combos = list(
        itertools.product(*[range(cfg.designs[s].q) for s in range(S)])
    )
    n_x_total = sum(g.n_x for g in geoms)
    lay.add(("LAM",), N * len(combos) * n_x_total * n_theta)

    rows_i, cols_i, vals_i, b_i = [], [], [], []
    rows_e, cols_e, vals_e, b_e = [], [], [], []

    def addi(r, idx, vv):
        vv = np.atleast_1d(np.asarray(vv, dtype=float))
        idx = np.atleast_1d(idx)
        rows_i.extend([r] * idx.size)
        cols_i.extend(idx.tolist())
        vals_i.extend(vv.tolist())

    def adde(r, idx, vv):
        vv = np.atleast_1d(np.asarray(vv, dtype=float))
        idx = np.atleast_1d(idx)
        rows_e.extend([r] * idx.size)
        cols_e.extend(idx.tolist())
        vals_e.extend(vv.tolist())

    r_i = 0
    r_e = 0
    lam_off = lay.offsets[("LAM",)]
    x = np.asarray(x, dtype=float)

    for s, agent in enumerate(cfg.agents):
        geom = geoms[s]
        # tube init
        for r in range(geom.n_x):
            addi(r_i, lay.idx(("z", s, 0)), -geom.H_x[r])
            addi(r_i, lay.idx(("alpha", s, 0)), [-1.0])
            b_i.append(float(-geom.H_x[r] @ x[cfg.agent_state_slice(s)]))
            r_i += 1
        # state/input rows
        for l in range(N):
            for r in range(geom.n_z):
                for pos, sig in enumerate(geom.neighbors):
                    csl = geom.nbr_col_slices[pos]
                    coeffs = geom.f_cl[r, csl]
                    if np.any(coeffs != 0.0):
                        addi(r_i, lay.idx(("z", sig, l)), coeffs)
                    fb = geom.f_bar_matrix[r, pos]
                    if fb != 0.0:
                        addi(r_i, lay.idx(("alpha", sig, l)), [fb])
                gc = agent.G[r]
                if np.any(gc != 0.0):
                    addi(r_i, lay.idx(("v", s, l)), gc)
                b_i.append(1.0)
                r_i += 1
        # alpha bounds and terminal
        for l in range(N):
            addi(r_i, lay.idx(("alpha", s, l)), [-1.0])
            b_i.append(0.0)
            r_i += 1
        addi(r_i, lay.idx(("alphaN", s)), [-1.0])
        b_i.append(0.0)
        r_i += 1
        addi(r_i, lay.idx(("alphaN", s)), [1.0])
        b_i.append(geom.alpha_bar)
        r_i += 1
        # dynamics + pins
        th = theta_hats[s]
        a_cl = geom.a_cl[0].copy()
        b_th = geom.b_blocks[0].copy()
        for i in range(geom.p):
            a_cl = a_cl + th[i] * geom.a_cl[i + 1]
            b_th = b_th + th[i] * geom.b_blocks[i + 1]
        for l in range(N):
            nxt = lay.idx(("xhatN", s)) if l == N - 1 else lay.idx(("xhat", s, l + 1))
            for r in range(agent.n):
                adde(r_e, nxt[r : r + 1], [1.0])
                for pos, sig in enumerate(geom.neighbors):
                    csl = geom.nbr_col_slices[pos]
                    co = a_cl[r, csl]
                    if np.any(co != 0.0):
                        adde(r_e, lay.idx(("xhat", sig, l)), -co)
                bc = b_th[r]
                if np.any(bc != 0.0):
                    adde(r_e, lay.idx(("v", s, l)), -bc)
                b_e.append(0.0)
                r_e += 1
        x0_idx = lay.idx(("xhat", s, 0))
        for r in range(agent.n):
            adde(r_e, x0_idx[r : r + 1], [1.0])
            b_e.append(float(x[cfg.agent_state_slice(s)][r]))
            r_e += 1

    # tube propagation with the full multiplier matrix per global combo
    x_offsets = np.cumsum([0] + [a.n for a in cfg.agents])
    hx_row_offsets = np.cumsum([0] + [g.n_x for g in geoms])
    for l in range(N):
        for c_idx, combo in enumerate(combos):
            lam_base = (l * len(combos) + c_idx) * n_x_total * n_theta
            for s, agent in enumerate(cfg.agents):
                geom = geoms[s]
                hx_acl = [geom.H_x @ geom.a_cl[i] for i in range(geom.p + 1)]
                hx_b = [geom.H_x @ geom.b_blocks[i] for i in range(geom.p + 1)]
                # neighborhood vertex state for this agent from the global combo
                for r in range(geom.n_x):
                    r_global = hx_row_offsets[s] + r
                    lam_row = lam_base + r_global * n_theta
                    # prop row
                    for pos, sig in enumerate(geom.neighbors):
                        csl = geom.nbr_col_slices[pos]
                        zc = hx_acl[0][r, csl]
                        if np.any(zc != 0.0):
                            addi(r_i, lay.idx(("z", sig, l)), zc)
                        xjv = cfg.designs[sig].x_vertices[combo[sig]]
                        ac = float(hx_acl[0][r, csl] @ xjv)
                        if ac != 0.0:
                            addi(r_i, lay.idx(("alpha", sig, l)), [ac])
                    bc = hx_b[0][r]
                    if np.any(bc != 0.0):
                        addi(r_i, lay.idx(("v", s, l)), bc)
                    if l < N - 1:
                        addi(r_i, lay.idx(("z", s, l + 1)), -geom.H_x[r])
                        addi(r_i, lay.idx(("alpha", s, l + 1)), [-1.0])
                    else:
                        addi(r_i, lay.idx(("alphaN", s)), [-1.0])
                    lam_cols = lam_off + lam_row + np.arange(n_theta)
                    addi(r_i, lam_cols, h_theta)
                    b_i.append(-geom.w_bar[r])
                    r_i += 1
                    # multiplier equalities per global parameter
                    for g_par in range(cfg.p):
                        if g_par in agent.param_map:
                            i = agent.param_map.index(g_par)
                            for pos, sig in enumerate(geom.neighbors):
                                csl = geom.nbr_col_slices[pos]
                                zc = hx_acl[i + 1][r, csl]
                                if np.any(zc != 0.0):
                                    adde(r_e, lay.idx(("z", sig, l)), zc)
                                xjv = cfg.designs[sig].x_vertices[combo[sig]]
                                ac = float(hx_acl[i + 1][r, csl] @ xjv)
                                if ac != 0.0:
                                    adde(r_e, lay.idx(("alpha", sig, l)), [ac])
                            bci = hx_b[i + 1][r]
                            if np.any(bci != 0.0):
                                adde(r_e, lay.idx(("v", s, l)), bci)
                        coefs = -H_theta[:, g_par]
                        nz = np.flatnonzero(coefs)
                        if nz.size:
                            adde(r_e, lam_off + lam_row + nz, coefs[nz])
                        b_e.append(0.0)
                        r_e += 1
    # multiplier nonnegativity
    lam_idx = lay.idx(("LAM",))
    for col in lam_idx:
        addi(r_i, [col], [-1.0])
        b_i.append(0.0)
        r_i += 1

    a_ineq = sp.csc_matrix((vals_i, (rows_i, cols_i)), shape=(r_i, lay.total))
    a_eq = sp.csc_matrix((vals_e, (rows_e, cols_e)), shape=(r_e, lay.total))
    P = None
    geo_costs = []
    for s in range(S):
        geo_costs.append(build_agent_cost(cfg, lay, geoms, s))
    P = sum(geo_costs[1:], start=geo_costs[0]).tocsc()
    problem = QpProblem(P=P, q=np.zeros(lay.total), a_ub=a_ineq, b_ub=np.array(b_i),
                        a_eq=a_eq, b_eq=np.array(b_e))
    solver = QpSolver(problem, eps_abs=1e-9, eps_rel=1e-9)
    res = solver.solve()
    if res.status != "optimal":
        raise Infeasible("centralized tube MPC program is infeasible")
    cost = true_objective(cfg, lay, geoms, res.x)
    return res.x, cost, lay
