"""Online set-membership identification and the projected LMS estimator.

Decentralized mode: each agent intersects its feasible parameter set
with the non-falsified set built from one observed transition of its own
states (using neighbor measurements), tightening every row of its local
constraint copy by linear programs. Distributed mode adds one exchange
round in which neighbors sharing a parameter pool their axis-aligned
bounds (min of uppers, max of lowers).
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyIntersection,
    MissingAxisBound,
    ProjectionInfeasible,
    Unbounded,
)
from .lp import INFEASIBLE, OPTIMAL, LpProblem, solve_lp
from .poly import box_vertices
from .qp import INFEASIBLE as QP_INFEASIBLE
from .qp import QpProblem, solve_qp

DECENTRALIZED = "decentralized"
DISTRIBUTED = "distributed"


@dataclass
class NonFalsifiedSet:
    """Parameters consistent with one transition: {theta | H theta <= h}."""

    H: np.ndarray
    h: np.ndarray

    @property
    def trivially_redundant(self):
        """True when the regressor vanished and the residual fits in W."""
        return self.H.shape[0] == 0


def non_falsified(agent, x_next, x_nbhd, u) -> NonFalsifiedSet:
    """Non-falsified set from x+ - A_d(theta) x_nbhd - B_d(theta) u in W.

    Rows come in [-D; D] pairs from the disturbance box. A zero regressor
    with an in-box residual yields the whole parameter space (no rows);
    a zero regressor with an out-of-box residual raises EmptyIntersection
    since no parameter can explain the transition.
    """
    x_next = np.asarray(x_next, dtype=float)
    residual = x_next - agent.a_blocks[0] @ x_nbhd - agent.b_blocks[0] @ u
    d_mat = agent.d_matrix(x_nbhd, u)
    if not np.any(d_mat):
        if np.all(residual <= agent.w_hi + 1e-12) and np.all(
            residual >= agent.w_lo - 1e-12
        ):
            return NonFalsifiedSet(np.zeros((0, agent.p)), np.zeros(0))
        raise EmptyIntersection(
            f"agent {agent.id}: zero regressor with residual outside W"
        )
    H = np.vstack([-d_mat, d_mat])
    h = np.concatenate([agent.w_hi - residual, residual - agent.w_lo])
    return NonFalsifiedSet(H, h)


@dataclass
class ParamSet:
    """Feasible parameter set of one agent: {theta_s | block.rows theta <= h}."""

    block: object  # offline.ThetaBlock
    h: np.ndarray

    def copy(self):
        return ParamSet(self.block, self.h.copy())

    def bounds(self):
        return self.block.bounds_from_h(self.h)

    def contains(self, theta, tol=1e-9):
        return bool(np.all(self.block.rows @ theta <= self.h + tol))

    def midpoint(self):
        lb, ub = self.bounds()
        if np.any(~np.isfinite(lb)) or np.any(~np.isfinite(ub)):
            raise MissingAxisBound(
                f"agent {self.block.agent}: axis bounds incomplete"
            )
        return 0.5 * (lb + ub)


def initial_param_sets(structure):
    return [ParamSet(block, block.h0.copy()) for block in structure.blocks]


def update_param_set_decentralized(ps, delta) -> ParamSet:
    """Tighten every row bound by the LP over the current set cut by delta."""
    if delta.trivially_redundant:
        return ps.copy()
    rows = ps.block.rows
    a_ub = np.vstack([rows, delta.H])
    b_ub = np.concatenate([ps.h, delta.h])
    new_h = ps.h.copy()
    for i in range(rows.shape[0]):
        res = solve_lp(LpProblem(c=-rows[i], a_ub=a_ub, b_ub=b_ub))
        if res.status == INFEASIBLE:
            raise EmptyIntersection(
                f"agent {ps.block.agent}: non-falsified set cut the parameter "
                "set to empty (disturbance bound or model violated)"
            )
        if res.status != OPTIMAL:
            raise Unbounded("parameter set row update was unbounded")
        new_h[i] = min(float(-res.objective), new_h[i])
    return ParamSet(ps.block, new_h)


def require_axis_bounds(structure, cfg):
    """Distributed identification prerequisite: per-axis bound rows."""
    for s, block in enumerate(structure.blocks):
        for i in range(block.p):
            if i not in block.ub_rows or i not in block.lb_rows:
                raise MissingAxisBound(
                    f"agent {s}: parameter {i} lacks explicit axis bounds"
                )


def exchange_bounds(param_sets, cfg) -> list:
    """One round of neighbor bound pooling for shared parameters.

    Each agent's upper bound on a shared parameter becomes the minimum of
    the upper bounds computed by the neighbors owning that parameter
    (lower bounds take the maximum). Only neighbor-to-neighbor messages
    are used. Returns new ParamSets; h rows shrink monotonically.
    """
    bounds = [ps.bounds() for ps in param_sets]
    new_sets = []
    for s, ps in enumerate(param_sets):
        agent = cfg.agents[s]
        new_h = ps.h.copy()
        for i, g in enumerate(agent.param_map):
            ub = bounds[s][1][i]
            lb = bounds[s][0][i]
            for sig in agent.neighbors:
                if sig == s:
                    continue
                try:
                    j = cfg.agents[sig].param_map.index(g)
                except ValueError:
                    continue
                ub = min(ub, bounds[sig][1][j])
                lb = max(lb, bounds[sig][0][j])
            for r, coef in ps.block.ub_rows.get(i, []):
                new_h[r] = min(new_h[r], coef * ub)
            for r, coef in ps.block.lb_rows.get(i, []):
                new_h[r] = min(new_h[r], coef * lb)
        new_sets.append(ParamSet(ps.block, new_h))
    return new_sets


def run_identification_step(mode, cfg, param_sets, x_prev, u_prev, x_now) -> list:
    """One identification step from the transition (x_prev, u_prev) -> x_now.

    ``decentralized``: per-agent non-falsified cut only. ``distributed``:
    the same followed by one bound exchange round.
    """
    if mode not in (DECENTRALIZED, DISTRIBUTED):
        raise ValueError(f"unknown identification mode '{mode}'")
    updated = []
    for s, ps in enumerate(param_sets):
        agent = cfg.agents[s]
        delta = non_falsified(
            agent,
            x_now[cfg.agent_state_slice(s)],
            x_prev[cfg.nbhd_state_indices(s)],
            u_prev[cfg.agent_input_slice(s)],
        )
        updated.append(update_param_set_decentralized(ps, delta))
    if mode == DISTRIBUTED:
        updated = exchange_bounds(updated, cfg)
    return updated


# --- projected least mean squares -------------------------------------------


@dataclass
class LmsState:
    theta_hat: np.ndarray
    mu: float


def regressor_norm_bound(cfg, s, global_box=None, cap_dim=12):
    """max ||D_s(x, u)||_2^2 over the network state/input constraint box.

    The spectral norm of the linear-in-(x, u) regressor is convex, so the
    maximum over the box is attained at a vertex. Above the enumeration
    cap a conservative triangle-inequality bound is used instead.
    """
    agent = cfg.agents[s]
    if agent.p == 0:
        return 0.0
    if global_box is None:
        global_box = network_state_input_box(cfg)
    x_lo, x_hi, u_lo, u_hi = global_box
    nb = cfg.nbhd_state_indices(s)
    usl = cfg.agent_input_slice(s)
    lo = np.concatenate([x_lo[nb], u_lo[usl]])
    hi = np.concatenate([x_hi[nb], u_hi[usl]])
    d = lo.size
    if d <= cap_dim:
        best = 0.0
        for v in box_vertices(lo, hi).vertices:
            d_mat = agent.d_matrix(v[: agent.n_nbhd], v[agent.n_nbhd :])
            best = max(best, float(np.linalg.norm(d_mat, 2) ** 2))
        return best
    scale = np.maximum(np.abs(lo), np.abs(hi))
    total = 0.0
    for i in range(agent.p):
        col = np.abs(agent.a_blocks[i + 1]) @ scale[: agent.n_nbhd]
        col += np.abs(agent.b_blocks[i + 1]) @ scale[agent.n_nbhd :]
        total += float(col @ col)
    return total


def network_state_input_box(cfg):
    """Interval hull of the network constraint set {F x + G u <= 1}."""
    from .model import assemble_global
    from .poly import Polytope, support_value

    model = assemble_global(cfg)
    stacked = np.hstack([model.F, model.G])
    poly = Polytope(stacked, np.ones(stacked.shape[0]))
    n = model.n
    d = stacked.shape[1]
    lo = np.empty(d)
    hi = np.empty(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = 1.0
        hi[i] = support_value(poly, e)
        lo[i] = -support_value(poly, -e)
    return lo[:n], hi[:n], lo[n:], hi[n:]


def initial_lms_states(cfg, param_sets):
    """Midpoint estimates with the normalized step size 0.5 / (1 + g_bar)."""
    box = network_state_input_box(cfg)
    states = []
    for s, ps in enumerate(param_sets):
        g_bar = regressor_norm_bound(cfg, s, global_box=box)
        states.append(LmsState(theta_hat=ps.midpoint(), mu=0.5 / (1.0 + g_bar)))
    return states


def lms_update(lms, agent, ps, x_next, x_nbhd, u) -> LmsState:
    """theta+ = Proj_{Theta_k,s}(theta + mu D' (x+ - x_hat+))."""
    d_mat = agent.d_matrix(x_nbhd, u)
    pred = agent.a_blocks[0] @ x_nbhd + agent.b_blocks[0] @ u + d_mat @ lms.theta_hat
    err = np.asarray(x_next, dtype=float) - pred
    raw = lms.theta_hat + lms.mu * (d_mat.T @ err)
    if ps.contains(raw):
        return LmsState(theta_hat=raw, mu=lms.mu)
    res = solve_qp(
        QpProblem(
            P=2.0 * np.eye(raw.size),
            q=-2.0 * raw,
            a_ub=ps.block.rows,
            b_ub=ps.h,
        )
    )
    if res.status == QP_INFEASIBLE:
        raise ProjectionInfeasible(f"agent {agent.id}: parameter set empty")
    return LmsState(theta_hat=res.x, mu=lms.mu)
