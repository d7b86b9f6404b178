"""Focused design sweep with a scalar-slack feasibility probe and rollout."""
import itertools
import sys
import time

import numpy as np
import scipy.sparse as sp

from dampc.controller import DampcController
from dampc.formulation import make_step_data
from dampc.ident import initial_lms_states, initial_param_sets
from dampc.msd import build_msd_benchmark
from dampc.offline import validate_gain
from dampc.qp import QpProblem, QpSolver


def feas_slack(ctrl, step):
    """min tau s.t. A_ineq x <= b + tau, A_eq x = b_eq, tau >= 0."""
    mats = ctrl._assemble(step)
    a_ineq = sp.vstack([m[0] for m in mats], format="csc")
    b_ineq = np.concatenate([m[1] for m in mats])
    a_eq = sp.vstack([m[2] for m in mats], format="csc")
    b_eq = np.concatenate([m[3] for m in mats])
    n = ctrl.lay.total
    m_i = a_ineq.shape[0]
    ones = -np.ones((m_i, 1))
    A2 = sp.hstack([a_ineq, sp.csc_matrix(ones)], format="csc")
    tau_pos = sp.csc_matrix(([-1.0], ([0], [n])), shape=(1, n + 1))
    Ae2 = sp.hstack([a_eq, sp.csc_matrix((a_eq.shape[0], 1))], format="csc")
    q = np.zeros(n + 1)
    q[n] = 1.0
    prob = QpProblem(
        P=1e-9 * sp.identity(n + 1, format="csc"), q=q,
        a_ub=sp.vstack([A2, tau_pos], format="csc"),
        b_ub=np.concatenate([b_ineq, [0.0]]),
        a_eq=Ae2, b_eq=b_eq,
    )
    try:
        res = QpSolver(prob, eps_abs=1e-7, eps_rel=1e-7, max_iter=60000).solve()
        return float(res.x[n])
    except Exception:
        return float("nan")


def evaluate(kp, kd, pe, ve):
    gains = tuple((kp, kd) for _ in range(5))
    cfg = build_msd_benchmark(kappa=1.0, gains=gains, pos_extent=pe, vel_extent=ve)
    rep = validate_gain(cfg)
    out = dict(radius=round(rep.max_radius, 4))
    if not rep.stable:
        out["verdict"] = "UNSTABLE"
        return out
    ctrl = DampcController(cfg)
    out["alpha_bar"] = round(min(t.alpha_bar for t in ctrl.tubes.agents), 3)
    ps = initial_param_sets(ctrl.structure)
    lms = initial_lms_states(cfg, ps)
    step = make_step_data(cfg, ps, lms, cfg.x0)
    tau = feas_slack(ctrl, step)
    out["tau"] = round(tau, 4) if np.isfinite(tau) else tau
    if not np.isfinite(tau) or tau > 1e-5:
        out["verdict"] = "INFEAS"
        return out
    from dampc.sim import simulate

    try:
        t0 = time.time()
        run = simulate(cfg, "drmpc", seed=0, t_sim=12, admm_iters=5)
        out["rollout_s"] = round(time.time() - t0, 1)
    except Exception as exc:
        out["verdict"] = f"ROLLOUT_FAIL {type(exc).__name__}"
        return out
    if not run.feasible:
        out["verdict"] = f"ABORT@{run.abort_step}"
        return out
    out["margin"] = round(min(s.tube_margin for s in run.steps), 6)
    cands = [s.candidate_residual for s in run.steps if np.isfinite(s.candidate_residual)]
    out["cand"] = round(max(cands), 6) if cands else None
    out["viol"] = round(max(s.max_constraint_value for s in run.steps), 6)
    ok = out["margin"] > -1e-6 and (out["cand"] or 0.0) <= 1e-6
    out["verdict"] = "OK" if ok else "CHECKS"
    return out


if __name__ == "__main__":
    grid = list(
        itertools.product([0.4, 0.6, 0.9], [0.5, 0.8, 1.1], [3.0, 3.4, 3.8], [3.0, 3.5, 4.0])
    )
    lo, hi = (int(sys.argv[1]), int(sys.argv[2])) if len(sys.argv) > 2 else (0, len(grid))
    for kp, kd, pe, ve in grid[lo:hi]:
        out = evaluate(kp, kd, pe, ve)
        print(
            f"kp={kp} kd={kd} pe={pe} ve={ve} -> "
            + " ".join(f"{k}={v}" for k, v in out.items()),
            flush=True,
        )
