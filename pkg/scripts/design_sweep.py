"""Design sweep for the benchmark gain and tube shape (development tool)."""

import itertools
import sys
import time

import numpy as np
import scipy.sparse as sp

from dampc.controller import DampcController
from dampc.formulation import make_step_data
from dampc.ident import initial_lms_states, initial_param_sets
from dampc.msd import build_msd_benchmark
from dampc.offline import compute_offline_constants, validate_gain
from dampc.qp import QpProblem, QpSolver


def min_slack(ctrl, step):
    mats = ctrl._assemble(step)
    a_ineq = sp.vstack([m[0] for m in mats], format="csc")
    b_ineq = np.concatenate([m[1] for m in mats])
    a_eq = sp.vstack([m[2] for m in mats], format="csc")
    b_eq = np.concatenate([m[3] for m in mats])
    n = ctrl.lay.total
    m_i = a_ineq.shape[0]
    P = sp.block_diag([1e-9 * sp.identity(n), 2.0 * sp.identity(m_i)], format="csc")
    A2 = sp.hstack([a_ineq, -sp.identity(m_i)], format="csc")
    Ae2 = sp.hstack([a_eq, sp.csc_matrix((a_eq.shape[0], m_i))], format="csc")
    lo2 = sp.hstack([sp.csc_matrix((m_i, n)), -sp.identity(m_i)], format="csc")
    prob = QpProblem(
        P=P, q=np.zeros(n + m_i),
        a_ub=sp.vstack([A2, lo2], format="csc"),
        b_ub=np.concatenate([b_ineq, np.zeros(m_i)]),
        a_eq=Ae2, b_eq=b_eq,
    )
    try:
        res = QpSolver(prob, eps_abs=1e-6, eps_rel=1e-6, max_iter=30000).solve()
    except Exception as exc:
        return np.nan
    return float(res.x[n:].max())


def evaluate(kp, kd, pos_extent, vel_scale, angle):
    gains = tuple((kp, kd) for _ in range(5))
    try:
        cfg = build_msd_benchmark(kappa=1.0, gains=gains, pos_extent=pos_extent,
                                  vel_scale=vel_scale, tube_angle=angle)
    except Exception as exc:
        return dict(error=f"build: {exc}")
    gain_rep = validate_gain(cfg)
    tubes = compute_offline_constants(cfg)
    alpha_bars = [tubes.agent(s).alpha_bar for s in range(5)]
    out = dict(radius=gain_rep.max_radius, alpha_bar=min(alpha_bars))
    if not gain_rep.stable:
        out["error"] = "unstable"
        return out
    ctrl = DampcController(cfg)
    ps = initial_param_sets(ctrl.structure)
    lms = initial_lms_states(cfg, ps)
    step = make_step_data(cfg, ps, lms, cfg.x0)
    t0 = time.time()
    out["slack"] = min_slack(ctrl, step)
    out["time"] = time.time() - t0
    return out


if __name__ == "__main__":
    grid = list(
        itertools.product(
            [0.5, 1.0, 1.5, 2.0],     # kp
            [0.6, 1.2, 2.0],          # kd
            [2.2, 2.8, 3.4],          # pos_extent
            [0.45, 0.65, 1.0],        # vel_scale
            [np.pi / 8],              # angle
        )
    )
    if len(sys.argv) > 1:
        lo, hi = map(int, sys.argv[1:3])
        grid = grid[lo:hi]
    for kp, kd, pe, vs, ang in grid:
        out = evaluate(kp, kd, pe, vs, ang)
        print(
            f"kp={kp} kd={kd} pe={pe} vs={vs} -> "
            + " ".join(f"{k}={v if not isinstance(v, float) else round(v, 4)}"
                        for k, v in out.items()),
            flush=True,
        )
