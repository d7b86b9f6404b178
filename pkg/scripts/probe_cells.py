"""Fast tau-probe over hand-picked design cells."""
import sys

import numpy as np
import scipy.sparse as sp

import osqp
from dampc.controller import DampcController
from dampc.formulation import make_step_data
from dampc.ident import initial_lms_states, initial_param_sets
from dampc.msd import build_msd_benchmark
from dampc.offline import validate_gain


def tau_probe(cfg):
    ctrl = DampcController(cfg)
    ps = initial_param_sets(ctrl.structure)
    lms = initial_lms_states(cfg, ps)
    step = make_step_data(cfg, ps, lms, cfg.x0)
    mats = ctrl._assemble(step)
    a_ineq = sp.vstack([m[0] for m in mats], format="csc")
    b_ineq = np.concatenate([m[1] for m in mats])
    a_eq = sp.vstack([m[2] for m in mats], format="csc")
    b_eq = np.concatenate([m[3] for m in mats])
    n = ctrl.lay.total
    m_i = a_ineq.shape[0]
    A2 = sp.hstack([a_ineq, sp.csc_matrix(-np.ones((m_i, 1)))], format="csc")
    tau_pos = sp.csc_matrix(([-1.0], ([0], [n])), shape=(1, n + 1))
    Ae2 = sp.hstack([a_eq, sp.csc_matrix((a_eq.shape[0], 1))], format="csc")
    q = np.zeros(n + 1)
    q[n] = 1.0
    slv = osqp.OSQP()
    A_full = sp.vstack([Ae2, A2, tau_pos], format="csc")
    l_full = np.concatenate([b_eq, np.full(m_i + 1, -np.inf)])
    u_full = np.concatenate([b_eq, b_ineq, [0.0]])
    slv.setup(P=(1e-9 * sp.identity(n + 1, format="csc")).tocsc(), q=q, A=A_full,
              l=l_full, u=u_full, verbose=False, eps_abs=1e-6, eps_rel=1e-6,
              max_iter=60000, polishing=False, scaling=10)
    raw = slv.solve(raise_error=False)
    return float(raw.x[n]), raw.info.status, ctrl


cells = [
    (0.45, 0.7, 3.0, 5.0, -0.2), (0.45, 0.7, 3.0, 5.0, -0.3),
    (0.5, 0.7, 3.0, 5.0, -0.25), (0.45, 0.75, 3.0, 5.0, -0.25),
    (0.45, 0.7, 3.2, 5.0, -0.25), (0.45, 0.7, 2.8, 5.0, -0.25),
    (0.5, 0.75, 3.1, 5.0, -0.22), (0.45, 0.7, 3.0, 4.9, -0.25),
]
if len(sys.argv) > 2:
    cells = cells[int(sys.argv[1]) : int(sys.argv[2])]
for kp, kd, pe, ve, ang in cells:
    gains = tuple((kp, kd) for _ in range(5))
    cfg = build_msd_benchmark(kappa=1.0, gains=gains, pos_extent=pe, vel_extent=ve, tube_angle=ang)
    rep = validate_gain(cfg)
    if not rep.stable:
        print(f"kp={kp} kd={kd} pe={pe} ve={ve} a={ang} -> UNSTABLE r={rep.max_radius:.4f}",
              flush=True)
        continue
    tau, status, ctrl = tau_probe(cfg)
    ab = min(t.alpha_bar for t in ctrl.tubes.agents)
    print(f"kp={kp} kd={kd} pe={pe} ve={ve} a={ang} -> r={rep.max_radius:.4f} "
          f"alpha_bar={ab:.3f} tau={tau:.5f} ({status})", flush=True)
