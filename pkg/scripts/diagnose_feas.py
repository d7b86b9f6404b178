"""Identify the binding rows of the stage-0 feasibility program."""
import sys

import numpy as np
import scipy.sparse as sp

from dampc.controller import DampcController
from dampc.formulation import make_step_data
from dampc.ident import initial_lms_states, initial_param_sets
from dampc.msd import build_msd_benchmark
from dampc.qp import QpProblem, QpSolver

kp, kd, pe, ve = (float(a) for a in sys.argv[1:5])
kappa = float(sys.argv[5]) if len(sys.argv) > 5 else 1.0
gains = tuple((kp, kd) for _ in range(5))
cfg = build_msd_benchmark(kappa=kappa, gains=gains, pos_extent=pe, vel_extent=ve)
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
prob = QpProblem(
    P=1e-9 * sp.identity(n + 1, format="csc"), q=q,
    a_ub=sp.vstack([A2, tau_pos], format="csc"),
    b_ub=np.concatenate([b_ineq, [0.0]]),
    a_eq=Ae2, b_eq=b_eq,
)
import osqp
slv = osqp.OSQP()
A_full = sp.vstack([Ae2, A2, tau_pos], format="csc")
l_full = np.concatenate([b_eq, np.full(m_i + 1, -np.inf)])
u_full = np.concatenate([b_eq, b_ineq, [0.0]])
slv.setup(P=(1e-9 * sp.identity(n + 1, format="csc")).tocsc(), q=q, A=A_full,
          l=l_full, u=u_full, verbose=False, eps_abs=1e-7, eps_rel=1e-7,
          max_iter=200000, polishing=True, scaling=10)
raw = slv.solve(raise_error=False)
print("osqp status:", raw.info.status)
x = raw.x[:n]
tau = raw.x[n]
print(f"tau = {tau:.6f}")
vals = a_ineq @ x - b_ineq
order = np.argsort(-vals)

alpha_bars = [round(t.alpha_bar, 3) for t in ctrl.tubes.agents]
print("alpha_bar:", alpha_bars)
for s in range(5):
    a_seq = [round(float(x[ctrl.lay.offsets[("alpha", s, l)]]), 3) for l in range(cfg.horizon)]
    a_seq.append(round(float(x[ctrl.lay.offsets[("alphaN", s)]]), 3))
    z_seq = [round(float(x[ctrl.lay.offsets[("z", s, l)]]), 2) for l in range(cfg.horizon)]
    print(f"agent {s}: alpha path {a_seq}, z_pos path {z_seq}")

offset = 0
shown = 0
labels = []
for s_i, mm in enumerate(mats):
    t = ctrl.templates[s_i]
    n_rows = mm[0].shape[0]
    for r in order:
        if not (offset <= r < offset + n_rows) or vals[r] < tau - 1e-4:
            continue
        local_r = r - offset
        fam = "other"
        if t.tube_init_rows.start <= local_r < t.tube_init_rows.stop:
            fam = "tube_init"
        elif t.prop_rows.start <= local_r < t.prop_rows.stop:
            l, c_i, hr = t.prop_row_meta[local_r - t.prop_rows.start]
            fam = f"prop l={l} combo={c_i} hx_row={hr}"
        elif local_r == t.terminal_row:
            fam = f"terminal (alpha_bar={ctrl.geoms[s_i].alpha_bar:.3f})"
        elif local_r < t.prop_rows.start:
            fam = f"state/input row {local_r - t.tube_init_rows.stop}"
        labels.append((vals[r], s_i, fam))
    offset += n_rows
for v, s_i, fam in sorted(labels, reverse=True)[:18]:
    print(f"  agent {s_i}: {fam}: residual {v:.5f}")
