"""Tube MPC constraint formulation over the structured network.

Every agent contributes six constraint families in the decision
variables (z, alpha, xhat, v, multipliers):

  1. tube initialization      -H_x z_0 - alpha_0 1 <= -H_x x_k
  2. state/input constraints   F_cl z_l + G v_l + sum_sig alpha_sig fbar <= 1
  3. tube propagation          robust one-step inclusion of the
                               neighborhood tube product
  4. multiplier coupling       general parameter sets: explicit nonnegative
                               multiplier columns per vertex combination
  5. certainty-equivalence dynamics (parameter estimate)
  6. terminal                  z_N = 0 (eliminated), alpha_N <= alpha_bar

For axis-box parameter sets the propagation family is enforced exactly
with one row per (stage, H_x row, parameter sign pattern): with the
parameter pinned at a box vertex the row is linear in the neighbor tube
vertices with nonnegative alpha weights, so the worst case over the
vertex product splits into independent per-neighbor maxima. Those
coefficients depend on the current parameter bounds, so the constraint
matrix keeps a fixed sparsity pattern whose propagation values are
refilled each step. General parameter sets use the literal formulation
with explicit multipliers over every vertex combination (small networks
only).
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import EmptyParamSet


class Layout:
    """Ordered variable layout: key -> column slice."""

    def __init__(self):
        self.sizes = {}
        self.offsets = {}
        self.total = 0
        self.keys = []

    def add(self, key, size):
        if key in self.sizes:
            raise ValueError(f"duplicate layout key {key}")
        self.sizes[key] = size
        self.offsets[key] = self.total
        self.keys.append(key)
        self.total += size

    def sl(self, key):
        off = self.offsets[key]
        return slice(off, off + self.sizes[key])

    def idx(self, key):
        off = self.offsets[key]
        return np.arange(off, off + self.sizes[key])


def is_axis_box_block(block):
    """True when every row of the agent's parameter block is single-axis
    and every parameter has upper and lower bound rows (box structure)."""
    if block.p == 0:
        return True
    for r in range(block.n_rows):
        if np.count_nonzero(block.rows[r]) != 1:
            return False
    return all(i in block.ub_rows and i in block.lb_rows for i in range(block.p))


@dataclass
class AgentGeometry:
    """Per-agent constants shared by the template builders."""

    s: int
    neighbors: list
    n: int
    m: int
    n_x: int
    n_z: int
    p: int
    horizon: int
    a_cl: list  # closed-loop blocks: index 0 nominal, then per local parameter
    b_blocks: list
    H_x: np.ndarray
    f_cl: np.ndarray
    f_bar_matrix: np.ndarray
    w_bar: np.ndarray
    alpha_bar: float
    combos: list  # tuples of per-neighbor vertex indices (audit machinery)
    combo_states: np.ndarray  # (n_combo, n_nbhd)
    nbr_col_slices: list  # column range of each neighbor inside x_nbhd
    box_mode: bool
    live: np.ndarray  # (n_x, p) regressor-row liveness
    sign_patterns: np.ndarray  # (n_patt, p) parameter-box sign patterns
    row_patterns: list  # per H_x row: pattern indices to enforce
    K: np.ndarray
    hx_acl: list  # H_x @ a_cl[i]
    hx_b: list  # H_x @ b_blocks[i]
    vertex_lists: list  # per neighbor: (q_sig, n_sig) vertex arrays


def build_geometry(cfg, tubes, structure):
    """Precompute per-agent geometry, vertex data and sign patterns."""
    from .offline import neighborhood_vertex_combos

    geoms = []
    for s, agent in enumerate(cfg.agents):
        design = cfg.designs[s]
        tube = tubes.agent(s)
        block = structure.blocks[s]
        neighbors = agent.neighbors
        offsets = []
        col = 0
        for sig in neighbors:
            offsets.append(slice(col, col + cfg.agents[sig].n))
            col += cfg.agents[sig].n
        a_cl = [agent.a_blocks[i] + agent.b_blocks[i] @ design.K
                for i in range(agent.p + 1)]
        states, combos = neighborhood_vertex_combos(cfg, s)
        box_mode = is_axis_box_block(block)

        live = np.zeros((design.n_x, agent.p), dtype=bool)
        for i in range(agent.p):
            hx_a = design.H_x @ a_cl[i + 1]
            hx_b_i = design.H_x @ agent.b_blocks[i + 1]
            live[:, i] = np.any(hx_a != 0.0, axis=1) | np.any(hx_b_i != 0.0, axis=1)

        # sign patterns: all 2^p vertices of the parameter box; each H_x row
        # enforces only the patterns that differ on its live parameters
        n_patt = 1 << agent.p
        sign_patterns = np.ones((max(n_patt, 1), max(agent.p, 0)))
        for patt in range(n_patt):
            for i in range(agent.p):
                if (patt >> i) & 1:
                    sign_patterns[patt, i] = -1.0
        row_patterns = []
        for r in range(design.n_x):
            chosen = []
            seen = set()
            for patt in range(n_patt):
                canonical = 0
                for i in range(agent.p):
                    if live[r, i] and (patt >> i) & 1:
                        canonical |= 1 << i
                if canonical in seen:
                    continue
                seen.add(canonical)
                chosen.append(canonical)
            row_patterns.append(sorted(chosen))

        geoms.append(
            AgentGeometry(
                s=s,
                neighbors=neighbors,
                n=agent.n,
                m=agent.m,
                n_x=design.n_x,
                n_z=agent.n_z,
                p=agent.p,
                horizon=cfg.horizon,
                a_cl=a_cl,
                b_blocks=[agent.b_blocks[i] for i in range(agent.p + 1)],
                H_x=design.H_x,
                f_cl=tube.f_cl,
                f_bar_matrix=tube.f_bar_matrix,
                w_bar=tube.w_bar,
                alpha_bar=tube.alpha_bar,
                combos=combos,
                combo_states=states,
                nbr_col_slices=offsets,
                box_mode=box_mode,
                live=live,
                sign_patterns=sign_patterns,
                row_patterns=row_patterns,
                K=design.K,
                hx_acl=[design.H_x @ a_cl[i] for i in range(agent.p + 1)],
                hx_b=[design.H_x @ agent.b_blocks[i] for i in range(agent.p + 1)],
                vertex_lists=[cfg.designs[sig].x_vertices for sig in neighbors],
            )
        )
    return geoms


def build_global_layout(cfg, geoms, structure):
    """Shared blocks (z, alpha, xhat per stage) then per-agent privates."""
    lay = Layout()
    for s, agent in enumerate(cfg.agents):
        N = cfg.horizon
        for l in range(N):
            lay.add(("z", s, l), agent.n)
        for l in range(N):
            lay.add(("alpha", s, l), 1)
        for l in range(N):
            lay.add(("xhat", s, l), agent.n)
    for s, agent in enumerate(cfg.agents):
        for l in range(cfg.horizon):
            lay.add(("v", s, l), agent.m)
        lay.add(("alphaN", s), 1)
        lay.add(("xhatN", s), agent.n)
        if not geoms[s].box_mode:
            block = structure.blocks[s]
            n_lam = cfg.horizon * len(geoms[s].combos) * geoms[s].n_x * block.n_rows
            if n_lam:
                lay.add(("lam", s), n_lam)
    return lay


def shared_block_indices(cfg, lay, s):
    """Global column indices of agent s's shared block (z, alpha, xhat)."""
    idx = []
    N = cfg.horizon
    for l in range(N):
        idx.append(lay.idx(("z", s, l)))
    for l in range(N):
        idx.append(lay.idx(("alpha", s, l)))
    for l in range(N):
        idx.append(lay.idx(("xhat", s, l)))
    return np.concatenate(idx)


def local_column_indices(cfg, lay, geoms, s):
    """Columns of agent s's local problem: neighbor blocks then privates."""
    parts = [shared_block_indices(cfg, lay, sig) for sig in cfg.agents[s].neighbors]
    for l in range(cfg.horizon):
        parts.append(lay.idx(("v", s, l)))
    parts.append(lay.idx(("alphaN", s)))
    parts.append(lay.idx(("xhatN", s)))
    if not geoms[s].box_mode and ("lam", s) in lay.sizes:
        parts.append(lay.idx(("lam", s)))
    return np.concatenate(parts)


class _Coo:
    """COO accumulator assigning a stable entry id to every coefficient."""

    def __init__(self):
        self.rows = []
        self.cols = []
        self.vals = []

    def add(self, r, cols, vals):
        vals = np.atleast_1d(np.asarray(vals, dtype=float))
        cols = np.atleast_1d(np.asarray(cols))
        first = len(self.vals)
        self.rows.extend([r] * cols.size)
        self.cols.extend(cols.tolist())
        self.vals.extend(vals.tolist())
        return list(range(first, first + cols.size))

    def matrix(self, n_rows, n_cols, data=None):
        vals = self.vals if data is None else data
        return sp.csc_matrix((vals, (self.rows, self.cols)), shape=(n_rows, n_cols))


@dataclass
class AgentTemplate:
    """Per-agent constraint template on the global layout.

    Box agents carry a fixed inequality pattern whose propagation
    coefficients (recorded in ``fill_positions``, one identical block per
    stage) are recomputed from the current parameter box every step.
    Explicit agents instead keep multiplier component matrices scaled by
    the current bound values.
    """

    s: int
    n_ineq: int
    n_eq: int
    ineq_coo: _Coo
    base_values: np.ndarray
    fill_positions: np.ndarray
    eq_base: sp.csc_matrix
    dyn: list
    lam_prop: list
    b_ineq: np.ndarray
    b_eq: np.ndarray
    tube_init_rows: slice
    pin_rows: slice
    prop_rows: slice
    prop_row_meta: list
    terminal_row: int
    copy_ineq: sp.csc_matrix
    copy_b_ineq: np.ndarray
    copy_eq: sp.csc_matrix
    copy_pin_agents: list
    n_cols: int

    def ineq_matrix(self, values):
        return self.ineq_coo.matrix(self.n_ineq, self.n_cols, data=values)


def prop_fill_values(geom, mid, rad):
    """Step-dependent propagation coefficients for one stage of a box agent.

    Ordered exactly as the template recorded them: for each H_x row, for
    each of its sign patterns: the z coefficients over the neighborhood,
    one alpha coefficient per neighbor (its vertex maximum), then the v
    coefficients. Stage blocks repeat identically, so callers tile the
    result over stages.
    """
    n_patt = geom.sign_patterns.shape[0]
    if geom.p:
        tv = mid[None, :] + geom.sign_patterns * rad[None, :]
    else:
        tv = np.zeros((1, 0))
    hx_eff = np.repeat(geom.hx_acl[0][None], n_patt, axis=0)
    hx_b_eff = np.repeat(geom.hx_b[0][None], n_patt, axis=0)
    for i in range(geom.p):
        hx_eff = hx_eff + tv[:, i][:, None, None] * geom.hx_acl[i + 1][None]
        hx_b_eff = hx_b_eff + tv[:, i][:, None, None] * geom.hx_b[i + 1][None]
    out = []
    for r in range(geom.n_x):
        for patt in geom.row_patterns[r]:
            out.append(hx_eff[patt, r])
            for pos, sl_ in enumerate(geom.nbr_col_slices):
                coeffs = hx_eff[patt, r, sl_]
                verts = geom.vertex_lists[pos]
                out.append([float(np.max(verts @ coeffs))])
            out.append(hx_b_eff[patt, r])
    return np.concatenate(out) if out else np.zeros(0)


def build_agent_template(cfg, lay, geoms, structure, s):
    geom = geoms[s]
    agent = cfg.agents[s]
    N = cfg.horizon
    n_cols = lay.total
    block = structure.blocks[s]

    ineq = _Coo()
    lam_prop = [_Coo() for _ in range(block.n_rows)] if not geom.box_mode else []
    b_ineq = []
    fill_ids = []
    r_i = 0

    # 1. tube initialization: -H_x z_0 - alpha_0 <= -H_x x_k
    tube_init_rows = slice(r_i, r_i + geom.n_x)
    z0 = lay.idx(("z", s, 0))
    a0 = lay.idx(("alpha", s, 0))
    for r in range(geom.n_x):
        ineq.add(r_i, z0, -geom.H_x[r])
        ineq.add(r_i, a0, [-1.0])
        b_ineq.append(0.0)  # filled per step
        r_i += 1

    # 2. state/input rows per stage
    for l in range(N):
        v_idx = lay.idx(("v", s, l))
        for r in range(geom.n_z):
            for pos, sig in enumerate(geom.neighbors):
                csl = geom.nbr_col_slices[pos]
                coeffs = geom.f_cl[r, csl]
                if np.any(coeffs != 0.0):
                    ineq.add(r_i, lay.idx(("z", sig, l)), coeffs)
                fb = geom.f_bar_matrix[r, pos]
                if fb != 0.0:
                    ineq.add(r_i, lay.idx(("alpha", sig, l)), [fb])
            gcoef = agent.G[r]
            if np.any(gcoef != 0.0):
                ineq.add(r_i, v_idx, gcoef)
            b_ineq.append(1.0)
            r_i += 1

    # 3. tube propagation
    prop_meta = []
    prop_start = r_i
    if geom.box_mode:
        for l in range(N):
            v_idx = lay.idx(("v", s, l))
            for r in range(geom.n_x):
                for patt in geom.row_patterns[r]:
                    # step-dependent placeholders: effective z rows over the
                    # neighborhood, one alpha coefficient per neighbor, v
                    for pos, sig in enumerate(geom.neighbors):
                        csl = geom.nbr_col_slices[pos]
                        fill_ids.extend(
                            ineq.add(r_i, lay.idx(("z", sig, l)),
                                     np.zeros(csl.stop - csl.start))
                        )
                    for pos, sig in enumerate(geom.neighbors):
                        fill_ids.extend(
                            ineq.add(r_i, lay.idx(("alpha", sig, l)), [0.0])
                        )
                    fill_ids.extend(ineq.add(r_i, v_idx, np.zeros(geom.m)))
                    if l < N - 1:
                        ineq.add(r_i, lay.idx(("z", s, l + 1)), -geom.H_x[r])
                        ineq.add(r_i, lay.idx(("alpha", s, l + 1)), [-1.0])
                    else:
                        ineq.add(r_i, lay.idx(("alphaN", s)), [-1.0])
                    b_ineq.append(-geom.w_bar[r])
                    prop_meta.append((l, patt, r))
                    r_i += 1
    else:
        hx_acl = geom.hx_acl
        hx_b = geom.hx_b
        for l in range(N):
            v_idx = lay.idx(("v", s, l))
            for c_i, combo in enumerate(geom.combos):
                xj = geom.combo_states[c_i]
                for r in range(geom.n_x):
                    for pos, sig in enumerate(geom.neighbors):
                        csl = geom.nbr_col_slices[pos]
                        zc = hx_acl[0][r, csl]
                        if np.any(zc != 0.0):
                            ineq.add(r_i, lay.idx(("z", sig, l)), zc)
                        ac = float(hx_acl[0][r, csl] @ xj[csl])
                        if ac != 0.0:
                            ineq.add(r_i, lay.idx(("alpha", sig, l)), [ac])
                    bc = hx_b[0][r]
                    if np.any(bc != 0.0):
                        ineq.add(r_i, v_idx, bc)
                    if l < N - 1:
                        ineq.add(r_i, lay.idx(("z", s, l + 1)), -geom.H_x[r])
                        ineq.add(r_i, lay.idx(("alpha", s, l + 1)), [-1.0])
                    else:
                        ineq.add(r_i, lay.idx(("alphaN", s)), [-1.0])
                    lam_off = lay.offsets[("lam", s)]
                    base = ((l * len(geom.combos) + c_i) * geom.n_x + r) * block.n_rows
                    for rp in range(block.n_rows):
                        lam_prop[rp].add(r_i, [lam_off + base + rp], [1.0])
                    b_ineq.append(-geom.w_bar[r])
                    prop_meta.append((l, c_i, r))
                    r_i += 1
    prop_rows = slice(prop_start, r_i)

    # 4. explicit multiplier nonnegativity
    if not geom.box_mode and ("lam", s) in lay.sizes:
        for col in lay.idx(("lam", s)):
            ineq.add(r_i, [col], [-1.0])
            b_ineq.append(0.0)
            r_i += 1

    # alpha nonnegativity for the agent's own stages, then terminal rows
    for l in range(N):
        ineq.add(r_i, lay.idx(("alpha", s, l)), [-1.0])
        b_ineq.append(0.0)
        r_i += 1
    ineq.add(r_i, lay.idx(("alphaN", s)), [-1.0])
    b_ineq.append(0.0)
    r_i += 1
    terminal_row = r_i
    ineq.add(r_i, lay.idx(("alphaN", s)), [1.0])
    b_ineq.append(geom.alpha_bar)
    r_i += 1
    n_ineq = r_i

    # equalities: CE dynamics then the agent's own measurement pin
    eq = _Coo()
    dyn = [_Coo() for _ in range(geom.p)]
    b_eq = []
    r_e = 0
    b_blocks = agent.b_blocks
    for l in range(N):
        v_idx = lay.idx(("v", s, l))
        nxt = lay.idx(("xhatN", s)) if l == N - 1 else lay.idx(("xhat", s, l + 1))
        for r in range(geom.n):
            eq.add(r_e, nxt[r : r + 1], [1.0])
            for pos, sig in enumerate(geom.neighbors):
                csl = geom.nbr_col_slices[pos]
                coeffs = geom.a_cl[0][r, csl]
                if np.any(coeffs != 0.0):
                    eq.add(r_e, lay.idx(("xhat", sig, l)), -coeffs)
            bc = b_blocks[0][r]
            if np.any(bc != 0.0):
                eq.add(r_e, v_idx, -bc)
            for i in range(geom.p):
                cli = geom.a_cl[i + 1][r]
                for pos, sig in enumerate(geom.neighbors):
                    csl = geom.nbr_col_slices[pos]
                    coeffs = cli[csl]
                    if np.any(coeffs != 0.0):
                        dyn[i].add(r_e, lay.idx(("xhat", sig, l)), -coeffs)
                bci = b_blocks[i + 1][r]
                if np.any(bci != 0.0):
                    dyn[i].add(r_e, v_idx, -bci)
            b_eq.append(0.0)
            r_e += 1
    pin_start = r_e
    x0_idx = lay.idx(("xhat", s, 0))
    for r in range(geom.n):
        eq.add(r_e, x0_idx[r : r + 1], [1.0])
        b_eq.append(0.0)  # filled with the measured state per step
        r_e += 1
    pin_rows = slice(pin_start, r_e)
    n_eq = r_e

    # local-only rows for the neighbor copies (the global assembly uses
    # each neighbor's own rows instead)
    copy_ineq = _Coo()
    copy_b_ineq = []
    r_ci = 0
    copy_eq = _Coo()
    copy_pin_agents = []
    r_ce = 0
    for sig in geom.neighbors:
        if sig == s:
            continue
        for l in range(N):
            copy_ineq.add(r_ci, lay.idx(("alpha", sig, l)), [-1.0])
            copy_b_ineq.append(0.0)
            r_ci += 1
        x0_sig = lay.idx(("xhat", sig, 0))
        for r in range(cfg.agents[sig].n):
            copy_eq.add(r_ce, x0_sig[r : r + 1], [1.0])
            r_ce += 1
        copy_pin_agents.append(sig)

    return AgentTemplate(
        s=s,
        n_ineq=n_ineq,
        n_eq=n_eq,
        ineq_coo=ineq,
        base_values=np.array(ineq.vals),
        fill_positions=np.array(fill_ids, dtype=int),
        eq_base=eq.matrix(n_eq, n_cols),
        dyn=[c.matrix(n_eq, n_cols) for c in dyn],
        lam_prop=[c.matrix(n_ineq, n_cols) for c in lam_prop],
        b_ineq=np.array(b_ineq),
        b_eq=np.array(b_eq),
        tube_init_rows=tube_init_rows,
        pin_rows=pin_rows,
        prop_rows=prop_rows,
        prop_row_meta=prop_meta,
        terminal_row=terminal_row,
        copy_ineq=copy_ineq.matrix(r_ci, n_cols),
        copy_b_ineq=np.array(copy_b_ineq),
        copy_eq=copy_eq.matrix(r_ce, n_cols),
        copy_pin_agents=copy_pin_agents,
        n_cols=n_cols,
    )


@dataclass
class StepData:
    """Per-step identification state entering the MPC matrices."""

    x: np.ndarray  # global measured state
    theta_hat: list  # per-agent local estimates
    mids: list  # per-agent parameter box midpoints (box mode)
    rads: list
    h_vals: list  # per-agent current h (explicit mode and certificates)
    bounds: list  # per-agent (lb, ub)


def make_step_data(cfg, param_sets, lms_states, x):
    mids, rads, h_vals, bounds, thetas = [], [], [], [], []
    for s, ps in enumerate(param_sets):
        lb, ub = ps.bounds()
        if np.any(~np.isfinite(lb)) or np.any(~np.isfinite(ub)):
            mids.append(None)
            rads.append(None)
        else:
            mids.append(0.5 * (ub + lb))
            rads.append(0.5 * (ub - lb))
        bounds.append((lb, ub))
        h_vals.append(ps.h.copy())
        thetas.append(lms_states[s].theta_hat.copy())
    return StepData(x=np.asarray(x, dtype=float), theta_hat=thetas, mids=mids,
                    rads=rads, h_vals=h_vals, bounds=bounds)


def agent_step_matrices(cfg, template, geom, step):
    """Materialize one agent's (A_ineq, b_ineq, A_eq, b_eq) for a step."""
    s = template.s
    if geom.box_mode:
        values = template.base_values.copy()
        if template.fill_positions.size:
            mid = step.mids[s]
            rad = step.rads[s]
            if geom.p and mid is None:
                raise EmptyParamSet(f"agent {s}: parameter bounds are not finite")
            stage = prop_fill_values(
                geom,
                mid if geom.p else np.zeros(0),
                rad if geom.p else np.zeros(0),
            )
            values[template.fill_positions] = np.tile(stage, cfg.horizon)
        a_ineq = template.ineq_matrix(values)
    else:
        a_ineq = template.ineq_matrix(template.base_values)
        h = step.h_vals[s]
        for rp in range(h.size):
            a_ineq = a_ineq + h[rp] * template.lam_prop[rp]
    a_eq = template.eq_base
    th = step.theta_hat[s]
    for i in range(geom.p):
        a_eq = a_eq + th[i] * template.dyn[i]

    b_ineq = template.b_ineq.copy()
    b_ineq[template.tube_init_rows] = -geom.H_x @ step.x[cfg.agent_state_slice(s)]
    b_eq = template.b_eq.copy()
    b_eq[template.pin_rows] = step.x[cfg.agent_state_slice(s)]
    return a_ineq, b_ineq, a_eq, b_eq


def explicit_multiplier_equalities(cfg, lay, geom, structure, s):
    """Equality family H_x D^j = Lambda H_theta for a non-box agent."""
    block = structure.blocks[s]
    N = cfg.horizon
    eq = _Coo()
    b = []
    r_e = 0
    hx_acl = geom.hx_acl
    hx_b = geom.hx_b
    lam_off = lay.offsets[("lam", s)] if ("lam", s) in lay.sizes else None
    for l in range(N):
        v_idx = lay.idx(("v", s, l))
        for c_i, combo in enumerate(geom.combos):
            xj = geom.combo_states[c_i]
            for r in range(geom.n_x):
                base = ((l * len(geom.combos) + c_i) * geom.n_x + r) * block.n_rows
                for i in range(geom.p):
                    for pos, sig in enumerate(geom.neighbors):
                        csl = geom.nbr_col_slices[pos]
                        zc = hx_acl[i + 1][r, csl]
                        if np.any(zc != 0.0):
                            eq.add(r_e, lay.idx(("z", sig, l)), zc)
                        ac = float(hx_acl[i + 1][r, csl] @ xj[csl])
                        if ac != 0.0:
                            eq.add(r_e, lay.idx(("alpha", sig, l)), [ac])
                    bci = hx_b[i + 1][r]
                    if np.any(bci != 0.0):
                        eq.add(r_e, v_idx, bci)
                    for rp in range(block.n_rows):
                        coef = block.rows[rp, i]
                        if coef != 0.0:
                            eq.add(r_e, [lam_off + base + rp], [-coef])
                    b.append(0.0)
                    r_e += 1
    return eq.matrix(r_e, lay.total), np.array(b)


def true_objective(cfg, lay, geoms, xg):
    """Sum of stage costs evaluated at a global decision vector."""
    total = 0.0
    N = cfg.horizon
    for s in range(cfg.n_agents):
        design = cfg.designs[s]
        geom = geoms[s]
        for l in range(N):
            xh = xg[lay.sl(("xhat", s, l))]
            total += float(xh @ design.Q @ xh)
            xh_nb = np.concatenate(
                [xg[lay.sl(("xhat", sig, l))] for sig in geom.neighbors]
            )
            u = design.K @ xh_nb + xg[lay.sl(("v", s, l))]
            total += float(u @ design.R @ u)
        xN = xg[lay.sl(("xhatN", s))]
        total += float(xN @ design.P @ xN)
    return total
