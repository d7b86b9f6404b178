"""Offline ingredients of the tube controller.

Computes the support constants (f_bar, w_bar, alpha_bar) per agent, the
redundant per-agent parameter constraint structure, and validation
reports for the stabilizing gain and the terminal set. The gain and the
tube cross-sections are inputs; this module checks them rather than
synthesizing them.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import TerminalSetNotInvariant, UnstructuredRow
from .model import assemble_global
from .poly import Polytope, box_vertices, support_value


# --- redundant parameter constraints ----------------------------------------


@dataclass
class ThetaBlock:
    """Agent-local copy of the parameter constraints touching its params.

    ``rows`` is over the agent's local parameter indices. ``global_rows``
    records, for each local row, the global constraint row it copies.
    Axis tables map local parameter index -> (row index, coefficient) for
    single-coefficient rows, split by bound direction.
    """

    agent: int
    rows: np.ndarray
    h0: np.ndarray
    global_rows: list
    ub_rows: dict
    lb_rows: dict

    @property
    def n_rows(self):
        return self.rows.shape[0]

    @property
    def p(self):
        return self.rows.shape[1]

    def bounds_from_h(self, h):
        """Per-parameter (lb, ub) implied by the axis rows under ``h``."""
        p = self.p
        ub = np.full(p, np.inf)
        lb = np.full(p, -np.inf)
        for i in range(p):
            for r, coef in self.ub_rows.get(i, []):
                ub[i] = min(ub[i], h[r] / coef)
            for r, coef in self.lb_rows.get(i, []):
                lb[i] = max(lb[i], h[r] / coef)
        return lb, ub


@dataclass
class RedundantThetaStructure:
    blocks: list
    # global row index -> list of (agent, local row) copies
    provenance: dict

    def block(self, s):
        return self.blocks[s]


def build_redundant_theta(cfg) -> RedundantThetaStructure:
    """Copy each global constraint row into every agent containing all of
    the row's parameters.

    Raises UnstructuredRow if some row involves parameters that no single
    agent contains (such a row cannot be assigned local multipliers).
    """
    H = cfg.theta0.H
    h = cfg.theta0.h
    per_agent_rows = [[] for _ in cfg.agents]
    per_agent_globals = [[] for _ in cfg.agents]
    provenance = {}
    param_sets = [set(a.param_map) for a in cfg.agents]
    for r in range(H.shape[0]):
        support = set(np.flatnonzero(np.abs(H[r]) > 0.0).tolist())
        owners = [s for s in range(cfg.n_agents) if support <= param_sets[s]]
        if not owners:
            raise UnstructuredRow(
                f"theta0 row {r} involves parameters {sorted(support)} "
                "with no common agent"
            )
        provenance[r] = []
        for s in owners:
            local = np.zeros(len(cfg.agents[s].param_map))
            for i, g in enumerate(cfg.agents[s].param_map):
                local[i] = H[r, g]
            provenance[r].append((s, len(per_agent_rows[s])))
            per_agent_rows[s].append(local)
            per_agent_globals[s].append(r)

    blocks = []
    for s, agent in enumerate(cfg.agents):
        rows = (
            np.array(per_agent_rows[s])
            if per_agent_rows[s]
            else np.zeros((0, agent.p))
        )
        h0 = np.array([h[g] for g in per_agent_globals[s]])
        ub_rows = {}
        lb_rows = {}
        for r_local in range(rows.shape[0]):
            nz = np.flatnonzero(np.abs(rows[r_local]) > 0.0)
            if nz.size != 1:
                continue
            i = int(nz[0])
            coef = rows[r_local, i]
            table = ub_rows if coef > 0 else lb_rows
            table.setdefault(i, []).append((r_local, coef))
        blocks.append(
            ThetaBlock(
                agent=s,
                rows=rows,
                h0=h0,
                global_rows=per_agent_globals[s],
                ub_rows=ub_rows,
                lb_rows=lb_rows,
            )
        )
    return RedundantThetaStructure(blocks=blocks, provenance=provenance)


def collapse_redundant(structure, cfg):
    """Rebuild (H_theta, h) from the per-agent copies (bookkeeping check)."""
    H = np.zeros_like(cfg.theta0.H)
    h = np.zeros_like(cfg.theta0.h)
    seen = np.zeros(h.size, dtype=bool)
    for r, copies in structure.provenance.items():
        s, r_local = copies[0]
        block = structure.blocks[s]
        for i, g in enumerate(cfg.agents[s].param_map):
            H[r, g] = block.rows[r_local, i]
        h[r] = block.h0[r_local]
        seen[r] = True
    if not seen.all():
        raise UnstructuredRow("provenance map does not cover all rows")
    return H, h


# --- offline tube constants --------------------------------------------------


@dataclass
class AgentTube:
    f_cl: np.ndarray        # F_s + G_s K_s over the neighborhood state
    f_bar_matrix: np.ndarray  # (n_z, |N_s|): per-neighbor tube support
    f_bar: np.ndarray       # row sums of f_bar_matrix
    w_bar: np.ndarray       # (n_x,)
    alpha_bar: float


@dataclass
class TubeDesign:
    agents: list

    def agent(self, s):
        return self.agents[s]


def compute_offline_constants(cfg) -> TubeDesign:
    """Support constants of the tube formulation, via LP support values."""
    tubes = []
    for s, (agent, design) in enumerate(zip(cfg.agents, cfg.designs)):
        f_cl = agent.F + agent.G @ design.K
        nbrs = agent.neighbors
        f_bar_matrix = np.zeros((agent.n_z, len(nbrs)))
        col = 0
        for j, sig in enumerate(nbrs):
            n_sig = cfg.agents[sig].n
            tube_poly = cfg.designs[sig].tube_polytope()
            for r in range(agent.n_z):
                c = f_cl[r, col : col + n_sig]
                if np.any(c != 0.0):
                    f_bar_matrix[r, j] = support_value(tube_poly, c)
            col += n_sig
        f_bar = f_bar_matrix.sum(axis=1)
        w_poly = agent.w_polytope()
        w_bar = np.array(
            [support_value(w_poly, row) for row in design.H_x]
        )
        worst = float(f_bar.max()) if f_bar.size else 0.0
        alpha_bar = 1.0 if worst <= 1.0 else 1.0 / worst
        tubes.append(AgentTube(f_cl, f_bar_matrix, f_bar, w_bar, alpha_bar))
    return TubeDesign(agents=tubes)


def neighborhood_vertex_combos(cfg, s):
    """Cartesian product of neighbor tube vertices for agent s.

    Returns (states, index_tuples): ``states`` is (n_combo, n_nbhd) with
    each row the stacked neighborhood state built from one vertex choice
    per neighbor; ``index_tuples`` holds the per-neighbor vertex indices.
    """
    agent = cfg.agents[s]
    vertex_lists = [cfg.designs[sig].x_vertices for sig in agent.neighbors]
    counts = [v.shape[0] for v in vertex_lists]
    index_tuples = list(itertools.product(*[range(c) for c in counts]))
    states = np.zeros((len(index_tuples), agent.n_nbhd))
    for row, combo in enumerate(index_tuples):
        parts = [vertex_lists[j][combo[j]] for j in range(len(combo))]
        states[row] = np.concatenate(parts)
    return states, index_tuples


# --- validators ---------------------------------------------------------------


@dataclass
class GainReport:
    radii: np.ndarray
    max_radius: float
    stable: bool
    skipped: bool = False
    note: str = ""

    def to_dict(self):
        return {
            "max_radius": self.max_radius,
            "stable": bool(self.stable),
            "skipped": bool(self.skipped),
            "radii": [float(r) for r in np.atleast_1d(self.radii)],
            "note": self.note,
        }


def _theta_box_vertices(theta0):
    lo, hi = theta0.interval_hull()
    verts = box_vertices(lo, hi)
    # Only valid if theta0 really is that box: check support match.
    for r in range(theta0.n_rows):
        sv = support_value(theta0, theta0.H[r])
        if abs(sv - verts.max_over(theta0.H[r])) > 1e-7 * (1.0 + abs(sv)):
            return None
    return verts


def global_gain_matrix(cfg):
    n = sum(a.n for a in cfg.agents)
    m = sum(a.m for a in cfg.agents)
    K = np.zeros((m, n))
    for s, design in enumerate(cfg.designs):
        K[cfg.agent_input_slice(s), cfg.nbhd_state_indices(s)] = design.K
    return K


def validate_gain(cfg) -> GainReport:
    """Spectral radius of A(theta) + B(theta) K at every Theta_0 vertex.

    Vertex stability is necessary but not sufficient for robust stability
    over the whole polytope, so the result is advisory.
    """
    verts = _theta_box_vertices(cfg.theta0)
    if verts is None:
        return GainReport(
            radii=np.zeros(0), max_radius=np.nan, stable=False, skipped=True,
            note="theta0 is not an axis-aligned box; vertex check skipped",
        )
    model = assemble_global(cfg)
    K = global_gain_matrix(cfg)
    radii = []
    for theta in verts.vertices:
        acl = model.a_of(theta) + model.b_of(theta) @ K
        radii.append(float(np.abs(np.linalg.eigvals(acl)).max()))
    radii = np.array(radii)
    return GainReport(radii=radii, max_radius=float(radii.max()), stable=bool(radii.max() < 1.0))


@dataclass
class TerminalSetReport:
    violations: list
    max_violation: float
    invariant: bool

    def to_dict(self):
        return {
            "invariant": bool(self.invariant),
            "max_violation": self.max_violation,
            "n_violations": len(self.violations),
            "violations": self.violations[:50],
        }


def validate_terminal_set(design, cfg, strict=False, tol=1e-9) -> TerminalSetReport:
    """Check robust invariance of the product terminal set.

    For every agent, every Theta_0 box vertex, and every combination of
    neighbor tube vertices scaled by their alpha_bar, the one-step image
    must satisfy H_x x+ <= alpha_bar - w_bar. This is the decomposed
    per-agent check; the benchmark design is not required to pass it
    (failures become warnings unless ``strict``).
    """
    verts = _theta_box_vertices(cfg.theta0)
    violations = []
    max_violation = 0.0
    if verts is None:
        return TerminalSetReport([], np.nan, False)
    for s, agent in enumerate(cfg.agents):
        tube = design.agent(s)
        dsn = cfg.designs[s]
        states, combos = neighborhood_vertex_combos(cfg, s)
        scale = np.concatenate(
            [
                np.full(cfg.agents[sig].n, design.agent(sig).alpha_bar)
                for sig in agent.neighbors
            ]
        )
        scaled = states * scale[None, :]
        bound = tube.alpha_bar - tube.w_bar  # per H_x row
        for theta in verts.vertices:
            th_local = theta[agent.param_map]
            a_cl = agent.a_of(th_local) + agent.b_of(th_local) @ dsn.K
            images = scaled @ a_cl.T
            lhs = images @ dsn.H_x.T
            worst = lhs - bound[None, :]
            bad = np.flatnonzero(worst.max(axis=1) > tol)
            for b in bad[:20]:
                violations.append(
                    {
                        "agent": s,
                        "theta": [float(t) for t in theta],
                        "combo": list(combos[b]),
                        "violation": float(worst[b].max()),
                    }
                )
            if worst.size:
                max_violation = max(max_violation, float(worst.max()))
    invariant = max_violation <= tol
    if strict and not invariant:
        raise TerminalSetNotInvariant(
            f"terminal set violated by {max_violation:.3e}"
        )
    return TerminalSetReport(violations, max_violation, invariant)


def design_report(cfg) -> dict:
    """Full offline design report (JSON-serializable)."""
    tubes = compute_offline_constants(cfg)
    gain = validate_gain(cfg)
    terminal = validate_terminal_set(tubes, cfg)
    agents = []
    for s, tube in enumerate(tubes.agents):
        agents.append(
            {
                "agent": s,
                "f_bar": [float(v) for v in tube.f_bar],
                "w_bar": [float(v) for v in tube.w_bar],
                "alpha_bar": float(tube.alpha_bar),
            }
        )
    return {
        "config": cfg.name,
        "gain": gain.to_dict(),
        "terminal_set": terminal.to_dict(),
        "agents": agents,
    }
