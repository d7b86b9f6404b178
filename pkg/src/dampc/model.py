"""Uncertain interconnected network model and configuration loading.

The global system is x+ = A(theta) x + B(theta) u + w with affine
parameterization A(theta) = A_0 + sum_i A_i theta_i (same for B). Each
agent owns a row block of the global matrices; its blocks are expressed
over the states of its neighborhood, so assembling all agents
reproduces the global matrices exactly and non-neighbor couplings are
structurally zero.
"""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    DisturbanceOutsideW,
    IndefiniteCostMatrix,
    ParseError,
    SchemaError,
)
from .poly import Polytope, VertexSet
from .tolerances import PSD_TOL


@dataclass
class AgentModel:
    """One agent's dynamics, constraints and disturbance description.

    ``a_blocks`` has shape (p_s + 1, n, n_nbhd): index 0 is the nominal
    block, index i >= 1 the basis block of local parameter i - 1.
    ``param_map`` sends local parameter indices to global ones.
    """

    id: int
    neighbors: list
    n: int
    m: int
    a_blocks: np.ndarray
    b_blocks: np.ndarray
    param_map: list
    F: np.ndarray
    G: np.ndarray
    w_lo: np.ndarray
    w_hi: np.ndarray

    @property
    def p(self):
        return len(self.param_map)

    @property
    def n_nbhd(self):
        return self.a_blocks.shape[2]

    @property
    def n_z(self):
        return self.F.shape[0]

    def a_of(self, theta_local):
        """A_{d,s}(theta_s) for a local parameter vector."""
        out = self.a_blocks[0].copy()
        for i, th in enumerate(theta_local):
            out += th * self.a_blocks[i + 1]
        return out

    def b_of(self, theta_local):
        out = self.b_blocks[0].copy()
        for i, th in enumerate(theta_local):
            out += th * self.b_blocks[i + 1]
        return out

    def d_matrix(self, x_nbhd, u):
        """Regressor D_s: column i is A_{d,s,i} x_nbhd + B_{d,s,i} u."""
        cols = [
            self.a_blocks[i + 1] @ x_nbhd + self.b_blocks[i + 1] @ u
            for i in range(self.p)
        ]
        return np.column_stack(cols) if cols else np.zeros((self.n, 0))

    def w_polytope(self):
        return Polytope.from_box(self.w_lo, self.w_hi)


@dataclass
class AgentDesign:
    """Per-agent cost, gain and tube cross-section design data."""

    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    K: np.ndarray  # (m, n_nbhd), feedback over the neighborhood state
    H_x: np.ndarray  # (n_x, n)
    x_vertices: np.ndarray  # (q_s, n)

    @property
    def n_x(self):
        return self.H_x.shape[0]

    @property
    def q(self):
        return self.x_vertices.shape[0]

    def tube_polytope(self):
        return Polytope(self.H_x, np.ones(self.n_x))

    def vertex_set(self):
        return VertexSet(self.x_vertices)


@dataclass
class NetworkConfig:
    name: str
    agents: list
    designs: list
    theta0: Polytope
    horizon: int
    rho: float
    admm_max_iters: int
    admm_tol: float
    t_sim: int
    n_seeds: int
    kappa: float
    x0: np.ndarray
    base_seed: int = 0
    theta_mid: np.ndarray | None = None  # kappa-scaling anchor (radii at kappa=1)
    theta_rad: np.ndarray | None = None
    raw: dict | None = None

    @property
    def n_agents(self):
        return len(self.agents)

    @property
    def p(self):
        return self.theta0.dim

    def agent_state_slice(self, s):
        start = sum(a.n for a in self.agents[:s])
        return slice(start, start + self.agents[s].n)

    def agent_input_slice(self, s):
        start = sum(a.m for a in self.agents[:s])
        return slice(start, start + self.agents[s].m)

    def nbhd_state_indices(self, s):
        idx = []
        for sig in self.agents[s].neighbors:
            sl = self.agent_state_slice(sig)
            idx.extend(range(sl.start, sl.stop))
        return np.array(idx, dtype=int)

    def with_kappa(self, kappa):
        """Copy of the configuration with the parameter set rescaled.

        Requires the kappa-scaling anchor (midpoints and kappa=1 radii of
        an axis-aligned parameter box).
        """
        if self.theta_mid is None or self.theta_rad is None:
            raise SchemaError("configuration has no kappa scaling anchor")
        lo = self.theta_mid - kappa * self.theta_rad
        hi = self.theta_mid + kappa * self.theta_rad
        import copy

        cfg = copy.deepcopy(self)
        cfg.theta0 = Polytope.from_box(lo, hi, compact=(kappa > 0))
        cfg.kappa = float(kappa)
        return cfg

    def config_hash(self):
        payload = self.raw if self.raw is not None else {"name": self.name}
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class GlobalModel:
    a_mats: np.ndarray  # (p + 1, n, n)
    b_mats: np.ndarray  # (p + 1, n, m)
    theta0: Polytope
    w_lo: np.ndarray
    w_hi: np.ndarray
    F: np.ndarray
    G: np.ndarray

    @property
    def n(self):
        return self.a_mats.shape[1]

    @property
    def m(self):
        return self.b_mats.shape[2]

    @property
    def p(self):
        return self.a_mats.shape[0] - 1

    def a_of(self, theta):
        out = self.a_mats[0].copy()
        for i, th in enumerate(theta):
            out += th * self.a_mats[i + 1]
        return out

    def b_of(self, theta):
        out = self.b_mats[0].copy()
        for i, th in enumerate(theta):
            out += th * self.b_mats[i + 1]
        return out

    def d_matrix(self, x, u):
        cols = [self.a_mats[i + 1] @ x + self.b_mats[i + 1] @ u for i in range(self.p)]
        return np.column_stack(cols) if cols else np.zeros((self.n, 0))


def step_truth(model, theta_star, x, u, w, w_tol=1e-12):
    """One exact step of the true system x+ = A(th*) x + B(th*) u + w."""
    theta_star = np.asarray(theta_star, dtype=float)
    if not model.theta0.contains(theta_star, tol=1e-9):
        raise ValueError("theta_star outside the initial parameter set")
    w = np.asarray(w, dtype=float)
    if np.any(w > model.w_hi + w_tol) or np.any(w < model.w_lo - w_tol):
        raise DisturbanceOutsideW("disturbance sample violates the W box")
    return model.a_of(theta_star) @ x + model.b_of(theta_star) @ u + w


def assemble_global(cfg) -> GlobalModel:
    """Build the global matrices by block placement of agent data."""
    n = sum(a.n for a in cfg.agents)
    m = sum(a.m for a in cfg.agents)
    p = cfg.p
    a_mats = np.zeros((p + 1, n, n))
    b_mats = np.zeros((p + 1, n, m))
    n_z = sum(a.n_z for a in cfg.agents)
    F = np.zeros((n_z, n))
    G = np.zeros((n_z, m))
    w_lo = np.concatenate([a.w_lo for a in cfg.agents])
    w_hi = np.concatenate([a.w_hi for a in cfg.agents])
    row = 0
    for s, agent in enumerate(cfg.agents):
        rows = cfg.agent_state_slice(s)
        cols = cfg.nbhd_state_indices(s)
        in_cols = cfg.agent_input_slice(s)
        a_mats[0][rows, cols] = agent.a_blocks[0]
        b_mats[0][rows, in_cols] = agent.b_blocks[0]
        for i, g in enumerate(agent.param_map):
            a_mats[g + 1][rows, cols] = agent.a_blocks[i + 1]
            b_mats[g + 1][rows, in_cols] = agent.b_blocks[i + 1]
        F[row : row + agent.n_z, cols] = agent.F
        G[row : row + agent.n_z, in_cols] = agent.G
        row += agent.n_z
    return GlobalModel(a_mats, b_mats, cfg.theta0, w_lo, w_hi, F, G)


def split_global(cfg, model):
    """Recover each agent's blocks from a GlobalModel (round-trip check)."""
    views = []
    for s, agent in enumerate(cfg.agents):
        rows = cfg.agent_state_slice(s)
        cols = cfg.nbhd_state_indices(s)
        in_cols = cfg.agent_input_slice(s)
        a_blocks = [model.a_mats[0][rows, cols]]
        b_blocks = [model.b_mats[0][rows, in_cols]]
        for g in agent.param_map:
            a_blocks.append(model.a_mats[g + 1][rows, cols])
            b_blocks.append(model.b_mats[g + 1][rows, in_cols])
        views.append((np.array(a_blocks), np.array(b_blocks)))
    return views


# --- configuration parsing -------------------------------------------------


def _matrix(node, path, rows=None, cols=None):
    try:
        arr = np.array(node, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: not a numeric matrix") from exc
    if arr.ndim == 1 and rows == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise SchemaError(f"{path}: expected a matrix")
    if rows is not None and arr.shape[0] != rows:
        raise DimensionMismatch(f"{path}: expected {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise DimensionMismatch(f"{path}: expected {cols} cols, got {arr.shape[1]}")
    return arr


def _vector(node, path, size=None):
    try:
        arr = np.atleast_1d(np.array(node, dtype=float))
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: not a numeric vector") from exc
    if size is not None and arr.size != size:
        raise DimensionMismatch(f"{path}: expected length {size}, got {arr.size}")
    return arr


def _check_spd(mat, path):
    if mat.shape[0] != mat.shape[1] or np.max(np.abs(mat - mat.T)) > 1e-10:
        raise IndefiniteCostMatrix(f"{path}: cost matrix must be symmetric")
    w = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    if w.min() <= PSD_TOL:
        raise IndefiniteCostMatrix(f"{path}: cost matrix has eigenvalue {w.min():.3e}")


def parse_config(data, name="<memory>") -> NetworkConfig:
    """Validate a configuration dictionary and build a NetworkConfig."""
    if not isinstance(data, dict):
        raise SchemaError("top level must be an object")
    for key in ("agents", "theta0", "horizon", "admm", "sim"):
        if key not in data:
            raise SchemaError(f"missing required key '{key}'")

    th = data["theta0"]
    theta0 = Polytope(
        _matrix(th.get("H"), "theta0.H"), _vector(th.get("h"), "theta0.h"), compact=True
    )
    p = theta0.dim

    agents = []
    designs = []
    id_to_neighbors = {}
    for k, node in enumerate(data["agents"]):
        path = f"agents[{k}]"
        if node.get("id") != k:
            raise SchemaError(f"{path}: ids must be 0..S-1 in order")
        neighbors = list(node.get("neighbors", []))
        if k not in neighbors:
            raise SchemaError(f"{path}: neighbor list must include the agent itself")
        if sorted(set(neighbors)) != sorted(neighbors):
            raise SchemaError(f"{path}: duplicate neighbors")
        id_to_neighbors[k] = sorted(neighbors)
        n = int(node["n"])
        m = int(node["m"])
        param_map = list(node.get("param_map", []))
        if len(set(param_map)) != len(param_map):
            raise SchemaError(f"{path}.param_map: must be injective")
        if any(g < 0 or g >= p for g in param_map):
            raise SchemaError(f"{path}.param_map: global parameter index out of range")
        agents.append(
            AgentModel(
                id=k,
                neighbors=id_to_neighbors[k],
                n=n,
                m=m,
                a_blocks=np.array(node["a_blocks"], dtype=float),
                b_blocks=np.array(node["b_blocks"], dtype=float),
                param_map=param_map,
                F=_matrix(node["F"], f"{path}.F"),
                G=_matrix(node["G"], f"{path}.G"),
                w_lo=_vector(node["w_lo"], f"{path}.w_lo", n),
                w_hi=_vector(node["w_hi"], f"{path}.w_hi", n),
            )
        )

    for k, agent in enumerate(agents):
        for sig in agent.neighbors:
            if sig < 0 or sig >= len(agents):
                raise SchemaError(f"agents[{k}]: neighbor {sig} does not exist")
            if k not in id_to_neighbors[sig]:
                raise SchemaError(
                    f"agents[{k}]: neighbor relation with agent {sig} is asymmetric"
                )

    for k, (agent, node) in enumerate(zip(agents, data["agents"])):
        path = f"agents[{k}]"
        n_nbhd = sum(agents[sig].n for sig in agent.neighbors)
        if agent.a_blocks.shape != (agent.p + 1, agent.n, n_nbhd):
            raise DimensionMismatch(
                f"{path}.a_blocks: expected {(agent.p + 1, agent.n, n_nbhd)}, "
                f"got {agent.a_blocks.shape}"
            )
        if agent.b_blocks.shape != (agent.p + 1, agent.n, agent.m):
            raise DimensionMismatch(f"{path}.b_blocks: bad shape {agent.b_blocks.shape}")
        if agent.F.shape[1] != n_nbhd or agent.G.shape != (agent.F.shape[0], agent.m):
            raise DimensionMismatch(f"{path}: F/G blocks inconsistent")
        if np.any(agent.w_lo > agent.w_hi):
            raise SchemaError(f"{path}: disturbance box is empty")
        Q = _matrix(node["Q"], f"{path}.Q", agent.n, agent.n)
        R = _matrix(node["R"], f"{path}.R", agent.m, agent.m)
        P = _matrix(node["P"], f"{path}.P", agent.n, agent.n)
        for mat, nm in ((Q, "Q"), (R, "R"), (P, "P")):
            _check_spd(mat, f"{path}.{nm}")
        K = _matrix(node["K"], f"{path}.K", agent.m, n_nbhd)
        H_x = _matrix(node["H_x"], f"{path}.H_x", None, agent.n)
        x_vertices = _matrix(node["x_vertices"], f"{path}.x_vertices", None, agent.n)
        design = AgentDesign(Q=Q, R=R, P=P, K=K, H_x=H_x, x_vertices=x_vertices)
        try:
            design.vertex_set().validate_against(design.tube_polytope())
        except ValueError as exc:
            raise SchemaError(f"{path}: tube vertex list inconsistent ({exc})") from exc
        designs.append(design)

    admm = data["admm"]
    sim = data["sim"]
    x0 = _vector(sim["x0"], "sim.x0", sum(a.n for a in agents))
    theta_mid = theta_rad = None
    if "theta_scaling" in data:
        theta_mid = _vector(data["theta_scaling"]["mid"], "theta_scaling.mid", p)
        theta_rad = _vector(data["theta_scaling"]["rad"], "theta_scaling.rad", p)

    return NetworkConfig(
        name=data.get("name", name),
        agents=agents,
        designs=designs,
        theta0=theta0,
        horizon=int(data["horizon"]),
        rho=float(admm.get("rho", 25.0)),
        admm_max_iters=int(admm.get("max_iters", 400)),
        admm_tol=float(admm.get("tol", 1e-4)),
        t_sim=int(sim.get("t_sim", 60)),
        n_seeds=int(sim.get("n_seeds", 25)),
        kappa=float(sim.get("kappa", 1.0)),
        x0=x0,
        base_seed=int(sim.get("base_seed", 0)),
        theta_mid=theta_mid,
        theta_rad=theta_rad,
        raw=data,
    )


def load_config(path) -> NetworkConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return parse_config(data, name=str(path))
