"""Mass-spring-damper chain benchmark construction.

Five unit masses in a chain, coupled by four springs (uncertain
stiffness, shared by the adjacent masses) and four known dampers.
Dynamics are Euler-discretized with the position and velocity of each
mass as its states. The builder also generates the tube design for each
agent: a decentralized stabilizing gain and a polygon circumscribing the
Lyapunov ellipse of the local nominal closed loop.
"""

import json

import numpy as np
import scipy.linalg

from .errors import InvalidChain
from .model import NetworkConfig, parse_config
from .poly import Polytope, polygon_vertices_2d

# Gains and tube shaping calibrated on the benchmark: every Theta_0 vertex
# plant must be stabilized and the closed loop must stay feasible from the
# benchmark initial state at kappa = 1.
DEFAULT_GAINS = ((2.0, 1.2), (2.0, 1.2), (2.0, 1.2), (2.0, 1.2), (2.0, 1.2))
DEFAULT_TUBE_ROWS = 4
DEFAULT_TUBE_ANGLE = 0.0
DEFAULT_POS_EXTENT = 3.2
DEFAULT_VEL_EXTENT = 3.4


def local_closed_loop(mass, k_total, c_total, kp, kd, h):
    """Euler map of one mass under u = -kp p - kd v and nominal springs."""
    return np.array(
        [
            [1.0, h],
            [-h * (k_total + kp) / mass, 1.0 - h * (c_total + kd) / mass],
        ]
    )


def tube_cross_section(a_loc, rows=DEFAULT_TUBE_ROWS, angle=DEFAULT_TUBE_ANGLE,
                       pos_extent=DEFAULT_POS_EXTENT, vel_extent=DEFAULT_VEL_EXTENT):
    """Polygon circumscribing a shaped Lyapunov ellipse of a 2x2 map.

    Solves A' P A - P = -I, rescales the ellipse axes so its position and
    velocity extents equal the requested values (the raw Lyapunov set of a
    stiff agent is too fast for the input bound), and returns (H,
    vertices) of the tangent polygon touching the ellipse at ``rows``
    evenly spaced points (in whitened coordinates, starting at ``angle``).
    """
    p_lyap = scipy.linalg.solve_discrete_lyapunov(a_loc.T, np.eye(2))
    p_inv = np.linalg.inv(p_lyap)
    raw_pos = np.sqrt(p_inv[0, 0])
    raw_vel = np.sqrt(p_inv[1, 1])
    shape = np.diag([raw_pos / pos_extent, raw_vel / vel_extent])
    p_lyap = shape @ p_lyap @ shape
    p_inv = np.linalg.inv(p_lyap)
    r = pos_extent / np.sqrt(p_inv[0, 0])
    chol_u = np.linalg.cholesky(p_lyap).T  # x' P x = ||chol_u x||^2
    inv_u = np.linalg.inv(chol_u)
    # anchor one tangent pair at the ellipse's velocity extreme so the
    # polygon support along the velocity axis is exact (no vertex bulge on
    # the binding constraint rows); remaining pairs are whitened-orthogonal
    x_vel = (p_inv @ np.array([0.0, 1.0]))
    y_vel = chol_u @ x_vel
    base = np.arctan2(y_vel[1], y_vel[0])
    h_rows = []
    for j in range(rows):
        phi = base + 2.0 * np.pi * j / rows
        if j % 2 == 1:
            phi += angle  # offset of the non-anchored tangent pair(s)
        y = r * np.array([np.cos(phi), np.sin(phi)])
        x_t = inv_u @ y  # tangent point on the ellipse boundary
        h_rows.append((p_lyap @ x_t) / r**2)
    H = np.array(h_rows)
    poly = Polytope(H, np.ones(rows))
    verts = polygon_vertices_2d(poly)
    return H, verts.vertices


def build_msd_benchmark(
    masses=(1.0, 1.0, 1.0, 1.0, 1.0),
    dampers=(2.0, 2.0, 2.0, 1.5),
    spring_mid=(2.4, 3.6, 2.5, 2.7),
    spring_rad=(0.7, 1.0, 1.0, 0.7),
    kappa=1.0,
    h=0.1,
    state_bound=5.0,
    input_bound=5.0,
    w_bound=0.05,
    horizon=5,
    rho=25.0,
    admm_max_iters=400,
    admm_tol=1e-4,
    t_sim=60,
    n_seeds=25,
    x0=None,
    gains=None,
    tube_rows=DEFAULT_TUBE_ROWS,
    tube_angle=DEFAULT_TUBE_ANGLE,
    pos_extent=DEFAULT_POS_EXTENT,
    vel_extent=DEFAULT_VEL_EXTENT,
    base_seed=0,
    name="mass_spring_damper",
) -> NetworkConfig:
    """Build the chain benchmark as a fully validated NetworkConfig."""
    masses = np.asarray(masses, dtype=float)
    dampers = np.asarray(dampers, dtype=float)
    spring_mid = np.asarray(spring_mid, dtype=float)
    spring_rad = np.asarray(spring_rad, dtype=float)
    s_count = masses.size
    if s_count < 2:
        raise InvalidChain("need at least two masses")
    if dampers.size != s_count - 1 or spring_mid.size != s_count - 1 or (
        spring_rad.size != s_count - 1
    ):
        raise InvalidChain("chain needs exactly S-1 springs and dampers")
    if np.any(masses <= 0):
        raise InvalidChain("masses must be positive")
    if np.any(spring_rad < 0) or kappa < 0:
        raise InvalidChain("spring radii and kappa must be nonnegative")
    if gains is None:
        gains = DEFAULT_GAINS
    if len(gains) < s_count:
        raise InvalidChain("need one (kp, kd) gain pair per mass")

    if x0 is None:
        x0 = [2.0, 1.0, 2.0, -1.0, 0.0, 0.0, 2.0, -1.0, 2.0, 1.0][: 2 * s_count]

    p = s_count - 1  # one global parameter per spring
    agents = []
    for s in range(s_count):
        neighbors = [i for i in (s - 1, s, s + 1) if 0 <= i < s_count]
        n_nbhd = 2 * len(neighbors)
        own = neighbors.index(s)

        def pos(idx):
            return 2 * neighbors.index(idx)

        def vel(idx):
            return 2 * neighbors.index(idx) + 1

        local_springs = [g for g in (s - 1, s) if 0 <= g < p]
        a0 = np.zeros((2, n_nbhd))
        a0[0, pos(s)] = 1.0
        a0[0, vel(s)] = h
        a0[1, vel(s)] = 1.0
        for g in local_springs:
            other = g + 1 if g == s else g  # mass at the far end of spring g
            c = dampers[g]
            a0[1, vel(s)] -= h * c / masses[s]
            a0[1, vel(other)] += h * c / masses[s]
        a_blocks = [a0]
        b_blocks = [np.array([[0.0], [h / masses[s]]])]
        for g in local_springs:
            other = g + 1 if g == s else g
            ai = np.zeros((2, n_nbhd))
            ai[1, pos(s)] = -h / masses[s]
            ai[1, pos(other)] = h / masses[s]
            a_blocks.append(ai)
            b_blocks.append(np.zeros((2, 1)))

        F = np.zeros((6, n_nbhd))
        G = np.zeros((6, 1))
        F[0, pos(s)] = 1.0 / state_bound
        F[1, pos(s)] = -1.0 / state_bound
        F[2, vel(s)] = 1.0 / state_bound
        F[3, vel(s)] = -1.0 / state_bound
        G[4, 0] = 1.0 / input_bound
        G[5, 0] = -1.0 / input_bound

        kp, kd = gains[s]
        K = np.zeros((1, n_nbhd))
        K[0, pos(s)] = -kp
        K[0, vel(s)] = -kd

        k_total = sum(spring_mid[g] for g in local_springs)
        c_total = sum(dampers[g] for g in local_springs)
        a_loc = local_closed_loop(masses[s], k_total, c_total, kp, kd, h)
        pe_s = pos_extent[s] if np.ndim(pos_extent) else pos_extent
        ve_s = vel_extent[s] if np.ndim(vel_extent) else vel_extent
        an_s = tube_angle[s] if np.ndim(tube_angle) else tube_angle
        H_x, verts = tube_cross_section(a_loc, tube_rows, an_s, pe_s, ve_s)

        agents.append(
            {
                "id": s,
                "neighbors": neighbors,
                "n": 2,
                "m": 1,
                "a_blocks": [blk.tolist() for blk in a_blocks],
                "b_blocks": [blk.tolist() for blk in b_blocks],
                "param_map": local_springs,
                "F": F.tolist(),
                "G": G.tolist(),
                "w_lo": [-w_bound, -w_bound],
                "w_hi": [w_bound, w_bound],
                "Q": np.eye(2).tolist(),
                "R": [[5.0]],
                "P": (100.0 * np.eye(2)).tolist(),
                "K": K.tolist(),
                "H_x": H_x.tolist(),
                "x_vertices": verts.tolist(),
            }
        )

    lo = spring_mid - kappa * spring_rad
    hi = spring_mid + kappa * spring_rad
    eye = np.eye(p)
    data = {
        "name": f"{name}_{s_count}",
        "horizon": horizon,
        "theta0": {
            "H": np.vstack([eye, -eye]).tolist(),
            "h": np.concatenate([hi, -lo]).tolist(),
        },
        "theta_scaling": {"mid": spring_mid.tolist(), "rad": spring_rad.tolist()},
        "admm": {"rho": rho, "max_iters": admm_max_iters, "tol": admm_tol},
        "sim": {
            "t_sim": t_sim,
            "n_seeds": n_seeds,
            "kappa": kappa,
            "x0": list(x0),
            "base_seed": base_seed,
        },
        "agents": agents,
    }
    return parse_config(data, name=data["name"])


def write_benchmark_json(path, **kwargs):
    cfg = build_msd_benchmark(**kwargs)
    with open(path, "w") as fh:
        json.dump(cfg.raw, fh, indent=1)
        fh.write("\n")
    return cfg
