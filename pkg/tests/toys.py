"""Small hand-built networks used across the test suite."""

import numpy as np

from dampc.model import parse_config


def _scalar_agent(idx, neighbors, a0_row, a_rows, param_map, bound=5.0, w=0.02,
                  k_gain=0.5, tube_ext=4.0, r_cost=1.0, q_cost=1.0, p_cost=10.0):
    """One scalar-state agent node for a raw config dictionary.

    ``a0_row`` and each entry of ``a_rows`` are rows over the neighborhood
    state (one coefficient per neighbor).
    """
    n_nbhd = len(neighbors)
    own = neighbors.index(idx)
    K = np.zeros((1, n_nbhd))
    K[0, own] = -k_gain
    return {
        "id": idx,
        "neighbors": neighbors,
        "n": 1,
        "m": 1,
        "a_blocks": [[list(a0_row)]] + [[list(r)] for r in a_rows],
        "b_blocks": [[[1.0]]] + [[[0.0]] for _ in a_rows],
        "param_map": param_map,
        "F": [
            [1.0 / bound if i == own else 0.0 for i in range(n_nbhd)],
            [-1.0 / bound if i == own else 0.0 for i in range(n_nbhd)],
            [0.0] * n_nbhd,
            [0.0] * n_nbhd,
        ],
        "G": [[0.0], [0.0], [1.0 / bound], [-1.0 / bound]],
        "w_lo": [-w],
        "w_hi": [w],
        "Q": [[q_cost]],
        "R": [[r_cost]],
        "P": [[p_cost]],
        "K": K.tolist(),
        "H_x": [[1.0 / tube_ext], [-1.0 / tube_ext]],
        "x_vertices": [[tube_ext], [-tube_ext]],
    }


def scalar_agent_config(a0=0.4, theta_lo=0.0, theta_hi=0.4, w=0.02, x0=2.0,
                        horizon=5, k_gain=0.5, tube_ext=4.0):
    """Single scalar agent with x+ = (a0 + theta) x + u + w."""
    data = {
        "name": "scalar_single",
        "horizon": horizon,
        "theta0": {"H": [[1.0], [-1.0]], "h": [theta_hi, -theta_lo]},
        "theta_scaling": {
            "mid": [(theta_hi + theta_lo) / 2.0],
            "rad": [(theta_hi - theta_lo) / 2.0],
        },
        "admm": {"rho": 25.0, "max_iters": 400, "tol": 1e-4},
        "sim": {"t_sim": 30, "n_seeds": 3, "kappa": 1.0, "x0": [x0], "base_seed": 0},
        "agents": [
            _scalar_agent(0, [0], [a0], [[1.0]], [0], w=w, k_gain=k_gain,
                          tube_ext=tube_ext)
        ],
    }
    return parse_config(data)


def decoupled_pair_config(a1=0.5, a2=0.5, uncertain=False, w=0.02, bound=5.0):
    """Two scalar agents with no coupling.

    With ``uncertain=True`` each agent's dynamics are x+ = theta_s x + u + w
    (its own global parameter, theta in [0, 1]); otherwise the nominal
    matrices are fixed at a1/a2 and the parameters have zero basis blocks.
    """
    basis = 1.0 if uncertain else 0.0
    nominal = (0.0, 0.0) if uncertain else (a1, a2)
    data = {
        "name": "decoupled_pair",
        "horizon": 4,
        "theta0": {
            "H": [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]],
            "h": [1.0, 0.0, 1.0, 0.0],
        },
        "admm": {"rho": 25.0, "max_iters": 300, "tol": 1e-4},
        "sim": {"t_sim": 20, "n_seeds": 2, "kappa": 1.0, "x0": [1.0, -1.0],
                "base_seed": 0},
        "agents": [
            _scalar_agent(0, [0], [nominal[0]], [[basis]], [0], w=w, bound=bound),
            _scalar_agent(1, [1], [nominal[1]], [[basis]], [1], w=w, bound=bound),
        ],
    }
    return parse_config(data)


def coupled_pair_config(**overrides):
    """Two-mass chain (n = 4) built by the benchmark builder."""
    from dampc.msd import build_msd_benchmark

    kwargs = dict(
        masses=(1.0, 1.0),
        dampers=(2.0,),
        spring_mid=(2.4,),
        spring_rad=(0.7,),
        kappa=1.0,
        x0=[1.5, 0.5, 1.0, -0.5],
        t_sim=25,
        n_seeds=3,
        name="coupled_pair",
    )
    kwargs.update(overrides)
    return build_msd_benchmark(**kwargs)
