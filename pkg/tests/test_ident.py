import numpy as np
import pytest

from dampc.errors import EmptyIntersection, MissingAxisBound
from dampc.ident import (
    DECENTRALIZED,
    DISTRIBUTED,
    LmsState,
    ParamSet,
    exchange_bounds,
    initial_lms_states,
    initial_param_sets,
    lms_update,
    non_falsified,
    require_axis_bounds,
    run_identification_step,
    update_param_set_decentralized,
)
from dampc.model import assemble_global, parse_config, step_truth
from dampc.msd import build_msd_benchmark
from dampc.offline import build_redundant_theta

from .toys import scalar_agent_config


def scalar_setup(theta_lo=0.0, theta_hi=1.0, w=0.05, a0=0.0):
    cfg = scalar_agent_config(a0=a0, theta_lo=theta_lo, theta_hi=theta_hi, w=w)
    structure = build_redundant_theta(cfg)
    return cfg, structure, initial_param_sets(structure)


def test_non_falsified_scalar_interval():
    # x+ = theta x + w with x = 1, x+ = 0.5, |w| <= 0.05 -> theta in [0.45, 0.55]
    cfg, structure, sets = scalar_setup()
    agent = cfg.agents[0]
    delta = non_falsified(agent, np.array([0.5]), np.array([1.0]), np.array([0.0]))
    updated = update_param_set_decentralized(sets[0], delta)
    lb, ub = updated.bounds()
    assert lb[0] == pytest.approx(0.45, abs=1e-9)
    assert ub[0] == pytest.approx(0.55, abs=1e-9)


def test_zero_regressor_cases():
    cfg, structure, sets = scalar_setup()
    agent = cfg.agents[0]
    inside = non_falsified(agent, np.array([0.03]), np.zeros(1), np.zeros(1))
    assert inside.trivially_redundant
    assert update_param_set_decentralized(sets[0], inside).h == pytest.approx(sets[0].h)
    with pytest.raises(EmptyIntersection):
        non_falsified(agent, np.array([0.2]), np.zeros(1), np.zeros(1))


def test_redundant_data_leaves_set_unchanged():
    cfg, structure, sets = scalar_setup()
    agent = cfg.agents[0]
    # wide residual window: Delta contains all of [0, 1]
    delta = non_falsified(agent, np.array([0.5]), np.array([1.0]), np.array([0.0]))
    delta.h = delta.h + 10.0
    updated = update_param_set_decentralized(sets[0], delta)
    assert np.allclose(updated.h, sets[0].h)


def test_interval_intersection_clips_to_set():
    # Theta = [0, 1], Delta = [0.9, 1.2] -> [0.9, 1.0]
    cfg, structure, sets = scalar_setup(w=0.15)
    delta = non_falsified(
        cfg.agents[0], np.array([1.05]), np.array([1.0]), np.array([0.0])
    )
    updated = update_param_set_decentralized(sets[0], delta)
    lb, ub = updated.bounds()
    assert lb[0] == pytest.approx(0.9, abs=1e-9)
    assert ub[0] == pytest.approx(1.0, abs=1e-9)


def test_true_parameter_never_falsified():
    cfg, structure, sets = scalar_setup(a0=0.2, theta_lo=0.0, theta_hi=0.5)
    agent = cfg.agents[0]
    model = assemble_global(cfg)
    rng = np.random.default_rng(2)
    theta_star = np.array([0.37])
    x = np.array([1.5])
    ps = sets[0]
    for _ in range(1000):
        u = rng.uniform(-1.0, 1.0, size=1)
        w = rng.uniform(-0.05, 0.05, size=1)
        x_next = step_truth(model, theta_star, x, u, w)
        delta = non_falsified(agent, x_next, x, u)
        assert np.all(delta.H @ theta_star <= delta.h + 1e-12)
        ps = update_param_set_decentralized(ps, delta)
        assert ps.contains(theta_star)
        x = x_next


def three_chain_shared_param():
    """Three scalar agents in a chain, all owning the same global parameter."""
    agents = []
    for s in range(3):
        neighbors = [i for i in (s - 1, s, s + 1) if 0 <= i < 3]
        n_nbhd = len(neighbors)
        own = neighbors.index(s)
        row = [0.0] * n_nbhd
        basis = [0.0] * n_nbhd
        basis[own] = 1.0
        agents.append(
            {
                "id": s,
                "neighbors": neighbors,
                "n": 1,
                "m": 1,
                "a_blocks": [[row], [basis]],
                "b_blocks": [[[1.0]], [[0.0]]],
                "param_map": [0],
                "F": [[1.0 if i == own else 0.0 for i in range(n_nbhd)],
                      [-1.0 if i == own else 0.0 for i in range(n_nbhd)]],
                "G": [[0.0], [0.0]],
                "w_lo": [-0.05],
                "w_hi": [0.05],
                "Q": [[1.0]],
                "R": [[1.0]],
                "P": [[1.0]],
                "K": [[0.0] * n_nbhd],
                "H_x": [[1.0], [-1.0]],
                "x_vertices": [[1.0], [-1.0]],
            }
        )
    data = {
        "name": "three_chain",
        "horizon": 3,
        "theta0": {"H": [[1.0], [-1.0]], "h": [1.0, 0.0]},
        "admm": {"rho": 25.0, "max_iters": 100, "tol": 1e-4},
        "sim": {"t_sim": 5, "n_seeds": 1, "kappa": 1.0, "x0": [0.0, 0.0, 0.0],
                "base_seed": 0},
        "agents": agents,
    }
    return parse_config(data)


def test_exchange_bounds_worked_example():
    # bounds [0,1], [0.2,0.9], [0.1,0.8] -> [0.2,0.9], [0.2,0.8], [0.2,0.8]
    cfg = three_chain_shared_param()
    structure = build_redundant_theta(cfg)
    sets = initial_param_sets(structure)
    sets[0].h = np.array([1.0, -0.0])
    sets[1].h = np.array([0.9, -0.2])
    sets[2].h = np.array([0.8, -0.1])
    out = exchange_bounds(sets, cfg)
    expected = [(0.2, 0.9), (0.2, 0.8), (0.2, 0.8)]
    for ps, (lb_e, ub_e) in zip(out, expected):
        lb, ub = ps.bounds()
        assert lb[0] == pytest.approx(lb_e)
        assert ub[0] == pytest.approx(ub_e)


def test_exchange_lone_parameter_unchanged():
    cfg, structure, sets = scalar_setup()
    out = exchange_bounds(sets, cfg)
    assert np.allclose(out[0].h, sets[0].h)


def test_exchange_idempotent_on_pair():
    cfg = three_chain_shared_param()
    structure = build_redundant_theta(cfg)
    sets = initial_param_sets(structure)
    sets[0].h = np.array([0.7, -0.1])
    sets[1].h = np.array([0.9, -0.3])
    once = exchange_bounds(sets[:2] + [sets[1]], cfg)
    twice = exchange_bounds(once, cfg)
    # agents 0 and 1 are mutual neighbors: their bounds agree after one round
    assert np.allclose(once[0].h[:2], once[1].h[:2])
    assert np.allclose(once[0].h, twice[0].h)
    assert np.allclose(once[1].h, twice[1].h)


def test_distributed_tighter_than_decentralized():
    cfg = three_chain_shared_param()
    structure = build_redundant_theta(cfg)
    model = assemble_global(cfg)
    rng = np.random.default_rng(5)
    theta_star = np.array([0.42])
    dec = initial_param_sets(structure)
    dist = initial_param_sets(structure)
    x = np.array([1.0, -0.5, 0.8])
    for _ in range(30):
        u = rng.uniform(-0.5, 0.5, size=3)
        w = rng.uniform(-0.05, 0.05, size=3)
        x_next = step_truth(model, theta_star, x, u, w)
        dec = run_identification_step(DECENTRALIZED, cfg, dec, x, u, x_next)
        dist = run_identification_step(DISTRIBUTED, cfg, dist, x, u, x_next)
        for s in range(3):
            lb_d, ub_d = dist[s].bounds()
            lb_c, ub_c = dec[s].bounds()
            assert ub_d[0] - lb_d[0] <= ub_c[0] - lb_c[0] + 1e-12
            assert dist[s].contains(theta_star)
            assert dec[s].contains(theta_star)
        x = x_next


def test_unbounded_disturbance_never_tightens():
    cfg = three_chain_shared_param()
    for agent in cfg.agents:
        agent.w_lo = np.array([-1e6])
        agent.w_hi = np.array([1e6])
    structure = build_redundant_theta(cfg)
    sets = initial_param_sets(structure)
    x = np.array([1.0, 1.0, 1.0])
    u = np.zeros(3)
    x_next = np.array([0.3, 0.3, 0.3])
    for mode in (DECENTRALIZED, DISTRIBUTED):
        out = run_identification_step(mode, cfg, sets, x, u, x_next)
        for s in range(3):
            assert np.allclose(out[s].h, sets[s].h)


def test_zero_regressor_agent_learns_through_exchange():
    cfg = three_chain_shared_param()
    structure = build_redundant_theta(cfg)
    sets = initial_param_sets(structure)
    x = np.array([1.0, 0.0, 0.0])  # only agent 0 is excited
    u = np.zeros(3)
    x_next = np.array([0.4, 0.0, 0.0])
    dec = run_identification_step(DECENTRALIZED, cfg, sets, x, u, x_next)
    assert dec[1].bounds()[1][0] == pytest.approx(1.0)  # uninformed
    dist = run_identification_step(DISTRIBUTED, cfg, sets, x, u, x_next)
    lb0, ub0 = dist[0].bounds()
    lb1, ub1 = dist[1].bounds()
    assert ub1[0] == pytest.approx(ub0[0])
    assert lb1[0] == pytest.approx(lb0[0])
    # exchange is simultaneous (bounds communicated before pooling), so the
    # information travels one hop per round: agent 2 still holds Theta_0
    lb2, ub2 = dist[2].bounds()
    assert ub2[0] == pytest.approx(1.0)
    second = exchange_bounds(dist, cfg)
    assert second[2].bounds()[1][0] == pytest.approx(ub0[0])


def test_monotone_h_over_run():
    cfg = build_msd_benchmark(kappa=0.6)
    structure = build_redundant_theta(cfg)
    model = assemble_global(cfg)
    sets = initial_param_sets(structure)
    rng = np.random.default_rng(9)
    lo, hi = cfg.theta0.interval_hull()
    theta_star = rng.uniform(lo, hi)
    x = cfg.x0.copy()
    for _ in range(25):
        u = rng.uniform(-2.0, 2.0, size=5)
        w = rng.uniform(-0.05, 0.05, size=10)
        x_next = step_truth(model, theta_star, x, u, w)
        new_sets = run_identification_step(DISTRIBUTED, cfg, sets, x, u, x_next)
        for ps_old, ps_new in zip(sets, new_sets):
            assert np.all(ps_new.h <= ps_old.h + 1e-12)
            assert ps_new.contains(theta_star[ps_new.block.global_params]
                                   if hasattr(ps_new.block, "global_params")
                                   else theta_star[cfg.agents[ps_new.block.agent].param_map])
        sets = new_sets
        x = x_next


def test_require_axis_bounds():
    cfg = three_chain_shared_param()
    structure = build_redundant_theta(cfg)
    require_axis_bounds(structure, cfg)
    structure.blocks[1].ub_rows = {}
    with pytest.raises(MissingAxisBound):
        require_axis_bounds(structure, cfg)


def test_lms_zero_error_and_interior_identity():
    cfg, structure, sets = scalar_setup(a0=0.2)
    agent = cfg.agents[0]
    lms = LmsState(theta_hat=np.array([0.5]), mu=0.1)
    x = np.array([1.0])
    u = np.array([0.3])
    x_next = agent.a_blocks[0] @ x + agent.b_blocks[0] @ u + agent.d_matrix(x, u) @ lms.theta_hat
    out = lms_update(lms, agent, sets[0], x_next, x, u)
    assert out.theta_hat == pytest.approx(lms.theta_hat)
    # interior update: small error keeps the estimate inside Theta
    out2 = lms_update(lms, agent, sets[0], x_next + 0.01, x, u)
    assert sets[0].contains(out2.theta_hat)
    assert out2.theta_hat[0] == pytest.approx(0.5 + 0.1 * 0.01, abs=1e-12)


def test_lms_projection_onto_set():
    cfg, structure, sets = scalar_setup()
    agent = cfg.agents[0]
    lms = LmsState(theta_hat=np.array([0.95]), mu=0.5)
    x = np.array([2.0])
    u = np.array([0.0])
    x_next = np.array([2.5])  # large positive error pushes theta above 1
    out = lms_update(lms, agent, sets[0], x_next, x, u)
    assert out.theta_hat[0] == pytest.approx(1.0, abs=1e-6)


def test_lms_noiseless_scalar_convergence():
    cfg, structure, sets = scalar_setup(a0=0.0, theta_lo=0.0, theta_hi=1.0)
    agent = cfg.agents[0]
    model = assemble_global(cfg)
    states = initial_lms_states(cfg, sets)
    lms = states[0]
    theta_star = np.array([0.3])
    x = np.array([2.0])
    errors = [abs(lms.theta_hat[0] - theta_star[0])]
    for k in range(100):
        # keep the regressor exciting: steer the state to +/- 2 exactly
        u = np.array([2.0 * (-1.0) ** k - theta_star[0] * x[0]])
        x_next = step_truth(model, theta_star, x, u, np.zeros(1))
        lms = lms_update(lms, agent, sets[0], x_next, x, u)
        errors.append(abs(lms.theta_hat[0] - theta_star[0]))
        x = x_next
    assert all(e2 <= e1 + 1e-12 for e1, e2 in zip(errors, errors[1:]))
    assert errors[-1] < 1e-3


def test_lms_squared_prediction_error_bounded():
    # disturbance-driven run: cumulative squared prediction error stays
    # bounded relative to the disturbance energy (no divergence)
    cfg, structure, sets = scalar_setup(a0=0.2, theta_lo=0.0, theta_hi=0.5)
    agent = cfg.agents[0]
    model = assemble_global(cfg)
    lms = initial_lms_states(cfg, sets)[0]
    rng = np.random.default_rng(4)
    theta_star = np.array([0.41])
    x = np.array([1.0])
    ps = sets[0]
    err_sum = 0.0
    w_sum = 0.0
    for k in range(400):
        u = np.array([-0.3 * x[0] + 0.2 * np.sin(0.7 * k)])
        w = rng.uniform(-0.05, 0.05, size=1)
        x_next = step_truth(model, theta_star, x, u, w)
        d_mat = agent.d_matrix(x, u)
        pred = agent.a_blocks[0] @ x + agent.b_blocks[0] @ u + d_mat @ lms.theta_hat
        err_sum += float((x_next - pred) @ (x_next - pred))
        w_sum += float(w @ w)
        lms = lms_update(lms, agent, ps, x_next, x, u)
        x = x_next
    init_err = 0.25  # (theta_hat_0 - theta*)^2 is about (0.25 - 0.41)^2
    assert err_sum <= 50.0 * init_err + 5.0 * w_sum + 1.0
