import json

import numpy as np
import pytest

from dampc.errors import (
    DisturbanceOutsideW,
    IndefiniteCostMatrix,
    ParseError,
    SchemaError,
)
from dampc.model import assemble_global, load_config, parse_config, split_global, step_truth
from dampc.msd import build_msd_benchmark

from .toys import decoupled_pair_config


def test_bundled_benchmark_dimensions():
    cfg = build_msd_benchmark()
    assert cfg.n_agents == 5
    gm = assemble_global(cfg)
    assert (gm.n, gm.m, gm.p) == (10, 5, 4)


def test_benchmark_json_round_trip(tmp_path):
    cfg = build_msd_benchmark()
    path = tmp_path / "msd5.json"
    with open(path, "w") as fh:
        json.dump(cfg.raw, fh)
    loaded = load_config(path)
    assert loaded.n_agents == 5
    assert np.array_equal(loaded.x0, cfg.x0)


def test_parse_error_on_bad_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ParseError):
        load_config(path)


def test_indefinite_cost_matrix_rejected():
    cfg = build_msd_benchmark()
    data = json.loads(json.dumps(cfg.raw))
    data["agents"][0]["Q"] = [[1.0, 0.0], [0.0, -1.0]]
    with pytest.raises(IndefiniteCostMatrix):
        parse_config(data)


def test_asymmetric_neighbors_rejected():
    cfg = build_msd_benchmark()
    data = json.loads(json.dumps(cfg.raw))
    # agent 2 claims agent 4 as neighbor, but not vice versa
    data["agents"][2]["neighbors"] = [1, 2, 3, 4]
    with pytest.raises((SchemaError, Exception)):
        parse_config(data)


def test_decoupled_agents_assemble_block_diagonal():
    cfg = decoupled_pair_config(a1=0.5, a2=-0.25)
    gm = assemble_global(cfg)
    assert np.allclose(gm.a_mats[0], np.diag([0.5, -0.25]))


def test_chain_nominal_matrix_matches_hand_discretization():
    # Euler with h = 0.1: check agent 1's velocity row and the zero
    # coupling between non-adjacent masses 1 and 3.
    cfg = build_msd_benchmark()
    gm = assemble_global(cfg)
    a0 = gm.a_mats[0]
    assert a0[1, 1] == pytest.approx(1.0 - 0.1 * 2.0)  # damper 2 on mass 1
    assert a0[3, 3] == pytest.approx(1.0 - 0.1 * (2.0 + 2.0))
    assert np.all(a0[0:2, 4:6] == 0.0)
    assert np.all(a0[4:6, 0:2] == 0.0)
    # spring basis blocks: spring 1 couples masses 1 and 2 only
    a1 = gm.a_mats[1]
    assert a1[1, 0] == pytest.approx(-0.1)
    assert a1[1, 2] == pytest.approx(0.1)
    assert np.all(a1[4:, :] == 0.0)


def test_round_trip_split_is_bit_exact():
    cfg = build_msd_benchmark()
    gm = assemble_global(cfg)
    for (a_blocks, b_blocks), agent in zip(split_global(cfg, gm), cfg.agents):
        assert np.array_equal(a_blocks, agent.a_blocks)
        assert np.array_equal(b_blocks, agent.b_blocks)


def test_spring_interval_shared_by_adjacent_agents():
    cfg = build_msd_benchmark(kappa=1.0)
    lo, hi = cfg.theta0.interval_hull()
    assert lo[0] == pytest.approx(1.7) and hi[0] == pytest.approx(3.1)
    assert 0 in cfg.agents[0].param_map and 0 in cfg.agents[1].param_map


def test_kappa_zero_theta_is_point():
    cfg = build_msd_benchmark(kappa=0.0)
    lo, hi = cfg.theta0.interval_hull()
    assert np.allclose(lo, hi)


def test_step_truth_examples():
    cfg = decoupled_pair_config(a1=0.5, a2=0.5, uncertain=True)
    gm = assemble_global(cfg)
    # x = 0, u = 0, w = 0 -> 0
    out = step_truth(gm, [0.5, 0.5], np.zeros(2), np.zeros(2), np.zeros(2))
    assert np.allclose(out, 0.0)
    # scalar: A(theta) = theta, theta* = 0.5, x = 2, w = 0.01 -> 1.01
    out = step_truth(gm, [0.5, 0.5], np.array([2.0, 0.0]), np.zeros(2), np.array([0.01, 0.0]))
    assert out[0] == pytest.approx(1.01)
    with pytest.raises(DisturbanceOutsideW):
        step_truth(gm, [0.5, 0.5], np.zeros(2), np.zeros(2), np.array([1.0, 0.0]))


def test_agentwise_step_equals_global_step():
    cfg = build_msd_benchmark()
    gm = assemble_global(cfg)
    rng = np.random.default_rng(11)
    theta = rng.uniform(*cfg.theta0.interval_hull())
    for _ in range(1000):
        x = rng.normal(size=10)
        u = rng.normal(size=5)
        w = rng.uniform(-0.05, 0.05, size=10)
        full = step_truth(gm, theta, x, u, w)
        for s, agent in enumerate(cfg.agents):
            loc = agent.a_of(theta[agent.param_map]) @ x[cfg.nbhd_state_indices(s)]
            loc += agent.b_of(theta[agent.param_map]) @ u[cfg.agent_input_slice(s)]
            loc += w[cfg.agent_state_slice(s)]
            assert np.allclose(loc, full[cfg.agent_state_slice(s)], atol=1e-12)


def test_d_matrix_identity():
    # D(x, u) theta == (A(theta) - A_0) x + (B(theta) - B_0) u
    cfg = build_msd_benchmark()
    gm = assemble_global(cfg)
    rng = np.random.default_rng(3)
    for _ in range(100):
        x = rng.normal(size=10)
        u = rng.normal(size=5)
        theta = rng.normal(size=4)
        lhs = gm.d_matrix(x, u) @ theta
        rhs = (gm.a_of(theta) - gm.a_mats[0]) @ x + (gm.b_of(theta) - gm.b_mats[0]) @ u
        assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_step_truth_affine_superposition():
    cfg = build_msd_benchmark()
    gm = assemble_global(cfg)
    rng = np.random.default_rng(9)
    theta = rng.uniform(*cfg.theta0.interval_hull())
    a = gm.a_of(theta)
    b = gm.b_of(theta)
    for _ in range(20):
        x1, x2 = rng.normal(size=(2, 10))
        u1, u2 = rng.normal(size=(2, 5))
        lhs = a @ (x1 + x2) + b @ (u1 + u2)
        rhs = (a @ x1 + b @ u1) + (a @ x2 + b @ u2)
        assert np.allclose(lhs, rhs, atol=1e-10)


def test_sparsity_of_nonneighbor_blocks():
    cfg = build_msd_benchmark()
    gm = assemble_global(cfg)
    for s in range(5):
        for sig in range(5):
            if sig in cfg.agents[s].neighbors:
                continue
            rows = cfg.agent_state_slice(s)
            cols = cfg.agent_state_slice(sig)
            for mat in gm.a_mats:
                assert np.all(mat[rows, cols] == 0.0)
            assert np.all(gm.F[:, cols][6 * s : 6 * (s + 1)] == 0.0)
