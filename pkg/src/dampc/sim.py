"""Closed-loop simulation, experiment drivers and audit checks.

Runs are seeded and paired: for a given (configuration, seed) the true
parameter draw and the disturbance sequence are identical across control
modes, so cost differences isolate the effect of adaptation. Every run
records per-step audit quantities (constraint margins, tube containment
margin, shifted-candidate residual, identification containment) that the
acceptance suite asserts on.
"""

import concurrent.futures
import os
from dataclasses import dataclass, field

import numpy as np

from .controller import DampcController, extract_control
from .errors import DampcError, IdentificationFault, Infeasible, InfeasibleAtStep, LocalInfeasible
from .formulation import make_step_data
from .ident import (
    DECENTRALIZED,
    DISTRIBUTED,
    initial_lms_states,
    initial_param_sets,
    lms_update,
    require_axis_bounds,
    run_identification_step,
)
from .model import assemble_global, step_truth
from .offline import build_redundant_theta

MODE_DRMPC = "drmpc"
MODE_DEC = "dampc-dec"
MODE_DIST = "dampc-dist"
MODES = (MODE_DRMPC, MODE_DEC, MODE_DIST)

_IDENT_OF_MODE = {MODE_DEC: DECENTRALIZED, MODE_DIST: DISTRIBUTED}


def run_rngs(cfg, seed):
    """Independent generators for the true parameter and the disturbance.

    Keyed by (base_seed, seed) only, so all modes at the same seed see
    the same realizations.
    """
    ss = np.random.SeedSequence(entropy=(int(cfg.base_seed), int(seed)))
    theta_ss, w_ss = ss.spawn(2)
    return np.random.default_rng(theta_ss), np.random.default_rng(w_ss)


def draw_theta_star(cfg, rng):
    lo, hi = cfg.theta0.interval_hull()
    return rng.uniform(lo, hi)


def sample_disturbance(model, rng):
    """Uniform draw from the disturbance box (per-agent boxes stacked)."""
    return rng.uniform(model.w_lo, model.w_hi)


@dataclass
class StepRecord:
    k: int
    cost_stage: float
    iterations: int
    converged: bool
    primal_residual: float
    dual_residual: float
    mpc_cost: float
    consensus_cost: float
    alpha0: list
    tube_margin: float
    candidate_residual: float
    max_constraint_value: float  # max F x + G u - 1 over rows (<= 0 is safe)


@dataclass
class IdentRecord:
    k: int
    agent: int
    param: int  # global parameter index
    lb: float
    ub: float
    theta_hat: float
    scheme: str


@dataclass
class SimRun:
    mode: str
    kappa: float
    seed: int
    theta_star: np.ndarray
    t_sim: int
    xs: np.ndarray
    us: np.ndarray
    ws: np.ndarray
    cost: float
    feasible: bool
    abort_step: int | None
    abort_reason: str
    steps: list
    ident_trace: list
    theta_containment_ok: bool
    monotone_ok: bool
    tail_state_ratio: float


def _global_gain_control(cfg, ctrl, decisions, x):
    u = np.zeros(sum(a.m for a in cfg.agents))
    for s in range(cfg.n_agents):
        u[cfg.agent_input_slice(s)] = extract_control(
            decisions[s], cfg.designs[s], x[cfg.nbhd_state_indices(s)]
        )
    return u


def simulate(cfg, mode, seed=0, theta_star=None, t_sim=None, controller=None,
             collect_ident=False, observer_modes=(), rho=None, admm_iters=None):
    """One closed-loop run.

    ``observer_modes`` may list extra identification schemes to run
    passively on the same measurements (used by the bound-comparison
    experiment); their traces are appended to ``ident_trace``.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode '{mode}'")
    t_sim = cfg.t_sim if t_sim is None else int(t_sim)
    theta_rng, w_rng = run_rngs(cfg, seed)
    drawn = draw_theta_star(cfg, theta_rng)
    theta_star = drawn if theta_star is None else np.asarray(theta_star, dtype=float)

    model = assemble_global(cfg)
    ctrl = controller if controller is not None else DampcController(
        cfg, rho=rho, max_iters=admm_iters
    )
    structure = ctrl.structure
    if mode == MODE_DIST or DISTRIBUTED in observer_modes:
        require_axis_bounds(structure, cfg)
    param_sets = initial_param_sets(structure)
    lms_states = initial_lms_states(cfg, param_sets)
    observers = {m: initial_param_sets(structure) for m in observer_modes}

    n = model.n
    m_dim = model.m
    Q = np.zeros((n, n))
    R = np.zeros((m_dim, m_dim))
    for s in range(cfg.n_agents):
        Q[cfg.agent_state_slice(s), cfg.agent_state_slice(s)] = cfg.designs[s].Q
        R[cfg.agent_input_slice(s), cfg.agent_input_slice(s)] = cfg.designs[s].R

    xs = np.zeros((t_sim + 1, n))
    us = np.zeros((t_sim, m_dim))
    ws = np.zeros((t_sim, n))
    xs[0] = cfg.x0
    steps = []
    ident_trace = []
    cost = 0.0
    theta_ok = True
    monotone_ok = True
    feasible = True
    abort_step = None
    abort_reason = ""
    prev_xg = None

    def record_ident(k, sets, scheme):
        for s, ps in enumerate(sets):
            lb, ub = ps.bounds()
            for i, g in enumerate(cfg.agents[s].param_map):
                ident_trace.append(
                    IdentRecord(
                        k=k, agent=s, param=g, lb=float(lb[i]), ub=float(ub[i]),
                        theta_hat=float(lms_states[s].theta_hat[i]), scheme=scheme,
                    )
                )

    if collect_ident:
        record_ident(0, param_sets, mode)
        for scheme, sets in observers.items():
            record_ident(0, sets, f"observer-{scheme}")

    for k in range(t_sim):
        x = xs[k]
        if k >= 1:
            try:
                if mode in _IDENT_OF_MODE:
                    new_sets = run_identification_step(
                        _IDENT_OF_MODE[mode], cfg, param_sets, xs[k - 1], us[k - 1], x
                    )
                    for s in range(cfg.n_agents):
                        if np.any(new_sets[s].h > param_sets[s].h + 1e-12):
                            monotone_ok = False
                        lms_states[s] = lms_update(
                            lms_states[s], cfg.agents[s], new_sets[s],
                            x[cfg.agent_state_slice(s)],
                            xs[k - 1][cfg.nbhd_state_indices(s)],
                            us[k - 1][cfg.agent_input_slice(s)],
                        )
                    param_sets = new_sets
                for scheme in observers:
                    observers[scheme] = run_identification_step(
                        scheme, cfg, observers[scheme], xs[k - 1], us[k - 1], x
                    )
            except DampcError as exc:
                raise IdentificationFault(f"step {k}: {exc}") from exc
            for s in range(cfg.n_agents):
                th_s = theta_star[cfg.agents[s].param_map]
                if not param_sets[s].contains(th_s, tol=1e-9):
                    theta_ok = False
                for scheme, sets in observers.items():
                    if not sets[s].contains(th_s, tol=1e-9):
                        theta_ok = False
        if collect_ident and k >= 1:
            record_ident(k, param_sets, mode)
            for scheme, sets in observers.items():
                record_ident(k, sets, f"observer-{scheme}")

        step = make_step_data(cfg, param_sets, lms_states, x)
        try:
            mats = ctrl._assemble(step)
            cand = (
                ctrl.candidate_residual(prev_xg, step, mats)
                if prev_xg is not None
                else np.nan
            )
            decisions, report, xg, mats = ctrl.solve_step(step, mats=mats)
        except (Infeasible, LocalInfeasible) as exc:
            feasible = False
            abort_step = k
            abort_reason = str(exc)
            break
        margin = ctrl.verify_tube(xg, step)
        u = _global_gain_control(cfg, ctrl, decisions, x)
        zval = model.F @ x + model.G @ u - 1.0
        stage = float(x @ Q @ x + u @ R @ u)
        cost += stage
        steps.append(
            StepRecord(
                k=k,
                cost_stage=stage,
                iterations=report.iterations,
                converged=report.converged,
                primal_residual=report.primal_residuals[-1] if report.primal_residuals else 0.0,
                dual_residual=report.dual_residuals[-1] if report.dual_residuals else 0.0,
                mpc_cost=report.final_cost,
                consensus_cost=report.consensus_cost,
                alpha0=[float(d.alpha[0]) for d in decisions],
                tube_margin=margin,
                candidate_residual=cand,
                max_constraint_value=float(zval.max()),
            )
        )
        us[k] = u
        ws[k] = sample_disturbance(model, w_rng)
        xs[k + 1] = step_truth(model, theta_star, x, u, ws[k])
        prev_xg = xg
        ctrl.shift_warm_start()

    tail = xs[max(0, t_sim - 10) : t_sim + 1]
    tail_ratio = float(
        np.mean(np.linalg.norm(tail, axis=1)) / max(np.linalg.norm(cfg.x0), 1e-12)
    )
    return SimRun(
        mode=mode,
        kappa=cfg.kappa,
        seed=seed,
        theta_star=theta_star,
        t_sim=t_sim,
        xs=xs,
        us=us,
        ws=ws,
        cost=cost,
        feasible=feasible,
        abort_step=abort_step,
        abort_reason=abort_reason,
        steps=steps,
        ident_trace=ident_trace,
        theta_containment_ok=theta_ok,
        monotone_ok=monotone_ok,
        tail_state_ratio=tail_ratio,
    )


# --- experiment drivers -------------------------------------------------------


@dataclass
class ExperimentResult:
    kappa_grid: list
    modes: list
    mean_costs: dict  # (kappa, mode) -> mean cost
    pct_decrease: dict  # (kappa, mode) -> percent decrease vs DRMPC
    runs: list  # summary dict per run

    def mean(self, kappa, mode):
        return self.mean_costs[(float(kappa), mode)]


def _run_one(args):
    cfg, kappa, mode, seed, t_sim, rho, admm_iters = args
    cfg_k = cfg.with_kappa(kappa)
    run = simulate(cfg_k, mode, seed=seed, t_sim=t_sim, rho=rho, admm_iters=admm_iters)
    return {
        "kappa": float(kappa),
        "mode": mode,
        "seed": int(seed),
        "cost": float(run.cost),
        "feasible": bool(run.feasible),
        "abort_step": run.abort_step,
        "theta_containment_ok": bool(run.theta_containment_ok),
        "monotone_ok": bool(run.monotone_ok),
        "max_constraint_value": max((s.max_constraint_value for s in run.steps), default=np.nan),
        "min_tube_margin": min((s.tube_margin for s in run.steps), default=np.nan),
        "max_candidate_residual": max(
            (s.candidate_residual for s in run.steps if np.isfinite(s.candidate_residual)),
            default=np.nan,
        ),
        "tail_state_ratio": float(run.tail_state_ratio),
        "mean_admm_iterations": float(np.mean([s.iterations for s in run.steps]))
        if run.steps else np.nan,
    }


def run_table2(cfg, kappa_grid=None, n_seeds=None, modes=MODES, t_sim=None,
               jobs=1, rho=None, admm_iters=None):
    """Paired-seed closed-loop cost comparison across modes and kappa."""
    kappa_grid = [float(k) for k in (kappa_grid if kappa_grid is not None
                                     else [0.3, 0.5, 0.7, 1.0])]
    n_seeds = cfg.n_seeds if n_seeds is None else int(n_seeds)
    tasks = [
        (cfg, kappa, mode, seed, t_sim, rho, admm_iters)
        for kappa in kappa_grid
        for seed in range(n_seeds)
        for mode in modes
    ]
    if jobs and jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, tasks, chunksize=1))
    else:
        results = [_run_one(t) for t in tasks]
    mean_costs = {}
    pct = {}
    for kappa in kappa_grid:
        for mode in modes:
            costs = [
                r["cost"] for r in results if r["kappa"] == kappa and r["mode"] == mode
            ]
            mean_costs[(kappa, mode)] = float(np.mean(costs))
    for kappa in kappa_grid:
        base = mean_costs[(kappa, MODE_DRMPC)]
        for mode in modes:
            pct[(kappa, mode)] = 100.0 * (base - mean_costs[(kappa, mode)]) / base
    return ExperimentResult(
        kappa_grid=kappa_grid, modes=list(modes), mean_costs=mean_costs,
        pct_decrease=pct, runs=results,
    )


def run_figure3(cfg, seed=0, t_sim=None, rho=None, admm_iters=None):
    """Bound-comparison run: distributed control with a decentralized
    observer fed the same measurements, so the two schemes are directly
    comparable at every step."""
    return simulate(
        cfg, MODE_DIST, seed=seed, t_sim=t_sim, collect_ident=True,
        observer_modes=(DECENTRALIZED,), rho=rho, admm_iters=admm_iters,
    )
