"""Command-line entry points.

Subcommands: ``validate`` (offline design report), ``simulate`` (one
closed-loop run with trace output), ``table2`` (cost-vs-uncertainty
experiment), ``fig3`` (identification bound comparison), ``oracle-check``
(consensus solution vs the centralized solver on small networks).

Exit codes: 0 success, 1 validation failure, 2 infeasibility or
identification fault during a run, 3 usage error.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from .errors import DampcError, IdentificationFault, InfeasibleAtStep
from .model import load_config
from .report import (
    atomic_write_text,
    render_fig3_figure,
    render_table2_figure,
    render_trajectory_figure,
    write_fig3_csv,
    write_manifest,
    write_runs_csv,
    write_table2_csv,
    write_trace_csv,
)

log = logging.getLogger("dampc")


def _parse_kappas(text):
    return [float(tok) for tok in text.split(",") if tok.strip()]


def build_parser():
    parser = argparse.ArgumentParser(prog="dampc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, modes=False):
        p.add_argument("--config", required=True, help="network config JSON")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--kappa", default=None, help="uncertainty scaling(s), comma separated")
        p.add_argument("--rho", type=float, default=None, help="consensus penalty")
        p.add_argument("--admm-iters", type=int, default=None, help="consensus iteration cap")
        p.add_argument("--tsim", type=int, default=None, help="closed-loop steps")
        p.add_argument("--seeds", type=int, default=None, help="number of seeds")
        p.add_argument("--seed", type=int, default=0, help="single-run seed")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers")
        p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
        if modes:
            p.add_argument(
                "--mode", choices=["drmpc", "dampc-dec", "dampc-dist"],
                default="dampc-dist",
            )

    common(sub.add_parser("validate", help="offline design validation report"))
    common(sub.add_parser("simulate", help="one closed-loop run"), modes=True)
    common(sub.add_parser("table2", help="cost comparison over kappa grid"))
    common(sub.add_parser("fig3", help="identification bound comparison"))
    common(sub.add_parser("oracle-check", help="consensus vs centralized"))
    return parser


def _load(args):
    cfg = load_config(args.config)
    kappas = _parse_kappas(args.kappa) if args.kappa is not None else None
    if kappas is not None and len(kappas) == 1:
        cfg = cfg.with_kappa(kappas[0])
    return cfg, kappas


def cmd_validate(args):
    from .offline import design_report

    cfg, _ = _load(args)
    report = design_report(cfg)
    out = os.path.join(args.out, "design_report.json")
    atomic_write_text(out, json.dumps(report, indent=1, sort_keys=True) + "\n")
    write_manifest(
        os.path.join(args.out, "manifest.json"), cfg, "validate",
        {"kappa": cfg.kappa}, [out],
    )
    ok = report["gain"]["stable"]
    print(f"gain stable: {report['gain']['stable']} "
          f"(max spectral radius {report['gain']['max_radius']:.4f})")
    print(f"terminal set invariant (decomposed check): {report['terminal_set']['invariant']}")
    print(f"report: {out}")
    return 0 if ok else 1


def cmd_simulate(args):
    from .sim import simulate

    cfg, _ = _load(args)
    try:
        run = simulate(
            cfg, args.mode, seed=args.seed, t_sim=args.tsim, rho=args.rho,
            admm_iters=args.admm_iters, collect_ident=True,
        )
    except (IdentificationFault, DampcError) as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return 2
    outputs = []
    trace = os.path.join(args.out, f"trace_{args.mode}_seed{args.seed}.csv")
    write_trace_csv(trace, run)
    outputs.append(trace)
    if run.ident_trace:
        ident = os.path.join(args.out, f"ident_{args.mode}_seed{args.seed}.csv")
        write_fig3_csv(ident, run)
        outputs.append(ident)
    if not args.no_figures:
        fig = os.path.join(args.out, f"trajectory_{args.mode}_seed{args.seed}.png")
        render_trajectory_figure(fig, run, cfg)
        outputs.append(fig)
    write_manifest(
        os.path.join(args.out, "manifest.json"), cfg, "simulate",
        {"mode": args.mode, "seed": args.seed, "kappa": cfg.kappa,
         "t_sim": run.t_sim, "rho": args.rho, "admm_iters": args.admm_iters},
        outputs,
    )
    print(f"cost {run.cost:.6g}, feasible {run.feasible}, "
          f"max constraint value {max(s.max_constraint_value for s in run.steps):.3e}")
    if not run.feasible:
        print(f"infeasible at step {run.abort_step}: {run.abort_reason}",
              file=sys.stderr)
        return 2
    return 0


def cmd_table2(args):
    from .sim import run_table2

    cfg, kappas = _load(args)
    kappa_grid = kappas if kappas else [0.3, 0.5, 0.7, 1.0]
    try:
        result = run_table2(
            cfg, kappa_grid=kappa_grid, n_seeds=args.seeds, t_sim=args.tsim,
            jobs=args.jobs, rho=args.rho, admm_iters=args.admm_iters,
        )
    except (IdentificationFault, DampcError) as exc:
        print(f"experiment aborted: {exc}", file=sys.stderr)
        return 2
    outputs = []
    table = os.path.join(args.out, "table2.csv")
    write_table2_csv(table, result)
    outputs.append(table)
    runs = os.path.join(args.out, "table2_runs.csv")
    write_runs_csv(runs, result)
    outputs.append(runs)
    if not args.no_figures:
        fig = os.path.join(args.out, "table2.png")
        render_table2_figure(fig, result)
        outputs.append(fig)
    write_manifest(
        os.path.join(args.out, "manifest.json"), cfg, "table2",
        {"kappa_grid": kappa_grid, "seeds": result.runs and len(
            {r["seed"] for r in result.runs}) or 0, "t_sim": args.tsim,
         "rho": args.rho, "admm_iters": args.admm_iters},
        outputs,
    )
    if any(not r["feasible"] for r in result.runs):
        print("some runs hit infeasibility; see table2_runs.csv", file=sys.stderr)
        return 2
    for kappa in kappa_grid:
        print(
            f"kappa={kappa:g}: robust {result.mean_costs[(kappa, 'drmpc')]:.1f}, "
            f"decrease dec {result.pct_decrease[(kappa, 'dampc-dec')]:.2f}%, "
            f"dist {result.pct_decrease[(kappa, 'dampc-dist')]:.2f}%"
        )
    return 0


def cmd_fig3(args):
    from .sim import run_figure3

    cfg, _ = _load(args)
    try:
        run = run_figure3(cfg, seed=args.seed, t_sim=args.tsim, rho=args.rho,
                          admm_iters=args.admm_iters)
    except (IdentificationFault, DampcError) as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return 2
    outputs = []
    bounds = os.path.join(args.out, "fig3_bounds.csv")
    write_fig3_csv(bounds, run)
    outputs.append(bounds)
    if not args.no_figures:
        fig = os.path.join(args.out, "fig3_bounds.png")
        render_fig3_figure(fig, run)
        outputs.append(fig)
    write_manifest(
        os.path.join(args.out, "manifest.json"), cfg, "fig3",
        {"seed": args.seed, "kappa": cfg.kappa, "t_sim": run.t_sim},
        outputs,
    )
    print(f"bound trace rows: {len(run.ident_trace)}; output {bounds}")
    return 0 if run.feasible else 2


def cmd_oracle_check(args):
    from .controller import DampcController, centralized_solve
    from .formulation import make_step_data, true_objective
    from .ident import initial_lms_states, initial_param_sets

    cfg, _ = _load(args)
    ctrl = DampcController(cfg, rho=args.rho, max_iters=args.admm_iters)
    ps = initial_param_sets(ctrl.structure)
    lms = initial_lms_states(cfg, ps)
    step = make_step_data(cfg, ps, lms, cfg.x0)
    decisions, report, xg, mats = ctrl.solve_step(step)
    theta_hats = [lms[s].theta_hat for s in range(cfg.n_agents)]
    _, cost_c, _ = centralized_solve(cfg, cfg.x0, theta_hats=theta_hats)
    gap = (report.consensus_cost - cost_c) / max(abs(cost_c), 1e-12)
    sign_ok = cost_c <= report.final_cost + 1e-4 * max(1.0, abs(cost_c))
    payload = {
        "consensus_cost": report.consensus_cost,
        "structured_cost": report.final_cost,
        "centralized_cost": cost_c,
        "relative_gap": gap,
        "iterations": report.iterations,
        "converged": report.converged,
        "centralized_not_above_structured": bool(sign_ok),
    }
    out = os.path.join(args.out, "oracle_check.json")
    atomic_write_text(out, json.dumps(payload, indent=1, sort_keys=True) + "\n")
    write_manifest(
        os.path.join(args.out, "manifest.json"), cfg, "oracle-check",
        {"kappa": cfg.kappa, "rho": args.rho}, [out],
    )
    print(
        f"consensus {report.consensus_cost:.6f} vs centralized {cost_c:.6f} "
        f"(relative gap {gap:.2e}, {report.iterations} iterations)"
    )
    return 0 if sign_ok else 1


def main(argv=None):
    logging.basicConfig(level=os.environ.get("DAMPC_LOG", "WARNING"))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 3 if exc.code not in (0,) else 0
    handlers = {
        "validate": cmd_validate,
        "simulate": cmd_simulate,
        "table2": cmd_table2,
        "fig3": cmd_fig3,
        "oracle-check": cmd_oracle_check,
    }
    try:
        return handlers[args.command](args)
    except DampcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
