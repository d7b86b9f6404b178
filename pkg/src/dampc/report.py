"""Delimited outputs, run manifests and figure rendering.

Numbers are written with 12 significant digits so reruns with the same
configuration and seeds produce byte-identical files. Figures are PNG
companions to the CSVs rendered with the Agg backend; the CSV remains
the authoritative artifact.
"""

import json
import os
import tempfile

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from . import __version__  # noqa: E402


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if np.isnan(value):
            return "nan"
        return f"{float(value):.12g}"
    return str(value)


def atomic_write_text(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_table2_csv(path, result):
    rows = []
    for kappa in result.kappa_grid:
        for mode in result.modes:
            rows.append(
                (
                    kappa,
                    mode,
                    result.mean_costs[(kappa, mode)],
                    result.pct_decrease[(kappa, mode)],
                )
            )
    write_csv(path, ["kappa", "mode", "mean_cost", "pct_decrease"], rows)


def write_runs_csv(path, result):
    header = [
        "kappa", "mode", "seed", "cost", "feasible", "abort_step",
        "theta_containment_ok", "monotone_ok", "max_constraint_value",
        "min_tube_margin", "max_candidate_residual", "tail_state_ratio",
        "mean_admm_iterations",
    ]
    rows = [[r.get(k) for k in header] for r in result.runs]
    write_csv(path, header, rows)


def write_fig3_csv(path, run):
    header = ["k", "agent", "parameter", "scheme", "lb", "ub", "theta_hat"]
    rows = [
        (rec.k, rec.agent, rec.param, rec.scheme, rec.lb, rec.ub, rec.theta_hat)
        for rec in run.ident_trace
    ]
    write_csv(path, header, rows)


def write_trace_csv(path, run):
    header = [
        "k", "stage_cost", "mpc_cost", "consensus_cost", "iterations",
        "converged", "primal_residual", "dual_residual", "tube_margin",
        "candidate_residual", "max_constraint_value",
    ] + [f"alpha0_agent{i}" for i in range(len(run.steps[0].alpha0))]
    rows = []
    for s in run.steps:
        rows.append(
            [
                s.k, s.cost_stage, s.mpc_cost, s.consensus_cost, s.iterations,
                s.converged, s.primal_residual, s.dual_residual, s.tube_margin,
                s.candidate_residual, s.max_constraint_value,
            ]
            + list(s.alpha0)
        )
    write_csv(path, header, rows)


def write_manifest(path, cfg, command, params, outputs):
    manifest = {
        "package_version": __version__,
        "config_name": cfg.name,
        "config_hash": cfg.config_hash(),
        "command": command,
        "parameters": params,
        "outputs": sorted(outputs),
    }
    atomic_write_text(path, json.dumps(manifest, indent=1, sort_keys=True) + "\n")


# --- figures -------------------------------------------------------------------


def render_table2_figure(path, result):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    kappas = result.kappa_grid
    base = [result.mean_costs[(k, "drmpc")] for k in kappas]
    ax1.plot(kappas, base, "o-", color="tab:gray", label="robust (no adaptation)")
    for mode, color in (("dampc-dec", "tab:blue"), ("dampc-dist", "tab:purple")):
        if mode in result.modes:
            costs = [result.mean_costs[(k, mode)] for k in kappas]
            ax1.plot(kappas, costs, "o-", color=color, label=mode)
    ax1.set_xlabel("uncertainty scaling $\\kappa$")
    ax1.set_ylabel("mean closed-loop cost")
    ax1.legend(fontsize=8)
    for mode, color in (("dampc-dec", "tab:blue"), ("dampc-dist", "tab:purple")):
        if mode in result.modes:
            pct = [result.pct_decrease[(k, mode)] for k in kappas]
            ax2.plot(kappas, pct, "o-", color=color, label=mode)
    ax2.set_xlabel("uncertainty scaling $\\kappa$")
    ax2.set_ylabel("cost decrease vs robust [%]")
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_fig3_figure(path, run):
    params = sorted({rec.param for rec in run.ident_trace})
    schemes = sorted({rec.scheme for rec in run.ident_trace})
    fig, axes = plt.subplots(
        len(params), len(schemes), figsize=(4.2 * len(schemes), 2.2 * len(params)),
        sharex=True, squeeze=False,
    )
    for col, scheme in enumerate(schemes):
        for row, param in enumerate(params):
            ax = axes[row][col]
            agents = sorted(
                {r.agent for r in run.ident_trace if r.param == param and r.scheme == scheme}
            )
            for agent in agents:
                recs = [
                    r for r in run.ident_trace
                    if r.param == param and r.scheme == scheme and r.agent == agent
                ]
                ks = [r.k for r in recs]
                ax.fill_between(
                    ks, [r.lb for r in recs], [r.ub for r in recs], alpha=0.3,
                    label=f"agent {agent}",
                )
            ax.set_ylabel(f"spring {param}")
            if row == 0:
                ax.set_title(scheme, fontsize=9)
            if row == len(params) - 1:
                ax.set_xlabel("step k")
            ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_trajectory_figure(path, run, cfg):
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    t = np.arange(run.xs.shape[0])
    for s in range(cfg.n_agents):
        sl = cfg.agent_state_slice(s)
        ax1.plot(t, run.xs[:, sl.start], label=f"pos {s + 1}")
    ax1.axhline(5.0, color="k", lw=0.6, ls="--")
    ax1.axhline(-5.0, color="k", lw=0.6, ls="--")
    ax1.set_ylabel("positions")
    ax1.legend(fontsize=7, ncol=3)
    tu = np.arange(run.us.shape[0])
    for j in range(run.us.shape[1]):
        ax2.step(tu, run.us[:, j], where="post", label=f"u{j + 1}")
    ax2.axhline(5.0, color="k", lw=0.6, ls="--")
    ax2.axhline(-5.0, color="k", lw=0.6, ls="--")
    ax2.set_ylabel("inputs")
    ax2.set_xlabel("step k")
    ax2.legend(fontsize=7, ncol=3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
