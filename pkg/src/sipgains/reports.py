"""Text reports and CSV artifacts for synthesis and validation runs.

Nothing time-dependent is written, so identical inputs give identical files.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .feasible import export_cloud
from .model import ProblemSpec
from .reduction import SynthesisReport
from .validate import ValidationReport


def _g(x) -> str:
    return format(float(x), ".17g")


def synthesis_text(report: SynthesisReport) -> str:
    lines = [
        f"terminated_by: {report.terminated_by}",
        f"iterations: {report.iterations}",
        f"tau_star: {_g(report.tau_star)}",
        f"scenario_count: {len(report.scenario_set)}",
        "scenario_origins: " + ", ".join(report.scenario_set.origins),
        "",
        "iteration  tau  worst_inner_cost  worst_violation  scenarios  outer  inner",
    ]
    for h in report.history:
        inner = " ".join(f"{k}={v}" for k, v in h.inner_statuses.items())
        lines.append(f"{h.iteration}  {h.tau:.10g}  {h.worst_inner_cost:.10g}  {h.worst_violation:.10g}  "
                     f"{h.scenario_count}  {h.outer_status}  {inner}")
    return "\n".join(lines) + "\n"


def write_history_csv(report: SynthesisReport, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "tau", "worst_inner_cost", "worst_violation", "scenario_count"])
        for h in report.history:
            w.writerow([h.iteration, _g(h.tau), _g(h.worst_inner_cost), _g(h.worst_violation), h.scenario_count])
    return path


def validation_text(report: ValidationReport, tau_star: float | None = None) -> str:
    lines = [
        f"runs: {report.n_runs}",
        f"avg_cost: {_g(report.avg_cost)}",
        f"max_cost: {_g(report.max_cost)}",
        f"min_cost: {_g(report.min_cost)}",
        f"std_error: {_g(report.std_error)}",
        f"violations: {report.violation_count}",
        f"diverged: {report.diverged_count}",
        f"acceptance_rate: {_g(report.acceptance_rate)}",
    ]
    if tau_star is not None:
        warning = report.upper_bound_warning(tau_star)
        lines.append(f"tau_star: {_g(tau_star)}")
        lines.append(f"WARNING: {warning}" if warning else "upper_bound_check: ok")
    return "\n".join(lines) + "\n"


def write_runs_csv(report: ValidationReport, path) -> Path:
    path = Path(path)
    n_x = report.records[0].terminal_state.size if report.records else 0
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "cost", "max_g"] + [f"terminal_x{i + 1}" for i in range(n_x)] + ["seed", "diverged"])
        for r in report.records:
            w.writerow([r.run, _g(r.cost), _g(r.max_g)] + [_g(v) for v in r.terminal_state]
                       + [r.seed, int(r.diverged)])
    return path


def write_trajectory_cloud(spec: ProblemSpec, report: ValidationReport, path) -> Path:
    """States k..k+N of every non-diverged run, in the feasible-set cloud format."""
    ok = np.array([not r.diverged for r in report.records], dtype=bool)
    X = report.trajectories[ok][:, spec.M:, :]
    return export_cloud(X.reshape(-1, X.shape[-1]), None, path)
