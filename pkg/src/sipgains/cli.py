"""Command-line entry point.

Exit codes: 0 success, 1 usage or config error, 2 infeasible problem or
failed synthesis/sampling, 3 file i/o error.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfg
from . import feasible, reports, zoo
from .errors import ConfigError, InvalidInputError, SipgainsError
from .reduction import ReductionSettings, local_reduction
from .validate import validate

EXIT_OK, EXIT_USAGE, EXIT_FAILED, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("sipgains")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load(args) -> cfg.Config:
    return cfg.load_config(args.config)


def _reduction_settings(conf: cfg.Config, args) -> ReductionSettings:
    red = conf.reduction
    if getattr(args, "seed", None) is not None:
        red = replace(red, seed=args.seed)
    if getattr(args, "max_scenarios", None) is not None:
        red = replace(red, max_scenarios=args.max_scenarios)
    return red


def synthesize_to(spec, red: ReductionSettings, out: Path, echo=print):
    t0 = time.perf_counter()
    rep = local_reduction(spec, red)
    seconds = time.perf_counter() - t0
    cfg.write_gains(rep.params_star, out / "gains.txt")
    (out / "report.txt").write_text(reports.synthesis_text(rep))
    reports.write_history_csv(rep, out / "history.csv")
    (out / "config.cfg").write_text(cfg.dump_config(spec, red))
    echo(f"terminated_by: {rep.terminated_by}  iterations: {rep.iterations}  "
         f"tau_star: {rep.tau_star:.6g}  scenarios: {len(rep.scenario_set)}  ({seconds:.1f} s)")
    return rep, seconds


def validate_to(spec, params, runs: int, seed: int, out: Path, tau_star=None, echo=print):
    rep = validate(spec, params, runs, seed)
    (out / "validation.txt").write_text(reports.validation_text(rep, tau_star))
    reports.write_runs_csv(rep, out / "runs.csv")
    reports.write_trajectory_cloud(spec, rep, out / "trajectories.csv")
    echo(f"avg_cost: {rep.avg_cost:.6g}  max_cost: {rep.max_cost:.6g}  violations: {rep.violation_count}  "
         f"diverged: {rep.diverged_count}")
    if tau_star is not None and rep.upper_bound_warning(tau_star):
        echo("WARNING: " + rep.upper_bound_warning(tau_star))
    return rep


def cmd_synthesize(args) -> int:
    conf = _load(args)
    synthesize_to(conf.spec, _reduction_settings(conf, args), _out_dir(args.out))
    return EXIT_OK


def cmd_validate(args) -> int:
    conf = _load(args)
    params = cfg.load_gains(args.gains)
    spec = conf.spec
    if params.K.shape != (spec.policy.lags, spec.model.n_u, spec.model.n_y) or params.u_bar.shape != (spec.N, spec.model.n_u):
        raise ConfigError("gains file does not match the policy form of the config")
    validate_to(spec, params, args.runs, args.seed, _out_dir(args.out), args.tau)
    return EXIT_OK


def cmd_feasible(args) -> int:
    conf = _load(args)
    out = _out_dir(args.out)
    spec = conf.spec
    box = feasible.feasible_box(spec, args.step)
    feasible.write_box(box, out / f"box_t{args.step}.csv")
    print(f"box at step {args.step}: lo={np.array2string(box.lo, precision=6)} hi={np.array2string(box.hi, precision=6)}")
    if args.action == "sample":
        rng = np.random.default_rng(args.seed)
        s = feasible.sample_feasible(spec, args.step, args.n, rng)
        feasible.export_cloud(s.states, box, out / f"cloud_t{args.step}.csv")
        print(f"samples: {len(s.states)}  acceptance_rate: {s.acceptance_rate:.4g}")
    return EXIT_OK


def demo_fig1(out: Path, seed: int = 0, n: int = 2000, echo=print) -> dict:
    """Feasible set of the planar toy at step 1 versus its bounding box."""
    spec = zoo.toy2d_spec()
    box0 = feasible.feasible_box(spec, 0)
    box1 = feasible.feasible_box(spec, 1)
    feasible.write_box(box0, out / "box_t0.csv")
    rng = np.random.default_rng(seed)
    s = feasible.sample_feasible(spec, 1, n, rng)
    feasible.export_cloud(s.states, box1, out / "cloud_t1.csv")
    # share of the box that is actually reachable
    pts = box1.sample(np.random.default_rng(seed + 1), 100_000)
    ratio = float(np.mean(np.sum((pts - np.array([1.0, 2.0])) ** 2, axis=1) <= 4.0))
    worst = float(np.max(np.linalg.norm(s.states - np.array([1.0, 2.0]), axis=1)))
    summary = {
        "samples": len(s.states), "acceptance_rate": s.acceptance_rate,
        "box_t1_lo": box1.lo.tolist(), "box_t1_hi": box1.hi.tolist(),
        "box_t0_lo": box0.lo.tolist(), "box_t0_hi": box0.hi.tolist(),
        "max_distance_from_center": worst, "feasible_fraction_of_box": ratio,
    }
    (out / "summary.txt").write_text("".join(f"{k}: {v}\n" for k, v in summary.items()))
    echo(f"box x_1: [{box1.lo[0]:.6g}, {box1.hi[0]:.6g}] x [{box1.lo[1]:.6g}, {box1.hi[1]:.6g}]  "
         f"samples: {len(s.states)}  feasible share of box: {ratio:.4f}")
    return summary


def demo_quadrotor(out: Path, seed: int = 0, runs: int = 1000, max_scenarios: int = 50,
                   policies=tuple(zoo.QUADROTOR_POLICIES), echo=print, max_iterations: int = 100) -> list[dict]:
    """Synthesize and validate every quadrotor policy class.

    The iteration ceiling sits well above ``max_scenarios`` so that the
    scenario count is what ends an unconverged run.
    """
    rows = []
    for kind in policies:
        echo(f"[{kind}]")
        sub = _out_dir(out / kind)
        spec = zoo.quadrotor_spec(kind)
        red = ReductionSettings(seed=seed, max_scenarios=max_scenarios, max_iterations=max_iterations)
        rep, seconds = synthesize_to(spec, red, sub, echo)
        val = validate_to(spec, rep.params_star, runs, seed, sub, rep.tau_star, echo)
        rows.append({"policy": kind, "avg_cost": val.avg_cost, "max_cost": val.max_cost,
                     "violations": val.violation_count, "tau_star": rep.tau_star,
                     "scenarios": len(rep.scenario_set), "iterations": rep.iterations,
                     "terminated_by": rep.terminated_by, "seconds": seconds})
    with (out / "summary.csv").open("w") as fh:
        fh.write("policy,avg_cost,max_cost,violations,tau_star,scenarios,iterations,terminated_by\n")
        for r in rows:
            fh.write(f"{r['policy']},{r['avg_cost']:.17g},{r['max_cost']:.17g},{r['violations']},"
                     f"{r['tau_star']:.17g},{r['scenarios']},{r['iterations']},{r['terminated_by']}\n")
    table = ["policy      avg_cost   max_cost   violations  tau_star   scenarios  seconds"]
    table += [f"{r['policy']:<11} {r['avg_cost']:<10.4f} {r['max_cost']:<10.4f} {r['violations']:<11d} "
              f"{r['tau_star']:<10.4f} {r['scenarios']:<10d} {r['seconds']:.0f}" for r in rows]
    (out / "summary.txt").write_text("\n".join(table) + "\n")
    echo("\n".join(table))
    return rows


def cmd_demo(args) -> int:
    out = _out_dir(args.out)
    if args.which == "fig1":
        demo_fig1(out, args.seed, args.n or 2000)
    else:
        demo_quadrotor(out, args.seed, args.runs, args.max_scenarios, max_iterations=args.max_iterations)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sipgains", description="Robust output-feedback gain synthesis by local reduction.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synthesize", help="run the exchange loop and write gains")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--max-scenarios", type=int)
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("validate", help="Monte Carlo validation of a gains file")
    s.add_argument("--config", required=True)
    s.add_argument("--gains", required=True)
    s.add_argument("--runs", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--tau", type=float, help="certified bound to check the sampled worst cost against")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("feasible", help="feasible-state box or samples")
    s.add_argument("action", choices=["box", "sample"])
    s.add_argument("--config", required=True)
    s.add_argument("--step", type=int, required=True)
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_feasible)

    s = sub.add_parser("demo", help="canned toy and quadrotor runs")
    s.add_argument("which", choices=["fig1", "quadrotor"])
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n", type=int)
    s.add_argument("--runs", type=int, default=1000)
    s.add_argument("--max-scenarios", type=int, default=50)
    s.add_argument("--max-iterations", type=int, default=100)
    s.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        for name in ("runs", "n"):
            v = getattr(args, name, None)
            if v is not None and v < 1:
                raise UsageError(f"--{name} must be positive")
        return args.func(args)
    except UsageError as exc:
        print(f"sipgains: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, InvalidInputError) as exc:
        print(f"sipgains: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"sipgains: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SipgainsError as exc:
        print(f"sipgains: failed: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
