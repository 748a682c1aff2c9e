"""Feasible state space implied by a measurement history.

Bounding boxes come from min/max NLP solves over every uncertainty
consistent with the stored measurements.  Exact samples come from rejection
sampling: propose an initial state in an outer box and parameters and
disturbances in their sets, replay the stored inputs, and accept when the
measurement noise implied at every stored step lies in its set.
"""
from __future__ import annotations

import csv
import weakref
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adversary import AdversaryLayout, adversary_problem
from .errors import InconsistentHistory, InvalidInputError, SamplingStalled
from .model import ProblemSpec, simulate
from .nlp import SolverSettings, multi_start_solve
from .sets import Box

# Tighter than the synthesis defaults so that the box of an exactly measured
# state collapses to within the acceptance slack of the sampler.
ANALYSIS_SETTINGS = SolverSettings(tol_feas=1e-10, tol_kkt=1e-8)

ACCEPT_TOL = 1e-9
INFEASIBLE_TOL = 1e-4
STALL_PROPOSALS = 1_000_000
STALL_RATE = 1e-5
CHUNK = 8192


def feasible_box(spec: ProblemSpec, t: int, settings: SolverSettings | None = None) -> Box:
    """Coordinate-wise bounds of the state at window index ``t`` (0 = k-M)."""
    if not 0 <= t <= spec.M:
        raise InvalidInputError(f"step {t} outside the measured window 0..{spec.M}")
    settings = settings or ANALYSIS_SETTINGS
    layout = AdversaryLayout(spec, past_only=True)
    n_x = spec.model.n_x
    lo, hi = np.empty(n_x), np.empty(n_x)
    for j in range(n_x):
        for sign, out in ((-1.0, lo), (1.0, hi)):
            problem = adversary_problem(layout, None, lambda u, X, Y, U, j=j, s=sign: s * X[:, t, j])
            res = multi_start_solve(problem, settings.with_seed(settings.rng_seed + 2 * j + (sign > 0)))
            if res.max_constraint_violation > INFEASIBLE_TOL:
                raise InconsistentHistory(
                    f"no uncertainty realization reproduces the stored measurements "
                    f"(violation {res.max_constraint_violation:.3g})")
            out[j] = sign * (-res.objective_value)
    return Box(lo, np.maximum(lo, hi))


def inflate(box: Box, fraction: float = 0.05) -> Box:
    """Grow every finite side by ``fraction`` of the width in total."""
    pad = 0.5 * fraction * (box.hi - box.lo)
    return Box(box.lo - pad, box.hi + pad)


_history_cache: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def history_box(spec: ProblemSpec, settings: SolverSettings | None = None, fraction: float = 0.05) -> Box:
    """Inflated feasible box of the oldest stored state, clipped to the beta box.

    Memoized per spec object.
    """
    key = (settings, fraction)
    per_spec = _history_cache.setdefault(spec, {})
    if key not in per_spec:
        box = inflate(feasible_box(spec, 0, settings), fraction)
        if spec.beta_box is not None:
            blo, bhi = spec.beta_box.bounds()
            lo, hi = np.maximum(box.lo, blo), np.minimum(box.hi, bhi)
            box = Box(lo, np.maximum(lo, hi))
        per_spec[key] = box
    return per_spec[key]


def _check_additive(spec: ProblemSpec) -> None:
    m = spec.model
    if not m.additive_measurement_noise or m.n_v != m.n_y:
        raise InvalidInputError("rejection sampling requires additive measurement noise")


def propose_consistent(spec: ProblemSpec, proposal: Box, rng: np.random.Generator, size: int):
    """One proposal batch; returns the accepted rows and their implied past noise.

    Returns ``(mask, x0, rho_f, rho_h, W_past, V_past, X_past)``.
    """
    m, unc, M = spec.model, spec.uncertainty, spec.M
    x0 = proposal.sample(rng, size)
    rf = unc.rho_f_set.sample(rng, size)
    rh = unc.rho_h_set.sample(rng, size)
    if M and m.n_w:
        W = unc.w_set.sample(rng, size * M).reshape(size, M, m.n_w)
    else:
        W = np.zeros((size, M, m.n_w))
    zero_v = np.zeros((size, M + 1, m.n_v))
    X, Y, _ = simulate(spec, np.zeros((size, 0, m.n_u, m.n_y)), np.zeros((size, 0, m.n_u)),
                       x0, rf, rh, W, zero_v)
    V = spec.Y0[None] - Y
    mask = np.all(unc.v_set.contains(V, ACCEPT_TOL), axis=1)
    if spec.beta_box is not None:
        mask &= spec.beta_box.contains(x0, ACCEPT_TOL)
    mask &= np.all(np.isfinite(X), axis=(1, 2))
    return mask, x0, rf, rh, W, V, X


@dataclass
class FeasibleSamples:
    states: np.ndarray        # (n, n_x) at the requested step
    acceptance_rate: float
    n_proposed: int
    proposal_box: Box
    V_past: np.ndarray        # implied noise, (n, M + 1, n_v)
    X_past: np.ndarray        # (n, M + 1, n_x)


def sample_feasible(spec: ProblemSpec, t: int, n: int, rng: np.random.Generator,
                    proposal_box: Box | None = None, settings: SolverSettings | None = None) -> FeasibleSamples:
    """``n`` exact samples of the state at window index ``t``."""
    _check_additive(spec)
    if not 0 <= t <= spec.M:
        raise InvalidInputError(f"step {t} outside the measured window 0..{spec.M}")
    proposal = proposal_box if proposal_box is not None else history_box(spec, settings)
    states, vs, xs = [], [], []
    accepted = proposed = 0
    while accepted < n:
        mask, _, _, _, _, V, X = propose_consistent(spec, proposal, rng, CHUNK)
        proposed += CHUNK
        states.append(X[mask, t])
        vs.append(V[mask])
        xs.append(X[mask])
        accepted += int(mask.sum())
        if proposed >= STALL_PROPOSALS and accepted / proposed < STALL_RATE:
            raise SamplingStalled(f"acceptance rate {accepted / proposed:.2e} after {proposed} proposals")
    return FeasibleSamples(
        states=np.concatenate(states)[:n], acceptance_rate=accepted / proposed, n_proposed=proposed,
        proposal_box=proposal, V_past=np.concatenate(vs)[:n], X_past=np.concatenate(xs)[:n],
    )


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def export_cloud(samples, box: Box | None, path, accepted=None) -> Path:
    """Write ``x1,...,xn,accepted`` rows, plus ``<stem>.box.csv`` when ``box`` is given."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.size == 0:
        raise InvalidInputError("no samples to export")
    path = Path(path)
    flags = np.ones(len(samples), dtype=int) if accepted is None else np.asarray(accepted, dtype=int)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(samples.shape[1])] + ["accepted"])
        for row, flag in zip(samples, flags):
            w.writerow([_fmt(v) for v in row] + [int(flag)])
    side = box_sidecar_path(path)
    if box is not None:
        write_box(box, side)
    elif side.exists():
        side.unlink()
    return path


def box_sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".box.csv")


def write_box(box: Box, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["coord", "lo", "hi"])
        for i, (lo, hi) in enumerate(zip(box.lo, box.hi)):
            w.writerow([f"x{i + 1}", _fmt(lo), _fmt(hi)])
    return path


def read_cloud(path):
    """Samples and accepted flags from an exported cloud."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(v) for v in r[:-1]] for r in rows[1:]])
    flags = np.array([int(r[-1]) for r in rows[1:]])
    return data, flags


def read_box(path) -> Box:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return Box([float(r[1]) for r in rows], [float(r[2]) for r in rows])
