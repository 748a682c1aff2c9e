"""Monte Carlo validation of synthesized policy parameters.

Each run draws one scenario consistent with the stored measurements (the
same rejection scheme as :mod:`sipgains.feasible`), extends it with future
disturbance and noise drawn uniformly from their sets, and rolls out the
closed loop.  Run ``i`` uses its own seed derived from ``(seed, i)``, so any
single run can be replayed in isolation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, SamplingStalled
from .feasible import STALL_PROPOSALS, STALL_RATE, _check_additive, history_box, propose_consistent
from .model import PolicyParams, ProblemSpec, Scenario, evaluate_constraints, evaluate_cost, simulate
from .sets import Box

SINGLE_CHUNK = 256


class ConsistentSampler:
    """Draws full-span scenarios compatible with the measurement history."""

    def __init__(self, spec: ProblemSpec, proposal_box: Box | None = None):
        _check_additive(spec)
        self.spec = spec
        self.proposal = proposal_box if proposal_box is not None else history_box(spec)
        self.n_proposed = 0
        self.n_accepted = 0

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_proposed if self.n_proposed else float("nan")

    def draw(self, rng: np.random.Generator) -> Scenario:
        spec, m = self.spec, self.spec.model
        proposed = accepted = 0
        while True:
            mask, x0, rf, rh, W, V, _ = propose_consistent(spec, self.proposal, rng, SINGLE_CHUNK)
            proposed += SINGLE_CHUNK
            hits = np.flatnonzero(mask)
            if hits.size:
                accepted = hits.size
                i = hits[0]
                break
            if proposed >= STALL_PROPOSALS and accepted / proposed < STALL_RATE:
                raise SamplingStalled(f"no consistent draw after {proposed} proposals")
        self.n_proposed += proposed
        self.n_accepted += accepted
        unc, N = spec.uncertainty, spec.N
        W_future = unc.w_set.sample(rng, N) if m.n_w else np.zeros((N, 0))
        V_future = unc.v_set.sample(rng, N) if m.n_v else np.zeros((N, 0))
        return Scenario(x0[i], rf[i], rh[i], np.concatenate([W[i], W_future.reshape(N, m.n_w)]),
                        np.concatenate([V[i], V_future.reshape(N, m.n_v)]))


def sample_consistent_scenario(spec: ProblemSpec, rng: np.random.Generator,
                               sampler: ConsistentSampler | None = None) -> Scenario:
    return (sampler or ConsistentSampler(spec)).draw(rng)


def run_seed(seed: int, run: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(run)]).generate_state(1)[0])


@dataclass
class RunRecord:
    run: int
    seed: int
    cost: float
    max_g: float
    terminal_state: np.ndarray
    diverged: bool


@dataclass
class ValidationReport:
    n_runs: int
    avg_cost: float
    max_cost: float
    min_cost: float
    violation_count: int
    diverged_count: int
    acceptance_rate: float
    records: list = field(default_factory=list)
    trajectories: np.ndarray | None = None   # (n, T + 1, n_x)
    std_cost: float = float("nan")

    @property
    def std_error(self) -> float:
        ok = self.n_runs - self.diverged_count
        return self.std_cost / np.sqrt(ok) if ok else float("nan")

    def upper_bound_warning(self, tau_star: float, slack: float = 0.05) -> str | None:
        """Message when the sampled worst cost exceeds the certified bound plus slack."""
        if self.max_cost > tau_star + slack * abs(tau_star):
            return (f"sampled max cost {self.max_cost:.6g} exceeds tau* {tau_star:.6g} "
                    f"by more than {slack:.0%}")
        return None


def validate(spec: ProblemSpec, params: PolicyParams, n: int, seed: int = 0,
             proposal_box: Box | None = None) -> ValidationReport:
    if n < 1:
        raise InvalidInputError("need at least one run")
    sampler = ConsistentSampler(spec, proposal_box)
    seeds = [run_seed(seed, i) for i in range(n)]
    scenarios = [sampler.draw(np.random.default_rng(s)) for s in seeds]
    x0 = np.stack([s.x_init for s in scenarios])
    rf = np.stack([s.rho_f for s in scenarios])
    rh = np.stack([s.rho_h for s in scenarios])
    W = np.stack([s.W for s in scenarios])
    V = np.stack([s.V for s in scenarios])
    K = np.broadcast_to(params.K, (n,) + params.K.shape)
    ub = np.broadcast_to(params.u_bar, (n,) + params.u_bar.shape)
    with np.errstate(all="ignore"):
        X, Y, U = simulate(spec, K, ub, x0, rf, rh, W, V)
        diverged = ~np.all(np.isfinite(X), axis=(1, 2))
        costs = np.asarray(evaluate_cost(spec, X, Y, U, W, V), dtype=float)
        G = evaluate_constraints(spec, X, Y, U, W, V)
    max_g = G.max(axis=1) if G.shape[1] else np.full(n, -np.inf)
    ok = ~diverged & np.isfinite(costs)
    diverged = ~ok
    records = [RunRecord(i, seeds[i], float(costs[i]), float(max_g[i]), X[i, -1].copy(), bool(diverged[i]))
               for i in range(n)]
    good = costs[ok]
    nan = float("nan")
    return ValidationReport(
        n_runs=n,
        avg_cost=float(good.mean()) if good.size else nan,
        max_cost=float(good.max()) if good.size else nan,
        min_cost=float(good.min()) if good.size else nan,
        violation_count=int(np.sum(ok & (max_g > 0.0))),
        diverged_count=int(diverged.sum()),
        acceptance_rate=sampler.acceptance_rate,
        records=records,
        trajectories=X,
        std_cost=float(good.std(ddof=1)) if good.size > 1 else nan,
    )
