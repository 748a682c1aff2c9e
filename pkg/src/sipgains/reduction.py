"""Scenario-exchange (local reduction) synthesis of robust policy parameters.

The adversary's decision vector is a packed :class:`~sipgains.model.Scenario`
``(x_init, rho_f, rho_h, W, V)``; future states are eliminated by rolling the
closed loop forward.  The designer's vector is the flattened policy
parameters followed by an epigraph variable ``tau``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import InconsistentScenario, InvalidInputError, SynthesisInfeasible
from .model import (PolicyParams, ProblemSpec, Scenario, check_scenario, evaluate_constraints,
                    evaluate_cost, future_segments, scenario_constraints, scenario_cost, simulate)
from .adversary import AdversaryLayout, adversary_problem
from .feasible import history_box
from .nlp import NlpProblem, NlpResult, SolverSettings, WarmStart, multi_start_solve, solve

log = logging.getLogger(__name__)

ORIGIN_INITIAL = "initial"
ORIGIN_COST = "cost_adversary"


def constraint_origin(i: int) -> str:
    return f"constraint_adversary({i})"


@dataclass(frozen=True)
class ReductionSettings:
    eps_cost: float = 1e-4
    eps_constraint: float = 1e-6
    max_scenarios: int = 50
    max_iterations: int = 30
    dedup_tol: float = 1e-9
    outer_infeasible_tol: float = 1e-4
    seed: int = 0
    bound_initial_state: bool = True
    # fresh random outer starts added to the warm start after the first iteration
    outer_restarts: int = 8
    # both subproblems are small and dense with many nearly active
    # constraints, where the active-set method beats the augmented Lagrangian
    # by a wide margin
    inner: SolverSettings = field(default_factory=lambda: SolverSettings(method="sqp"))
    outer: SolverSettings = field(default_factory=lambda: SolverSettings(method="sqp"))

    def __post_init__(self):
        if not (self.eps_cost > 0 and self.eps_constraint > 0 and self.dedup_tol > 0):
            raise InvalidInputError("reduction tolerances must be positive")
        if self.max_scenarios < 1 or self.max_iterations < 1 or self.outer_restarts < 0:
            raise InvalidInputError("reduction limits must be positive")


class ScenarioSet:
    """Ordered exchange set with origin tags and near-duplicate rejection."""

    def __init__(self, dedup_tol: float = 1e-9):
        self.dedup_tol = dedup_tol
        self.scenarios: list[Scenario] = []
        self.origins: list[str] = []
        self._vectors: list[np.ndarray] = []

    def __len__(self):
        return len(self.scenarios)

    def __iter__(self):
        return iter(self.scenarios)

    def contains(self, scenario: Scenario) -> bool:
        v = scenario.to_vector()
        return any(np.all(np.abs(v - w) <= self.dedup_tol) for w in self._vectors)

    def add(self, scenario: Scenario, origin: str) -> bool:
        if self.contains(scenario):
            return False
        self.scenarios.append(scenario)
        self.origins.append(origin)
        self._vectors.append(scenario.to_vector())
        return True

    def arrays(self):
        s = self.scenarios
        return (np.stack([x.x_init for x in s]), np.stack([x.rho_f for x in s]),
                np.stack([x.rho_h for x in s]), np.stack([x.W for x in s]), np.stack([x.V for x in s]))


def build_inner_max_cost(spec: ProblemSpec, params: PolicyParams, x_bounds=None) -> NlpProblem:
    """Worst-case cost search; the NLP objective is the negated cost.

    ``x_bounds`` optionally restricts the initial state (e.g. to the history box).
    """
    layout = AdversaryLayout(spec, x_bounds=x_bounds)

    def score(unpacked, X, Y, U):
        return evaluate_cost(spec, X, Y, U, unpacked[3], unpacked[4])

    return adversary_problem(layout, params, score)


def build_inner_max_constraint(spec: ProblemSpec, params: PolicyParams, constraint_index: int,
                               x_bounds=None) -> NlpProblem:
    if not 0 <= constraint_index < spec.n_constraints:
        raise InvalidInputError(f"constraint index {constraint_index} out of range")
    layout = AdversaryLayout(spec, x_bounds=x_bounds)
    g = spec.path_constraints[constraint_index]

    def score(unpacked, X, Y, U):
        return np.asarray(g(*future_segments(spec, X, Y, U, unpacked[3], unpacked[4])), dtype=float)

    return adversary_problem(layout, params, score)


def build_outer_min(spec: ProblemSpec, scen_set: ScenarioSet) -> NlpProblem:
    """Epigraph problem over ``(params, tau)`` on a finite scenario set.

    Inequalities are ordered per scenario: ``J_s - tau`` then every ``g_i``.
    """
    if len(scen_set) == 0:
        raise InvalidInputError("scenario set is empty")
    pol, m = spec.policy, spec.model
    n_k = pol.lags * m.n_u * m.n_y
    n_p = spec.n_params
    lo = np.concatenate([np.full(n_k, pol.gain_bounds[0]), np.full(n_p - n_k, pol.ff_bounds[0]), [-np.inf]])
    hi = np.concatenate([np.full(n_k, pol.gain_bounds[1]), np.full(n_p - n_k, pol.ff_bounds[1]), [np.inf]])
    x0, rf, rh, W, V = scen_set.arrays()
    S = len(scen_set)
    n_g = spec.n_constraints

    def costs_and_constraints(P):
        p = P.shape[0]
        K = P[:, :n_k].reshape(p, pol.lags, m.n_u, m.n_y)
        ub = P[:, n_k:n_p].reshape(p, spec.N, m.n_u)
        rep = lambda a: np.tile(a, (p,) + (1,) * (a.ndim - 1))
        Wr, Vr = rep(W), rep(V)
        X, Y, U = simulate(spec, np.repeat(K, S, axis=0), np.repeat(ub, S, axis=0),
                           rep(x0), rep(rf), rep(rh), Wr, Vr)
        J = evaluate_cost(spec, X, Y, U, Wr, Vr).reshape(p, S)
        G = evaluate_constraints(spec, X, Y, U, Wr, Vr).reshape(p, S, n_g)
        return J, G

    def batch_eval(Z):
        J, G = costs_and_constraints(Z[:, :n_p])
        tau = Z[:, n_p]
        ci = np.concatenate([(J - tau[:, None])[:, :, None], G], axis=2).reshape(len(Z), -1)
        return tau, np.zeros((len(Z), 0)), ci

    def start_hook(z):
        J, _ = costs_and_constraints(z[None, :n_p])
        z = z.copy()
        z[n_p] = float(np.max(J))
        return z

    return NlpProblem(n_vars=n_p + 1, lo=lo, hi=hi, batch_eval=batch_eval, n_eq=0,
                      n_ineq=S * (1 + n_g), start_hook=start_hook)


def extract_scenario(spec: ProblemSpec, result: NlpResult, tol: float = 1e-6) -> Scenario:
    """Unpack an inner-problem solution and validate it."""
    scenario = AdversaryLayout(spec).scenario(result.z_star)
    check_scenario(spec, scenario, tol)
    return scenario


def nominal_scenario(spec: ProblemSpec, settings: SolverSettings | None = None) -> Scenario:
    """Closest consistent scenario to the set centers (zero-noise where admissible)."""
    settings = settings or SolverSettings()
    layout = AdversaryLayout(spec)
    unc = spec.uncertainty
    T = spec.T
    m = spec.model
    if spec.beta_box is not None:
        x_c = spec.beta_box.center()
    else:
        x_c = np.zeros(m.n_x)
    center = np.concatenate([x_c, unc.rho_f_set.center(), unc.rho_h_set.center(),
                             np.tile(unc.w_set.center(), T), np.tile(unc.v_set.center(), T + 1)])
    center = np.clip(center, layout.lo, layout.hi)
    # only the uncertainty proper is pulled towards its center
    weight = np.ones(layout.n)
    weight[:m.n_x] = 0.0

    def batch_eval(Z):
        unpacked, (X, Y, U) = layout.trajectories(Z, PolicyParams.zeros(spec.policy.lags, m.n_u, m.n_y, spec.N))
        ce, ci = layout.constraint_values(unpacked, Y)
        d = (Z - center) * weight
        return np.sum(d * d, axis=1), ce, ci

    problem = NlpProblem(n_vars=layout.n, lo=layout.lo, hi=layout.hi, batch_eval=batch_eval,
                         n_eq=layout.n_eq, n_ineq=layout.n_ineq)
    _, ce, ci = problem.evaluate(center)
    viol = max(np.max(np.abs(ce), initial=0.0), np.max(ci, initial=0.0))
    if viol <= settings.tol_feas:
        z = center
    else:
        z = solve(problem, center, settings).z_star
    scenario = layout.scenario(z)
    check_scenario(spec, scenario, settings.tol_feas)
    return scenario


@dataclass
class IterationRecord:
    iteration: int
    tau: float
    worst_inner_cost: float
    worst_violation: float
    scenario_count: int
    outer_status: str
    inner_statuses: dict
    added: list = field(default_factory=list)
    seconds: float = 0.0
    params: PolicyParams | None = None    # outer solution the adversaries faced


@dataclass
class SynthesisReport:
    params_star: PolicyParams
    tau_star: float
    iterations: int
    scenario_set: ScenarioSet
    history: list
    terminated_by: str


def _derived_settings(base: SolverSettings, seed: int, *keys) -> SolverSettings:
    state = np.random.SeedSequence([base.rng_seed, seed, *keys]).generate_state(1)[0]
    return base.with_seed(int(state))


def _replay(spec, params, scenarios):
    costs = np.array([scenario_cost(spec, params, s) for s in scenarios])
    if spec.n_constraints:
        cons = np.array([scenario_constraints(spec, params, s) for s in scenarios])
    else:
        cons = np.zeros((len(scenarios), 0))
    return costs, cons


def local_reduction(spec: ProblemSpec, settings: ReductionSettings | None = None,
                    initial: Sequence[Scenario] | None = None) -> SynthesisReport:
    """Alternate outer minimization and adversarial inner maximizations."""
    settings = settings or ReductionSettings()
    scen_set = ScenarioSet(settings.dedup_tol)
    if initial:
        for s in initial:
            check_scenario(spec, s, settings.inner.tol_feas)
            scen_set.add(s, ORIGIN_INITIAL)
    else:
        scen_set.add(nominal_scenario(spec, settings.inner), ORIGIN_INITIAL)

    x_bounds = None
    if settings.bound_initial_state:
        box = history_box(spec)
        pad = 1e-7 * (1.0 + np.abs(box.lo) + np.abs(box.hi))
        x_bounds = (box.lo - pad, box.hi + pad)

    history: list[IterationRecord] = []
    warm: WarmStart | None = None
    terminated_by = "iteration_cap"
    params = None
    tau = np.nan
    it = 0
    while True:
        it += 1
        t0 = time.perf_counter()
        outer = build_outer_min(spec, scen_set)
        outer_settings = _derived_settings(settings.outer, settings.seed, it, 0)
        if warm is not None:
            outer_settings = replace(outer_settings, n_starts=min(outer_settings.n_starts, settings.outer_restarts))
        res = multi_start_solve(outer, outer_settings, extra_starts=[] if warm is None else [warm])
        if res.max_constraint_violation > settings.outer_infeasible_tol:
            raise SynthesisInfeasible(
                f"outer problem infeasible at iteration {it} "
                f"(violation {res.max_constraint_violation:.3g})", scen_set)
        params = spec.params_from_vector(res.z_star[:-1])
        costs, cons = _replay(spec, params, scen_set.scenarios)
        tau = float(np.max(costs))
        # multipliers of existing scenarios carry over; new rows are appended
        warm = WarmStart(np.concatenate([params.to_vector(), [tau]]), res.multipliers_eq,
                         res.multipliers_ineq, res.penalty)

        # adversaries: cost first, then constraints by index
        inner_statuses = {}
        candidates = []
        worst_cost = -np.inf
        worst_violation = -np.inf
        problems = [(ORIGIN_COST, build_inner_max_cost(spec, params, x_bounds), None)]
        for i in range(spec.n_constraints):
            problems.append((constraint_origin(i), build_inner_max_constraint(spec, params, i, x_bounds), i))
        for k, (origin, prob, ci) in enumerate(problems, start=1):
            inner = multi_start_solve(prob, _derived_settings(settings.inner, settings.seed, it, k))
            inner_statuses[origin] = inner.status
            try:
                scen = extract_scenario(spec, inner, settings.inner.tol_feas)
            except InconsistentScenario as exc:
                log.info("iteration %d: %s adversary rejected (%s)", it, origin, exc)
                inner_statuses[origin] = f"{inner.status}/inconsistent"
                continue
            if ci is None:
                value = scenario_cost(spec, params, scen)
                worst_cost = max(worst_cost, value)
                if value > tau + settings.eps_cost:
                    candidates.append((scen, origin))
            else:
                value = float(scenario_constraints(spec, params, scen)[ci])
                worst_violation = max(worst_violation, value)
                if value > settings.eps_constraint:
                    candidates.append((scen, origin))

        record = IterationRecord(
            iteration=it, tau=tau, worst_inner_cost=float(worst_cost),
            worst_violation=float(worst_violation), scenario_count=len(scen_set),
            outer_status=res.status, inner_statuses=inner_statuses, params=params,
        )
        history.append(record)
        new = [(s, o) for s, o in candidates if not scen_set.contains(s)]
        if not new:
            terminated_by = "converged"
        elif len(scen_set) >= settings.max_scenarios:
            terminated_by = "scenario_cap"
        elif it >= settings.max_iterations:
            terminated_by = "iteration_cap"
        else:
            for s, o in new:
                if len(scen_set) >= settings.max_scenarios:
                    break
                if scen_set.add(s, o):
                    record.added.append(o)
            record.seconds = time.perf_counter() - t0
            log.info("iteration %d: tau=%.6g worst cost=%.6g worst g=%.3g scenarios=%d",
                     it, tau, worst_cost, worst_violation, len(scen_set))
            continue
        record.seconds = time.perf_counter() - t0
        break

    return SynthesisReport(params_star=params, tau_star=tau, iterations=it, scenario_set=scen_set,
                           history=history, terminated_by=terminated_by)
