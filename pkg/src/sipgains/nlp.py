"""Local solver for smooth bound-constrained NLPs with equality/inequality constraints.

The method is a safeguarded augmented Lagrangian: each outer iteration
minimizes the augmented Lagrangian over the bound box with L-BFGS-B, then
updates multipliers and, when constraint violation stalls, the penalty.
Gradients come from central finite differences unless an analytic hook is
supplied.

``SolverSettings.method = "sqp"`` runs SciPy's SLSQP instead, estimates
multipliers by bounded least squares on the active set, and re-checks the
KKT conditions, so ``converged`` means the same thing for both methods.
An infeasible SLSQP point, or any unconverged point of a problem with bounds
only, seeds the augmented Lagrangian; a feasible point of a constrained
problem that fails the KKT check is returned as ``max_iters``.

Problems may supply a ``batch_eval`` callable that evaluates objective and
constraints on a stack of points at once; finite differencing then costs a
single batched call per Jacobian.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import lsq_linear, minimize

from . import _accel
from .errors import GradientFailure, InvalidInputError, InvalidStart

CONVERGED = "converged"
MAX_ITERS = "max_iters"
DIVERGED = "diverged"
METHODS = ("al", "sqp")
SQP_RESTARTS = 5


@dataclass(frozen=True)
class SolverSettings:
    tol_kkt: float = 1e-6
    tol_feas: float = 1e-6
    max_outer_iters: int = 60
    max_inner_iters: int = 400
    fd_step: float = 1e-6
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    penalty_cap: float = 1e10
    n_starts: int = 8
    rng_seed: int = 0
    # feasible iterates whose KKT residual fails to drop 10% over this many
    # accepted iterations end the solve early (status stays max_iters)
    stall_window: int = 10
    method: str = "al"

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidInputError(f"method must be one of {', '.join(METHODS)}")
        for name in ("tol_kkt", "tol_feas", "fd_step", "penalty_init", "penalty_cap"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")
        if self.penalty_growth <= 1.0:
            raise InvalidInputError("penalty_growth must exceed 1")
        if self.max_outer_iters < 1 or self.max_inner_iters < 1 or self.n_starts < 0 or self.stall_window < 1:
            raise InvalidInputError("iteration limits must be positive")

    def with_seed(self, seed: int) -> "SolverSettings":
        return replace(self, rng_seed=int(seed))


@dataclass(frozen=True, eq=False)
class NlpProblem:
    """``min f(z)`` s.t. ``eq(z) = 0``, ``ineq(z) <= 0``, ``lo <= z <= hi``.

    Either give ``objective`` with lists of scalar constraint maps, or a
    ``batch_eval(Z) -> (f, ce, ci)`` over ``Z`` of shape ``(p, n_vars)`` with
    ``n_eq``/``n_ineq`` set.  ``gradient(z) -> (gf, Je, Ji)`` replaces finite
    differences.  ``start_hook(z) -> z`` adjusts starting points (used to
    make epigraph variables feasible).
    """

    n_vars: int
    lo: np.ndarray
    hi: np.ndarray
    objective: Callable | None = None
    eq_constraints: Sequence[Callable] = ()
    ineq_constraints: Sequence[Callable] = ()
    batch_eval: Callable | None = None
    n_eq: int | None = None
    n_ineq: int | None = None
    gradient: Callable | None = None
    start_hook: Callable | None = None

    def __post_init__(self):
        lo = np.broadcast_to(np.asarray(self.lo, dtype=float), (self.n_vars,)).copy()
        hi = np.broadcast_to(np.asarray(self.hi, dtype=float), (self.n_vars,)).copy()
        if np.any(lo > hi):
            raise InvalidInputError("empty bound box")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "eq_constraints", tuple(self.eq_constraints))
        object.__setattr__(self, "ineq_constraints", tuple(self.ineq_constraints))
        if self.batch_eval is None:
            if self.objective is None:
                raise InvalidInputError("need an objective or a batch_eval")
            object.__setattr__(self, "n_eq", len(self.eq_constraints))
            object.__setattr__(self, "n_ineq", len(self.ineq_constraints))
        elif self.n_eq is None or self.n_ineq is None:
            raise InvalidInputError("batch_eval problems must declare n_eq and n_ineq")

    def evaluate(self, z):
        """Objective value and constraint vectors at one point."""
        z = np.asarray(z, dtype=float)
        if self.batch_eval is not None:
            f, ce, ci = self.batch_eval(z[None, :])
            return float(f[0]), np.asarray(ce[0], dtype=float), np.asarray(ci[0], dtype=float)
        f = float(self.objective(z))
        ce = np.array([c(z) for c in self.eq_constraints], dtype=float)
        ci = np.array([c(z) for c in self.ineq_constraints], dtype=float)
        return f, ce, ci

    def evaluate_batch(self, Z):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if self.batch_eval is not None:
            f, ce, ci = self.batch_eval(Z)
            return (np.asarray(f, dtype=float).reshape(-1),
                    np.asarray(ce, dtype=float).reshape(len(Z), self.n_eq),
                    np.asarray(ci, dtype=float).reshape(len(Z), self.n_ineq))
        rows = [self.evaluate(z) for z in Z]
        return (np.array([r[0] for r in rows]),
                np.array([r[1] for r in rows]).reshape(len(Z), self.n_eq),
                np.array([r[2] for r in rows]).reshape(len(Z), self.n_ineq))

    def project(self, z):
        return np.clip(np.asarray(z, dtype=float), self.lo, self.hi)


@dataclass(frozen=True, eq=False)
class NlpResult:
    z_star: np.ndarray
    objective_value: float
    status: str
    kkt_residual: float
    max_constraint_violation: float
    multipliers_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    multipliers_ineq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: int = 0
    excess_history: tuple = ()
    start_index: int = -1
    penalty: float = float("nan")

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


@dataclass(frozen=True, eq=False)
class WarmStart:
    """Starting point with multiplier estimates and penalty from an earlier solve."""

    z: np.ndarray
    multipliers_eq: np.ndarray | None = None
    multipliers_ineq: np.ndarray | None = None
    penalty: float | None = None


def fd_gradient(f: Callable, z, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar map."""
    z = np.asarray(z, dtype=float)
    g = np.empty(z.size)
    for i in range(z.size):
        e = np.zeros(z.size)
        e[i] = step
        fp, fm = f(z + e), f(z - e)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise GradientFailure(f"non-finite value while differencing coordinate {i}")
        g[i] = (fp - fm) / (2.0 * step)
    return g


def _jacobians(problem: NlpProblem, z, h):
    """Objective gradient and constraint Jacobians at ``z``."""
    if problem.gradient is not None:
        gf, Je, Ji = problem.gradient(z)
        return (np.asarray(gf, dtype=float),
                np.asarray(Je, dtype=float).reshape(problem.n_eq, problem.n_vars),
                np.asarray(Ji, dtype=float).reshape(problem.n_ineq, problem.n_vars))
    n = problem.n_vars
    E = h * np.eye(n)
    f, ce, ci = problem.evaluate_batch(np.vstack([z + E, z - E]))
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(ce)) and np.all(np.isfinite(ci))):
        raise GradientFailure("non-finite value while differencing")
    inv = 1.0 / (2.0 * h)
    gf = (f[:n] - f[n:]) * inv
    Je = ((ce[:n] - ce[n:]) * inv).T
    Ji = ((ci[:n] - ci[n:]) * inv).T
    return gf, Je, Ji


def _violation(ce, ci) -> float:
    v = 0.0
    if ce.size:
        v = max(v, float(np.max(np.abs(ce))))
    if ci.size:
        v = max(v, float(np.max(ci)))
    return v


def _kkt_from(problem, z, lam, mu, f_c, jac):
    ce, ci = f_c
    gf, Je, Ji = jac
    grad_l = gf + Je.T @ lam + Ji.T @ mu
    proj = z - np.clip(z - grad_l, problem.lo, problem.hi)
    terms = [float(np.max(np.abs(proj), initial=0.0)), _violation(ce, ci)]
    if ci.size:
        terms.append(float(np.max(np.abs(mu * ci))))
        terms.append(float(np.max(-mu, initial=0.0)))
    return max(terms)


def check_kkt(problem: NlpProblem, z, multipliers, settings: SolverSettings | None = None) -> float:
    """KKT residual: projected Lagrangian gradient, violations, complementarity."""
    settings = settings or SolverSettings()
    z = np.asarray(z, dtype=float)
    lam, mu = multipliers
    lam = np.asarray(lam, dtype=float).reshape(problem.n_eq)
    mu = np.asarray(mu, dtype=float).reshape(problem.n_ineq)
    _, ce, ci = problem.evaluate(z)
    jac = _jacobians(problem, z, settings.fd_step)
    return _kkt_from(problem, z, lam, mu, (ce, ci), jac)


def _al_subproblem(problem, z, lam, mu, rho, gtol, settings):
    h = settings.fd_step

    def fun(x):
        f, ce, ci = problem.evaluate(x)
        if not (np.isfinite(f) and np.all(np.isfinite(ce)) and np.all(np.isfinite(ci))):
            return np.inf, np.zeros_like(x)
        shifted = np.maximum(0.0, mu + rho * ci)
        val = f + lam @ ce + 0.5 * rho * (ce @ ce) + (shifted @ shifted - mu @ mu) / (2.0 * rho)
        try:
            gf, Je, Ji = _jacobians(problem, x, h)
        except GradientFailure:
            return np.inf, np.zeros_like(x)
        grad = gf + Je.T @ (lam + rho * ce) + Ji.T @ shifted
        return val, grad

    res = minimize(fun, z, jac=True, method="L-BFGS-B",
                   bounds=list(zip(problem.lo, problem.hi)),
                   options={"maxiter": settings.max_inner_iters, "gtol": gtol,
                            "ftol": 1e-15, "maxcor": 20})
    return problem.project(res.x)


def solve(problem: NlpProblem, z0, settings: SolverSettings | None = None) -> NlpResult:
    """Local solve from ``z0`` (projected into the bounds).

    ``z0`` may be a :class:`WarmStart`; its multipliers seed the first
    augmented-Lagrangian subproblem (shorter vectors are padded with zeros,
    so constraints appended since the earlier solve start at zero).
    """
    settings = settings or SolverSettings()
    warm = z0 if isinstance(z0, WarmStart) else None
    if warm is not None:
        z0 = warm.z
    z = problem.project(z0)
    if problem.start_hook is not None:
        z = problem.project(problem.start_hook(z))
    f, ce, ci = problem.evaluate(z)
    if not np.isfinite(f):
        raise InvalidStart("objective is not finite at the starting point")
    if settings.method == "sqp":
        res = _sqp_solve(problem, z, settings)
        constrained = problem.n_eq + problem.n_ineq > 0
        if res is not None and (res.converged or (constrained and res.max_constraint_violation <= settings.tol_feas)):
            return res
        if res is not None and res.max_constraint_violation <= _violation(ce, ci):
            warm = WarmStart(res.z_star, res.multipliers_eq, res.multipliers_ineq)
            z = res.z_star
    return _al_solve(problem, z, warm, settings)


def _estimate_multipliers(problem, z, ci, jac, settings):
    """Least-squares multipliers on the active set.

    Bounds within ``tol_kkt`` of ``z`` get their own nonnegative columns so
    that the fit sees the full stationarity condition; their values are
    discarded afterwards.  (The KKT residual of such a coordinate is capped
    by its distance to the bound, so treating it as free would overweight it.)
    """
    gf, Je, Ji = jac
    n = problem.n_vars
    active = np.flatnonzero(ci >= -max(settings.tol_feas, 1e-8))
    at_hi = np.flatnonzero(z >= problem.hi - settings.tol_kkt)
    at_lo = np.flatnonzero(z <= problem.lo + settings.tol_kkt)
    eye = np.eye(n)
    A = np.hstack([Je.T, Ji[active].T, eye[:, at_hi], -eye[:, at_lo]])
    lam = np.zeros(problem.n_eq)
    mu = np.zeros(problem.n_ineq)
    if A.shape[1] == 0:
        return lam, mu
    lb = np.concatenate([np.full(problem.n_eq, -np.inf), np.zeros(A.shape[1] - problem.n_eq)])
    sol = lsq_linear(A, -gf, bounds=(lb, np.full(lb.size, np.inf)), method="bvls")
    lam[:] = sol.x[:problem.n_eq]
    mu[active] = sol.x[problem.n_eq:problem.n_eq + active.size]
    return lam, mu


def _sqp_solve(problem, z, settings):
    """SLSQP from ``z``; None when the run hits non-finite values."""
    h = settings.fd_step
    cache = {}

    def point(x):
        key = x.tobytes()
        if key not in cache:
            f, ce, ci = problem.evaluate(x)
            if not (np.isfinite(f) and np.all(np.isfinite(ce)) and np.all(np.isfinite(ci))):
                raise GradientFailure("non-finite value")
            cache.clear()
            cache[key] = (f, ce, ci, _jacobians(problem, x, h))
        return cache[key]

    cons = []
    if problem.n_eq:
        cons.append({"type": "eq", "fun": lambda x: point(x)[1], "jac": lambda x: point(x)[3][1]})
    if problem.n_ineq:
        # SLSQP wants c(x) >= 0
        cons.append({"type": "ineq", "fun": lambda x: -point(x)[2], "jac": lambda x: -point(x)[3][2]})
    nit = 0
    kkt = viol = np.inf
    # SLSQP stops on small objective changes even when its quasi-Newton model
    # has gone stale; restarting from the result resets that model
    for _ in range(SQP_RESTARTS):
        try:
            with warnings.catch_warnings():
                # trial points are clipped into the box, which is what we want
                warnings.filterwarnings("ignore", "Values in x were outside bounds", RuntimeWarning)
                res = minimize(lambda x: point(x)[0], z, jac=lambda x: point(x)[3][0], method="SLSQP",
                               bounds=list(zip(problem.lo, problem.hi)), constraints=cons,
                               options={"maxiter": settings.max_inner_iters, "ftol": 0.01 * settings.tol_kkt})
            z_new = problem.project(res.x)
            f_new, ce_new, ci_new, jac = point(z_new)
        except GradientFailure:
            return None
        nit += int(res.nit)
        lam_new, mu_new = _estimate_multipliers(problem, z_new, ci_new, jac, settings)
        kkt_new = _kkt_from(problem, z_new, lam_new, mu_new, (ce_new, ci_new), jac)
        viol_new = _violation(ce_new, ci_new)
        if np.isfinite(kkt) and viol_new > max(viol, settings.tol_feas):
            break
        z, f, ce, ci, lam, mu, kkt, viol = z_new, f_new, ce_new, ci_new, lam_new, mu_new, kkt_new, viol_new
        if kkt <= settings.tol_kkt and viol <= settings.tol_feas:
            break
    if not np.isfinite(kkt):
        return None
    status = CONVERGED if kkt <= settings.tol_kkt and viol <= settings.tol_feas else MAX_ITERS
    return NlpResult(
        z_star=z, objective_value=float(f), status=status, kkt_residual=float(kkt),
        max_constraint_violation=viol, multipliers_eq=lam, multipliers_ineq=mu,
        iterations=nit, excess_history=(max(0.0, viol - settings.tol_feas),),
    )


def _al_solve(problem, z, warm, settings):
    f, ce, ci = problem.evaluate(z)
    lam = np.zeros(problem.n_eq)
    mu = np.zeros(problem.n_ineq)
    rho = settings.penalty_init
    if warm is not None:
        for dst, src in ((lam, warm.multipliers_eq), (mu, warm.multipliers_ineq)):
            if src is not None:
                k = min(dst.size, np.size(src))
                dst[:k] = np.asarray(src, dtype=float).ravel()[:k]
        mu = np.maximum(mu, 0.0)
        if warm.penalty is not None and np.isfinite(warm.penalty):
            rho = float(np.clip(warm.penalty, settings.penalty_init, settings.penalty_cap))
    constrained = problem.n_eq + problem.n_ineq > 0
    floor = 0.1 * settings.tol_kkt
    gtol = 1e-3 if constrained else floor
    accepted_excess = np.inf
    prev_viol = np.inf
    excess_hist = []
    kkt_hist = []
    status = MAX_ITERS
    kkt = np.inf
    lam_out, mu_out = lam, mu
    it = 0
    for it in range(1, settings.max_outer_iters + 1):
        z_new = _al_subproblem(problem, z, lam, mu, rho, gtol, settings)
        f_new, ce_new, ci_new = problem.evaluate(z_new)
        if not (np.isfinite(f_new) and np.all(np.isfinite(ce_new)) and np.all(np.isfinite(ci_new))):
            status = DIVERGED
            break
        viol = _violation(ce_new, ci_new)
        excess = max(0.0, viol - settings.tol_feas)
        if excess > accepted_excess + 1e-12:
            # reject: tighten the penalty and retry from the last accepted point
            if rho >= settings.penalty_cap:
                break
            rho = min(rho * settings.penalty_growth, settings.penalty_cap)
            continue
        lam_new = lam + rho * ce_new
        mu_new = np.maximum(0.0, mu + rho * ci_new)
        z, f, ce, ci = z_new, f_new, ce_new, ci_new
        accepted_excess = excess
        excess_hist.append(excess)
        try:
            jac = _jacobians(problem, z, settings.fd_step)
        except GradientFailure:
            status = DIVERGED
            break
        kkt = _kkt_from(problem, z, lam_new, mu_new, (ce, ci), jac)
        lam_out, mu_out = lam_new, mu_new
        if kkt <= settings.tol_kkt and viol <= settings.tol_feas:
            status = CONVERGED
            break
        kkt_hist.append(kkt if viol <= settings.tol_feas else np.inf)
        w = settings.stall_window
        if len(kkt_hist) > w and min(kkt_hist[-w:]) > 0.9 * min(kkt_hist[:-w]):
            break
        if viol > settings.tol_feas and viol > 0.25 * prev_viol:
            rho = min(rho * settings.penalty_growth, settings.penalty_cap)
        lam, mu = lam_new, mu_new
        prev_viol = viol
        gtol = max(gtol * 0.1, floor)
    return NlpResult(
        z_star=z, objective_value=float(f), status=status, kkt_residual=float(kkt),
        max_constraint_violation=_violation(ce, ci), multipliers_eq=lam_out,
        multipliers_ineq=mu_out, iterations=it, excess_history=tuple(excess_hist), penalty=rho,
    )


def start_points(problem: NlpProblem, settings: SolverSettings) -> list[np.ndarray]:
    """Box midpoint followed by ``n_starts`` uniform draws (unbounded coordinates at 0)."""
    rng = np.random.default_rng(settings.rng_seed)
    lo, hi = problem.lo, problem.hi
    finite = np.isfinite(lo) & np.isfinite(hi)
    flo, fhi = np.where(finite, lo, 0.0), np.where(finite, hi, 0.0)
    mid = np.where(finite, 0.5 * (flo + fhi), np.clip(0.0, lo, hi))
    starts = [mid]
    for _ in range(settings.n_starts):
        u = rng.random(problem.n_vars)
        starts.append(np.where(finite, flo + (fhi - flo) * u, mid))
    return starts


def _rank(result: NlpResult, tol_feas: float):
    if result.converged:
        tier = 0
    elif result.max_constraint_violation <= tol_feas and result.status != DIVERGED:
        tier = 1
    else:
        tier = 2
    key = result.objective_value if tier < 2 else result.max_constraint_violation
    return (tier, key, result.start_index)


def multi_start_solve(problem: NlpProblem, settings: SolverSettings | None = None,
                      extra_starts: Sequence = ()) -> NlpResult:
    """Best of several local solves; ``extra_starts`` run after the sampled ones.

    Preference order: converged (lowest objective), then feasible but not
    converged, then least infeasible.
    """
    settings = settings or SolverSettings()
    starts = start_points(problem, settings) + [
        s if isinstance(s, WarmStart) else np.asarray(s, dtype=float) for s in extra_starts]

    def run(item):
        idx, z0 = item
        try:
            return replace(solve(problem, z0, settings), start_index=idx)
        except (InvalidStart, GradientFailure):
            return None

    workers = min(_accel.worker_count(), len(starts))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, enumerate(starts)))
    else:
        results = [run(item) for item in enumerate(starts)]
    results = [r for r in results if r is not None]
    if not results:
        raise InvalidStart("no start point produced a finite objective")
    return min(results, key=lambda r: _rank(r, settings.tol_feas))
