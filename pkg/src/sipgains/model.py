"""System, uncertainty, policy and problem types plus deterministic rollout.

Time indexing inside arrays is relative to the oldest stored step ``k - M``:
index ``0`` is ``k - M``, index ``M`` is the current step ``k`` and index
``M + N`` is the end of the prediction horizon.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _accel, kernels
from .errors import InconsistentScenario, InvalidInputError, RolloutDiverged
from .sets import BoundedSet, Box, empty_set


def _frozen(a, ndim=None) -> np.ndarray:
    a = np.array(a, dtype=float)
    if ndim is not None and a.ndim != ndim:
        raise InvalidInputError(f"expected {ndim}-D array, got shape {a.shape}")
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Explicit-update discrete-time model.

    ``step(x, u, rho_f, w)`` and ``measure(x, rho_h, v)`` must accept arrays
    with arbitrary leading batch axes (index the state as ``x[..., i]``).  If
    they are also numba-compatible the accelerated kernel is used.
    """

    name: str
    n_x: int
    n_u: int
    n_y: int
    n_w: int
    n_v: int
    n_rho_f: int
    n_rho_h: int
    step: Callable
    measure: Callable
    additive_measurement_noise: bool = True
    args: dict = field(default_factory=dict)

    def jitted(self):
        """Compiled ``(step, measure)`` pair, or ``None`` if numba rejects them."""
        cache = self.__dict__.get("_jit_cache")
        if cache is not None:
            return cache[0]
        pair = None
        if _accel.HAVE_NUMBA:
            try:
                s, m = _accel.njit(self.step), _accel.njit(self.measure)
                s(np.zeros((1, self.n_x)), np.zeros((1, self.n_u)), np.ones((1, self.n_rho_f)),
                  np.zeros((1, self.n_w)))
                m(np.zeros((1, self.n_x)), np.ones((1, self.n_rho_h)), np.zeros((1, self.n_v)))
                pair = (s, m)
            except Exception:  # numba typing errors have no common base class
                pair = None
        object.__setattr__(self, "_jit_cache", (pair,))
        return pair

    def numba_kernel(self):
        """Closed-loop rollout kernel compiled for this model, or ``None``."""
        cache = self.__dict__.get("_kernel_cache")
        if cache is not None:
            return cache[0]
        pair = self.jitted()
        kernel = None if pair is None else kernels.make_numba_kernel(*pair)
        object.__setattr__(self, "_kernel_cache", (kernel,))
        return kernel

    def __eq__(self, other):
        return (isinstance(other, SystemModel) and self.name == other.name
                and self.args == other.args)

    __hash__ = object.__hash__


@dataclass(frozen=True, eq=False)
class UncertaintySpec:
    rho_f_set: BoundedSet = field(default_factory=empty_set)
    rho_h_set: BoundedSet = field(default_factory=empty_set)
    w_set: BoundedSet = field(default_factory=empty_set)
    v_set: BoundedSet = field(default_factory=empty_set)

    def check(self, model: SystemModel) -> None:
        for label, s, n in (("rho_f", self.rho_f_set, model.n_rho_f),
                            ("rho_h", self.rho_h_set, model.n_rho_h),
                            ("w", self.w_set, model.n_w),
                            ("v", self.v_set, model.n_v)):
            if s.dim != n:
                raise InvalidInputError(f"{label} set has dimension {s.dim}, model expects {n}")

    def __eq__(self, other):
        return (isinstance(other, UncertaintySpec)
                and self.rho_f_set == other.rho_f_set and self.rho_h_set == other.rho_h_set
                and self.w_set == other.w_set and self.v_set == other.v_set)


@dataclass(frozen=True)
class PolicyForm:
    """Linear output feedback ``u = sum_i K_i y_{k-i+1} + u_bar_k`` with shared gains."""

    lags: int
    gain_bounds: tuple[float, float] = (-1.0, 1.0)
    ff_bounds: tuple[float, float] = (-10.0, 10.0)
    gains_shared: bool = True

    def __post_init__(self):
        if self.lags < 0:
            raise InvalidInputError("lags must be non-negative")
        object.__setattr__(self, "gain_bounds", tuple(float(b) for b in self.gain_bounds))
        object.__setattr__(self, "ff_bounds", tuple(float(b) for b in self.ff_bounds))
        for lo, hi in (self.gain_bounds, self.ff_bounds):
            if lo > hi:
                raise InvalidInputError("policy bounds require lo <= hi")
        if not self.gains_shared:
            raise InvalidInputError("only horizon-shared gains are supported")


@dataclass(frozen=True, eq=False)
class PolicyParams:
    K: np.ndarray      # (L, n_u, n_y)
    u_bar: np.ndarray  # (N, n_u)

    def __post_init__(self):
        object.__setattr__(self, "K", _frozen(self.K, 3))
        object.__setattr__(self, "u_bar", _frozen(self.u_bar, 2))

    @property
    def lags(self) -> int:
        return self.K.shape[0]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.K.ravel(), self.u_bar.ravel()])

    @classmethod
    def from_vector(cls, z, lags: int, n_u: int, n_y: int, N: int) -> "PolicyParams":
        z = np.asarray(z, dtype=float)
        nk = lags * n_u * n_y
        if z.size != nk + N * n_u:
            raise InvalidInputError("parameter vector has the wrong length")
        return cls(z[:nk].reshape(lags, n_u, n_y), z[nk:].reshape(N, n_u))

    @classmethod
    def zeros(cls, lags, n_u, n_y, N) -> "PolicyParams":
        return cls(np.zeros((lags, n_u, n_y)), np.zeros((N, n_u)))

    def __eq__(self, other):
        return (isinstance(other, PolicyParams) and np.array_equal(self.K, other.K)
                and np.array_equal(self.u_bar, other.u_bar))

    def within(self, policy: PolicyForm, tol: float = 0.0) -> bool:
        glo, ghi = policy.gain_bounds
        flo, fhi = policy.ff_bounds
        return bool(np.all(self.K >= glo - tol) and np.all(self.K <= ghi + tol)
                    and np.all(self.u_bar >= flo - tol) and np.all(self.u_bar <= fhi + tol))


# ---------------------------------------------------------------------------
# cost and constraint functions
#
# Each is called on future segments with leading batch axes:
#   X (..., N, n_x) covering k+1..k+N, Y (..., N, n_y), U (..., N, n_u),
#   W (..., N, n_w), V (..., N, n_v).

@dataclass(frozen=True)
class TerminalTracking:
    """Sum of squared deviations of selected terminal states from targets."""

    indices: tuple[int, ...]
    targets: tuple[float, ...]
    kind = "terminal_tracking"

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        object.__setattr__(self, "targets", tuple(float(t) for t in self.targets))
        if len(self.indices) != len(self.targets):
            raise InvalidInputError("indices and targets must have equal length")

    def __call__(self, X, Y, U, W, V):
        d = X[..., -1, list(self.indices)] - np.asarray(self.targets)
        return np.sum(d * d, axis=-1)

    def params(self) -> dict:
        return {"indices": self.indices, "targets": self.targets}


@dataclass(frozen=True)
class OutputTracking(TerminalTracking):
    """Squared deviation of the terminal measurement from reference outputs."""

    kind = "output_tracking"

    def __call__(self, X, Y, U, W, V):
        d = Y[..., -1, list(self.indices)] - np.asarray(self.targets)
        return np.sum(d * d, axis=-1)


@dataclass(frozen=True)
class TerminalBound:
    """``x_{index, k+N} - limit`` (satisfied when <= 0)."""

    index: int
    limit: float
    kind = "terminal_bound"

    def __post_init__(self):
        object.__setattr__(self, "index", int(self.index))
        object.__setattr__(self, "limit", float(self.limit))

    def __call__(self, X, Y, U, W, V):
        return X[..., -1, self.index] - self.limit

    def params(self) -> dict:
        return {"index": self.index, "limit": self.limit}


@dataclass(frozen=True)
class TerminalLowerBound(TerminalBound):
    """``limit - x_{index, k+N}`` (satisfied when <= 0)."""

    kind = "terminal_lower_bound"

    def __call__(self, X, Y, U, W, V):
        return self.limit - X[..., -1, self.index]


TRAJECTORY_FUNCTIONS = {
    cls.kind: cls for cls in (TerminalTracking, OutputTracking, TerminalBound, TerminalLowerBound)
}


def terminal_tracking(indices, targets) -> TerminalTracking:
    return TerminalTracking(tuple(indices), tuple(targets))


def terminal_bound(index, limit) -> TerminalBound:
    return TerminalBound(index, limit)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """One complete gain-design instance."""

    model: SystemModel
    uncertainty: UncertaintySpec
    N: int
    M: int
    Y0: np.ndarray
    U0: np.ndarray
    cost: Callable
    policy: PolicyForm
    path_constraints: tuple = ()
    beta_box: Box | None = None

    def __post_init__(self):
        m = self.model
        if self.N < 1 or self.M < 0:
            raise InvalidInputError("require N >= 1 and M >= 0")
        Y0 = _frozen(np.reshape(self.Y0, (-1, m.n_y)) if np.size(self.Y0) else np.zeros((0, m.n_y)))
        U0 = _frozen(np.reshape(self.U0, (-1, m.n_u)) if np.size(self.U0) else np.zeros((0, m.n_u)))
        if Y0.shape != (self.M + 1, m.n_y):
            raise InvalidInputError(f"Y0 must have shape {(self.M + 1, m.n_y)}, got {Y0.shape}")
        if U0.shape != (self.M, m.n_u):
            raise InvalidInputError(f"U0 must have shape {(self.M, m.n_u)}, got {U0.shape}")
        object.__setattr__(self, "Y0", Y0)
        object.__setattr__(self, "U0", U0)
        object.__setattr__(self, "path_constraints", tuple(self.path_constraints))
        self.uncertainty.check(m)
        if self.policy.lags > self.M:
            raise InvalidInputError("policy lags cannot exceed the stored memory M")
        if self.beta_box is not None and self.beta_box.dim != m.n_x:
            raise InvalidInputError("beta box must cover every state coordinate")

    @property
    def T(self) -> int:
        """Number of transitions from k-M to k+N."""
        return self.M + self.N

    @property
    def n_params(self) -> int:
        m = self.model
        return self.policy.lags * m.n_u * m.n_y + self.N * m.n_u

    @property
    def n_constraints(self) -> int:
        return len(self.path_constraints)

    def __eq__(self, other):
        return (isinstance(other, ProblemSpec) and self.model == other.model
                and self.uncertainty == other.uncertainty and self.N == other.N and self.M == other.M
                and np.array_equal(self.Y0, other.Y0) and np.array_equal(self.U0, other.U0)
                and self.cost == other.cost and self.policy == other.policy
                and self.path_constraints == other.path_constraints and self.beta_box == other.beta_box)

    __hash__ = object.__hash__

    def params_from_vector(self, z) -> PolicyParams:
        m = self.model
        return PolicyParams.from_vector(z, self.policy.lags, m.n_u, m.n_y, self.N)

    def replace(self, **changes) -> "ProblemSpec":
        from dataclasses import replace
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class Scenario:
    """One realization of every uncertainty over k-M..k+N."""

    x_init: np.ndarray
    rho_f: np.ndarray
    rho_h: np.ndarray
    W: np.ndarray   # (T, n_w)
    V: np.ndarray   # (T + 1, n_v)

    def __post_init__(self):
        for name in ("x_init", "rho_f", "rho_h"):
            object.__setattr__(self, name, _frozen(np.atleast_1d(getattr(self, name)), 1))
        object.__setattr__(self, "W", _frozen(self.W, 2))
        object.__setattr__(self, "V", _frozen(self.V, 2))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.x_init, self.rho_f, self.rho_h, self.W.ravel(), self.V.ravel()])

    @classmethod
    def from_vector(cls, spec: ProblemSpec, z, T: int | None = None) -> "Scenario":
        m = spec.model
        T = spec.T if T is None else T
        z = np.asarray(z, dtype=float)
        sizes = [m.n_x, m.n_rho_f, m.n_rho_h, T * m.n_w, (T + 1) * m.n_v]
        if z.size != sum(sizes):
            raise InvalidInputError("scenario vector has the wrong length")
        parts = np.split(z, np.cumsum(sizes)[:-1])
        return cls(parts[0], parts[1], parts[2], parts[3].reshape(T, m.n_w),
                   parts[4].reshape(T + 1, m.n_v))

    def __eq__(self, other):
        return isinstance(other, Scenario) and np.array_equal(self.to_vector(), other.to_vector())


@dataclass(frozen=True, eq=False)
class TrajectoryBundle:
    X: np.ndarray  # (T + 1, n_x)
    Y: np.ndarray  # (T + 1, n_y)
    U: np.ndarray  # (T, n_u)

    def __eq__(self, other):
        return (isinstance(other, TrajectoryBundle) and np.array_equal(self.X, other.X)
                and np.array_equal(self.Y, other.Y) and np.array_equal(self.U, other.U))


# ---------------------------------------------------------------------------
# operations

def policy_eval(policy: PolicyForm, params: PolicyParams, window: Sequence, step_index: int) -> np.ndarray:
    """Control input at future step ``step_index``; ``window`` is newest first."""
    L = policy.lags
    if not 0 <= step_index < params.u_bar.shape[0]:
        raise InvalidInputError("step_index outside the horizon")
    if len(window) < L:
        raise InvalidInputError(f"window needs {L} measurements")
    u = params.u_bar[step_index].copy()
    n_y = params.K.shape[2] if L else None
    for i in range(L):
        y = np.asarray(window[i], dtype=float)
        if y.shape != (n_y,):
            raise InvalidInputError(f"measurement {i} has shape {y.shape}, expected {(n_y,)}")
        u = u + params.K[i] @ y
    return u


def simulate(spec: ProblemSpec, K, ubar, x0, rho_f, rho_h, W, V, use_numba=None):
    """Batched closed loop; returns ``(X, Y, U)`` with a leading batch axis.

    Horizon length follows ``ubar.shape[1]``; pass an empty ``ubar`` with
    ``W``/``V`` truncated to the past window to roll out history only.
    """
    return kernels.closed_loop(spec.model, x0, rho_f, rho_h, W, V, spec.U0, K, ubar, use_numba)


def _scenario_arrays(scenarios: Sequence[Scenario]):
    return (np.stack([s.x_init for s in scenarios]), np.stack([s.rho_f for s in scenarios]),
            np.stack([s.rho_h for s in scenarios]), np.stack([s.W for s in scenarios]),
            np.stack([s.V for s in scenarios]))


def _check_scenario_shape(spec: ProblemSpec, s: Scenario, T: int) -> None:
    m = spec.model
    expected = {"x_init": (m.n_x,), "rho_f": (m.n_rho_f,), "rho_h": (m.n_rho_h,),
                "W": (T, m.n_w), "V": (T + 1, m.n_v)}
    for name, shape in expected.items():
        if getattr(s, name).shape != shape:
            raise InvalidInputError(f"scenario.{name} has shape {getattr(s, name).shape}, expected {shape}")


def rollout(spec: ProblemSpec, params: PolicyParams, scenario: Scenario) -> TrajectoryBundle:
    """Closed-loop trajectory over k-M..k+N for a single scenario."""
    _check_scenario_shape(spec, scenario, spec.T)
    if params.K.shape[0] != spec.policy.lags or params.u_bar.shape[0] != spec.N:
        raise InvalidInputError("policy parameters do not match the policy form")
    arrays = _scenario_arrays([scenario])
    X, Y, U = simulate(spec, params.K[None], params.u_bar[None], *arrays)
    bad = ~np.all(np.isfinite(X[0]), axis=1)
    if np.any(bad):
        raise RolloutDiverged(int(np.argmax(bad)))
    return TrajectoryBundle(X[0], Y[0], U[0])


def rollout_many(spec: ProblemSpec, params: PolicyParams, scenarios: Sequence[Scenario]):
    """Batched rollout of one policy over many scenarios (no divergence check)."""
    arrays = _scenario_arrays(scenarios)
    B = len(scenarios)
    K = np.broadcast_to(params.K, (B,) + params.K.shape)
    ub = np.broadcast_to(params.u_bar, (B,) + params.u_bar.shape)
    return simulate(spec, K, ub, *arrays)


def future_segments(spec: ProblemSpec, X, Y, U, W, V):
    """Slice full-span arrays (leading axes allowed) to k+1..k+N segments."""
    M = spec.M
    return X[..., M + 1:, :], Y[..., M + 1:, :], U[..., M:, :], W[..., M:, :], V[..., M + 1:, :]


def evaluate_cost(spec: ProblemSpec, X, Y, U, W, V):
    return spec.cost(*future_segments(spec, X, Y, U, W, V))


def evaluate_constraints(spec: ProblemSpec, X, Y, U, W, V) -> np.ndarray:
    """Constraint values stacked on the last axis."""
    seg = future_segments(spec, X, Y, U, W, V)
    if not spec.path_constraints:
        return np.zeros(np.shape(X)[:-2] + (0,))
    return np.stack([np.asarray(g(*seg), dtype=float) for g in spec.path_constraints], axis=-1)


def scenario_cost(spec: ProblemSpec, params: PolicyParams, scenario: Scenario) -> float:
    b = rollout(spec, params, scenario)
    return float(evaluate_cost(spec, b.X, b.Y, b.U, scenario.W, scenario.V))


def scenario_constraints(spec: ProblemSpec, params: PolicyParams, scenario: Scenario) -> np.ndarray:
    b = rollout(spec, params, scenario)
    return evaluate_constraints(spec, b.X, b.Y, b.U, scenario.W, scenario.V)


def dynamics_residual(model: SystemModel, X, U, rho_f, W) -> np.ndarray:
    X, U, W = (np.asarray(a, dtype=float) for a in (X, U, W))
    if X.ndim != 2 or U.ndim != 2 or W.ndim != 2:
        raise InvalidInputError("X, U, W must be 2-D time series")
    if X.shape[0] != U.shape[0] + 1 or U.shape[0] != W.shape[0]:
        raise InvalidInputError("X must be one longer than U and W")
    if X.shape[1] != model.n_x or U.shape[1] != model.n_u or W.shape[1] != model.n_w:
        raise InvalidInputError("series dimensions do not match the model")
    rho = np.broadcast_to(np.asarray(rho_f, dtype=float), (U.shape[0], model.n_rho_f))
    return X[1:] - model.step(X[:-1], U, rho, W)


def measurement_residual(model: SystemModel, X, rho_h, V, Y) -> np.ndarray:
    X, V, Y = (np.asarray(a, dtype=float) for a in (X, V, Y))
    if X.ndim != 2 or V.ndim != 2 or Y.ndim != 2:
        raise InvalidInputError("X, V, Y must be 2-D time series")
    if not X.shape[0] == V.shape[0] == Y.shape[0]:
        raise InvalidInputError("X, V and Y must have equal length")
    if X.shape[1] != model.n_x or V.shape[1] != model.n_v or Y.shape[1] != model.n_y:
        raise InvalidInputError("series dimensions do not match the model")
    rho = np.broadcast_to(np.asarray(rho_h, dtype=float), (X.shape[0], model.n_rho_h))
    return Y - model.measure(X, rho, V)


def past_states(spec: ProblemSpec, scenario: Scenario) -> np.ndarray:
    """States k-M..k implied by the scenario under the stored inputs ``U0``."""
    m, M = spec.model, spec.M
    X, _, _ = simulate(spec, np.zeros((1, 0, m.n_u, m.n_y)), np.zeros((1, 0, m.n_u)),
                       scenario.x_init[None], scenario.rho_f[None], scenario.rho_h[None],
                       scenario.W[None, :M], scenario.V[None, :M + 1])
    return X[0]


def check_scenario(spec: ProblemSpec, scenario: Scenario, tol: float) -> None:
    """Raise :class:`InconsistentScenario` unless memberships and history agree to ``tol``."""
    _check_scenario_shape(spec, scenario, scenario.W.shape[0])
    unc = spec.uncertainty
    problems = []
    if not unc.rho_f_set.contains(scenario.rho_f, tol):
        problems.append("rho_f outside its set")
    if not unc.rho_h_set.contains(scenario.rho_h, tol):
        problems.append("rho_h outside its set")
    if scenario.W.shape[0] and not np.all(unc.w_set.contains(scenario.W, tol)):
        problems.append("w outside its set")
    if not np.all(unc.v_set.contains(scenario.V, tol)):
        problems.append("v outside its set")
    if spec.beta_box is not None and not spec.beta_box.contains(scenario.x_init, tol):
        problems.append("x_init outside the beta box")
    X = past_states(spec, scenario)
    M = spec.M
    res = measurement_residual(spec.model, X, scenario.rho_h, scenario.V[:M + 1], spec.Y0)
    if np.max(np.abs(res), initial=0.0) > tol:
        problems.append(f"past measurements inconsistent (max residual {np.max(np.abs(res)):.3g})")
    if problems:
        raise InconsistentScenario("; ".join(problems))
