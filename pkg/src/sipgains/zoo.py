"""Built-in models and ready-made problem instances.

Registry keys: ``toy1d``, ``toy2d`` and ``quadrotor``.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import InvalidInputError
from .model import (PolicyForm, ProblemSpec, SystemModel, UncertaintySpec,
                    terminal_bound, terminal_tracking)
from .sets import Ball, Box, empty_set

GRAVITY = 9.81
ARM = 0.1
HOVER_THRUST = 4.905  # per motor, m * g / 2 at m = 1


def _integrator_step(x, u, rho_f, w):
    return x + u + w


def _additive_measure(x, rho_h, v):
    return x + v


@lru_cache(maxsize=None)
def integrator_model(n: int) -> SystemModel:
    """``x+ = x + u + w``, ``y = x + v`` in ``n`` dimensions."""
    return SystemModel(
        name="toy1d" if n == 1 else "toy2d", n_x=n, n_u=n, n_y=n, n_w=n, n_v=n,
        n_rho_f=0, n_rho_h=0, step=_integrator_step, measure=_additive_measure,
        additive_measurement_noise=True,
    )


def toy1d_spec(a: float = 1.0, policy_kind: str | None = None) -> ProblemSpec:
    """Scalar family ``min_u max_{|w| <= a} (u + w)^2`` written as a one-step problem."""
    if policy_kind not in (None, "open_loop"):
        raise InvalidInputError("toy1d only supports the open_loop policy")
    return ProblemSpec(
        model=integrator_model(1),
        uncertainty=UncertaintySpec(w_set=Box([-a], [a]), v_set=Box([0.0], [0.0])),
        N=1, M=0,
        Y0=np.zeros((1, 1)), U0=np.zeros((0, 1)),
        cost=terminal_tracking([0], [0.0]),
        policy=PolicyForm(lags=0, gain_bounds=(0.0, 0.0), ff_bounds=(-10.0, 10.0)),
    )


def toy2d_spec(policy_kind: str | None = None) -> ProblemSpec:
    """Planar integrator with disk-bounded disturbance and noise.

    The history (``y0 = 0``, ``y1 = (1, 2)``, ``u0 = (1, 1)``) pins ``x1`` to
    the disk of radius 2 around ``(1, 2)``.  The design task drives
    ``x_{k+2}`` towards ``(2, 4)`` with a one-lag feedback while keeping
    its first coordinate below 5.
    """
    lags = 0 if policy_kind == "open_loop" else 1
    return ProblemSpec(
        model=integrator_model(2),
        uncertainty=UncertaintySpec(w_set=Ball([0.0, 0.0], 1.0), v_set=Ball([0.0, 0.0], 2.0)),
        N=2, M=1,
        Y0=np.array([[0.0, 0.0], [1.0, 2.0]]), U0=np.array([[1.0, 1.0]]),
        cost=terminal_tracking([0, 1], [2.0, 4.0]),
        path_constraints=(terminal_bound(0, 5.0),),
        policy=PolicyForm(lags=lags, gain_bounds=(-1.0, 1.0), ff_bounds=(-5.0, 5.0)),
    )


@lru_cache(maxsize=None)
def quadrotor_model(T_s: float = 0.1) -> SystemModel:
    """Euler-discretized planar quadrotor, state ``[r, r', s, s', psi, psi']``.

    ``rho_f = (m, I)``; measurements are ``(r, s, psi)`` plus additive noise.
    """
    T_s = float(T_s)
    if not T_s > 0.0:
        raise InvalidInputError("T_s must be positive")
    g, arm = GRAVITY, ARM

    def step(x, u, rho_f, w):
        out = np.empty_like(x)
        thrust = u[..., 0] + u[..., 1]
        mass = rho_f[..., 0]
        out[..., 0] = x[..., 0] + T_s * x[..., 1]
        out[..., 1] = x[..., 1] + T_s * np.sin(x[..., 4]) * thrust / mass
        out[..., 2] = x[..., 2] + T_s * x[..., 3]
        out[..., 3] = x[..., 3] + T_s * (np.cos(x[..., 4]) * thrust / mass - g)
        out[..., 4] = x[..., 4] + T_s * x[..., 5]
        out[..., 5] = x[..., 5] + T_s * arm * (u[..., 0] - u[..., 1]) / rho_f[..., 1]
        return out

    def measure(x, rho_h, v):
        out = np.empty_like(v)
        out[..., 0] = x[..., 0] + v[..., 0]
        out[..., 1] = x[..., 2] + v[..., 1]
        out[..., 2] = x[..., 4] + v[..., 2]
        return out

    return SystemModel(
        name="quadrotor", n_x=6, n_u=2, n_y=3, n_w=0, n_v=3, n_rho_f=2, n_rho_h=0,
        step=step, measure=measure, additive_measurement_noise=True, args={"T_s": T_s},
    )


QUADROTOR_POLICIES = {
    "open_loop": PolicyForm(lags=0, gain_bounds=(0.0, 0.0), ff_bounds=(-20.0, 20.0)),
    "one_step": PolicyForm(lags=1, gain_bounds=(-3.0, 3.0), ff_bounds=(-15.0, 15.0)),
    "two_step": PolicyForm(lags=2, gain_bounds=(-1.5, 1.5), ff_bounds=(-15.0, 15.0)),
}


def quadrotor_spec(policy_kind: str = "two_step", T_s: float = 0.1) -> ProblemSpec:
    if policy_kind is None:
        policy_kind = "two_step"
    if policy_kind not in QUADROTOR_POLICIES:
        raise InvalidInputError(f"unknown policy kind {policy_kind!r}")
    inf = np.inf
    return ProblemSpec(
        model=quadrotor_model(T_s),
        uncertainty=UncertaintySpec(
            rho_f_set=Box([0.9, 0.001], [1.1, 0.0015]),
            rho_h_set=empty_set(),
            w_set=empty_set(),
            v_set=Box([-0.1] * 3, [0.1] * 3),
        ),
        N=7, M=2,
        Y0=np.zeros((3, 3)),
        U0=np.full((2, 2), HOVER_THRUST),
        beta_box=Box([-inf, -0.05, -inf, -inf, -inf, -inf], [inf, 0.05, inf, inf, inf, inf]),
        cost=terminal_tracking([0, 2], [0.0, 2.0]),
        path_constraints=(terminal_bound(2, 3.5),),
        policy=QUADROTOR_POLICIES[policy_kind],
    )


MODELS = {
    "toy1d": lambda: integrator_model(1),
    "toy2d": lambda: integrator_model(2),
    "quadrotor": quadrotor_model,
}

SPECS = {
    "toy1d": lambda policy_kind=None, **kw: toy1d_spec(policy_kind=policy_kind, **kw),
    "toy2d": lambda policy_kind=None, **kw: toy2d_spec(policy_kind=policy_kind, **kw),
    "quadrotor": lambda policy_kind=None, **kw: quadrotor_spec(policy_kind or "two_step", **kw),
}

POLICY_KINDS = {
    "toy1d": ("open_loop",),
    "toy2d": ("open_loop", "one_step"),
    "quadrotor": tuple(QUADROTOR_POLICIES),
}


def get_model(name: str, **args) -> SystemModel:
    try:
        factory = MODELS[name]
    except KeyError:
        raise InvalidInputError(f"unknown model {name!r}; known: {sorted(MODELS)}") from None
    return factory(**args)


def get_spec(name: str, policy_kind: str | None = None, **model_args) -> ProblemSpec:
    try:
        factory = SPECS[name]
    except KeyError:
        raise InvalidInputError(f"unknown model {name!r}; known: {sorted(SPECS)}") from None
    return factory(policy_kind=policy_kind, **model_args)
