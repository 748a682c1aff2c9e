"""Packed uncertainty vectors and the adversarial problems built on them.

The adversary's decision vector is a packed :class:`~sipgains.model.Scenario`
``(x_init, rho_f, rho_h, W, V)``.  Future states are eliminated by rolling
the closed loop forward, and consistency with the stored measurements is
imposed as equality constraints.
"""
from __future__ import annotations

import numpy as np

from .model import PolicyParams, ProblemSpec, Scenario, simulate
from .nlp import NlpProblem


class AdversaryLayout:
    """Packing, bounds and consistency constraints of the uncertainty vector.

    With ``past_only`` the vector spans only the measured window k-M..k
    (used for feasible-set analysis).
    """

    def __init__(self, spec: ProblemSpec, past_only: bool = False, x_bounds=None):
        self.spec = spec
        m, unc = spec.model, spec.uncertainty
        self.T = spec.M if past_only else spec.T
        T = self.T
        self.sizes = [m.n_x, m.n_rho_f, m.n_rho_h, T * m.n_w, (T + 1) * m.n_v]
        self.n = sum(self.sizes)
        if spec.beta_box is not None:
            xlo, xhi = spec.beta_box.bounds()
        else:
            xlo, xhi = np.full(m.n_x, -np.inf), np.full(m.n_x, np.inf)
        if x_bounds is not None:
            xlo = np.maximum(xlo, x_bounds[0])
            xhi = np.minimum(xhi, x_bounds[1])
        rflo, rfhi = unc.rho_f_set.bounds()
        rhlo, rhhi = unc.rho_h_set.bounds()
        wlo, whi = unc.w_set.bounds()
        vlo, vhi = unc.v_set.bounds()
        self.lo = np.concatenate([xlo, rflo, rhlo, np.tile(wlo, T), np.tile(vlo, T + 1)])
        self.hi = np.concatenate([xhi, rfhi, rhhi, np.tile(whi, T), np.tile(vhi, T + 1)])
        self.n_eq = (spec.M + 1) * m.n_y
        self.n_ineq = (unc.rho_f_set.n_smooth + unc.rho_h_set.n_smooth
                       + T * unc.w_set.n_smooth + (T + 1) * unc.v_set.n_smooth)

    def unpack(self, Z):
        m = self.spec.model
        Z = np.atleast_2d(Z)
        B = Z.shape[0]
        parts = np.split(Z, np.cumsum(self.sizes)[:-1], axis=1)
        return (parts[0], parts[1], parts[2], parts[3].reshape(B, self.T, m.n_w),
                parts[4].reshape(B, self.T + 1, m.n_v))

    def pack(self, scenario: Scenario) -> np.ndarray:
        M = self.spec.M
        if self.T == self.spec.T:
            return scenario.to_vector()
        return np.concatenate([scenario.x_init, scenario.rho_f, scenario.rho_h,
                               scenario.W[:M].ravel(), scenario.V[:M + 1].ravel()])

    def scenario(self, z) -> Scenario:
        x0, rf, rh, W, V = self.unpack(np.asarray(z, dtype=float)[None, :])
        return Scenario(x0[0], rf[0], rh[0], W[0], V[0])

    def trajectories(self, Z, params: PolicyParams | None):
        """Roll out every packed row of ``Z`` under ``params`` (zeros when past-only)."""
        x0, rf, rh, W, V = self.unpack(Z)
        B = x0.shape[0]
        m = self.spec.model
        if self.T == self.spec.T:
            K = np.broadcast_to(params.K, (B,) + params.K.shape)
            ub = np.broadcast_to(params.u_bar, (B,) + params.u_bar.shape)
        else:
            K = np.zeros((B, 0, m.n_u, m.n_y))
            ub = np.zeros((B, 0, m.n_u))
        X, Y, U = simulate(self.spec, K, ub, x0, rf, rh, W, V)
        return (x0, rf, rh, W, V), (X, Y, U)

    def constraint_values(self, unpacked, Y):
        """Past-measurement equalities and smooth set inequalities per row."""
        spec, unc = self.spec, self.spec.uncertainty
        _, rf, rh, W, V = unpacked
        B = rf.shape[0]
        M = spec.M
        ce = (spec.Y0[None] - Y[:, :M + 1]).reshape(B, -1)
        parts = [unc.rho_f_set.smooth_constraints(rf), unc.rho_h_set.smooth_constraints(rh)]
        if self.T and unc.w_set.n_smooth:
            parts.append(unc.w_set.smooth_constraints(W).reshape(B, -1))
        if unc.v_set.n_smooth:
            parts.append(unc.v_set.smooth_constraints(V).reshape(B, -1))
        ci = np.concatenate([p.reshape(B, -1) for p in parts], axis=1)
        return ce, ci


def adversary_problem(layout: AdversaryLayout, params, score) -> NlpProblem:
    """Maximize ``score(unpacked, X, Y, U)`` over consistent uncertainty."""

    def batch_eval(Z):
        unpacked, (X, Y, U) = layout.trajectories(Z, params)
        ce, ci = layout.constraint_values(unpacked, Y)
        return -score(unpacked, X, Y, U), ce, ci

    return NlpProblem(n_vars=layout.n, lo=layout.lo, hi=layout.hi, batch_eval=batch_eval,
                      n_eq=layout.n_eq, n_ineq=layout.n_ineq)
