"""Batched closed-loop rollout kernels.

Two implementations of the same recursion:

* :func:`closed_loop_numpy` loops over time and vectorizes over the batch
  axis; model maps receive ``(B, n)`` arrays.
* :func:`make_numba_kernel` builds an ``njit`` kernel over time-major
  buffers; model maps again receive ``(B, n)`` slices and must compile
  under numba.

:func:`closed_loop` picks one according to :data:`sipgains._accel.USE_NUMBA`.

Array conventions (``T = M + N`` transitions, ``L`` lags)::

    x0    (B, n_x)         rho_f (B, n_rho_f)     rho_h (B, n_rho_h)
    W     (B, T, n_w)      V     (B, T + 1, n_v)
    U0    (M, n_u)         K     (B, L, n_u, n_y)  ubar (B, N, n_u)

Returns ``X (B, T+1, n_x)``, ``Y (B, T+1, n_y)``, ``U (B, T, n_u)``.
Non-finite values propagate; callers decide how to report divergence.
"""
from __future__ import annotations

import numpy as np

from . import _accel


def closed_loop_numpy(step, measure, x0, rho_f, rho_h, W, V, U0, K, ubar):
    B, n_x = x0.shape
    T = W.shape[1]
    M = U0.shape[0]
    L = K.shape[1]
    n_u = ubar.shape[2] if ubar.ndim == 3 else U0.shape[1]
    n_y = V.shape[2]
    X = np.empty((B, T + 1, n_x))
    Y = np.empty((B, T + 1, n_y))
    U = np.empty((B, T, n_u))
    X[:, 0] = x0
    for t in range(T + 1):
        Y[:, t] = measure(X[:, t], rho_h, V[:, t])
        if t == T:
            break
        if t < M:
            u = np.broadcast_to(U0[t], (B, n_u)).copy()
        else:
            u = ubar[:, t - M].copy()
            for lag in range(L):
                u += np.einsum("bij,bj->bi", K[:, lag], Y[:, t - lag])
        U[:, t] = u
        X[:, t + 1] = step(X[:, t], u, rho_f, W[:, t])
    return X, Y, U


def _closed_loop_time_major(step, measure, x0, rho_f, rho_h, W, V, U0, K, ubar):
    # same recursion with the feedback sum written as explicit loops; the
    # model maps still see whole (B, n) batch slices
    B, n_x = x0.shape
    T = W.shape[1]
    M = U0.shape[0]
    L = K.shape[1]
    n_u = ubar.shape[2]
    n_y = V.shape[2]
    Xt = np.empty((T + 1, B, n_x))
    Yt = np.empty((T + 1, B, n_y))
    Ut = np.empty((T, B, n_u))
    Wt = np.ascontiguousarray(W.transpose(1, 0, 2))
    Vt = np.ascontiguousarray(V.transpose(1, 0, 2))
    Xt[0] = x0
    for t in range(T + 1):
        Yt[t] = measure(Xt[t], rho_h, Vt[t])
        if t == T:
            break
        u = Ut[t]
        for b in range(B):
            if t < M:
                u[b] = U0[t]
            else:
                for i in range(n_u):
                    acc = ubar[b, t - M, i]
                    for lag in range(L):
                        for j in range(n_y):
                            acc += K[b, lag, i, j] * Yt[t - lag, b, j]
                    u[b, i] = acc
        Xt[t + 1] = step(Xt[t], u, rho_f, Wt[t])
    return (np.ascontiguousarray(Xt.transpose(1, 0, 2)), np.ascontiguousarray(Yt.transpose(1, 0, 2)),
            np.ascontiguousarray(Ut.transpose(1, 0, 2)))


def make_numba_kernel(step, measure):
    """Kernel specialized to one pair of jitted model maps.

    Closing over the maps avoids re-typing function arguments on every call.
    """
    body = _accel.njit(_closed_loop_time_major)

    def kernel(x0, rho_f, rho_h, W, V, U0, K, ubar):
        return body(step, measure, x0, rho_f, rho_h, W, V, U0, K, ubar)

    return _accel.njit(kernel)


def closed_loop(model, x0, rho_f, rho_h, W, V, U0, K, ubar, use_numba: bool | None = None):
    """Dispatch to the accelerated or numpy kernel for ``model``."""
    if use_numba is None:
        use_numba = _accel.USE_NUMBA
    # numba types read-only arrays separately; one writable layout keeps a
    # single compiled signature per model
    arrays = [np.require(a, dtype=float, requirements=("C", "W")) for a in (x0, rho_f, rho_h, W, V, U0, K, ubar)]
    if use_numba and _accel.HAVE_NUMBA:
        kernel = model.numba_kernel()
        if kernel is not None:
            return kernel(*arrays)
    return closed_loop_numpy(model.step, model.measure, *arrays)
