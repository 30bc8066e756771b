"""Dense bounded-variable simplex with Bland's rule.

Solves ``min c @ x  s.t.  A @ x = b,  lo <= x <= hi`` where every lower bound
is finite and upper bounds may be ``inf``.  Phase 1 drives a set of signed
artificial variables to zero; phase 2 optimizes the real objective with the
artificials pinned to ``[0, 0]``.  Problems here are at most a few hundred
rows, so a full tableau is the simplest robust choice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LPError(RuntimeError):
    pass


@dataclass
class LPResult:
    status: str  # "optimal" | "infeasible"
    x: np.ndarray | None
    objective: float
    iterations: int


_AT_LOWER, _AT_UPPER, _BASIC = 0, 1, 2


def _simplex(T, xB, basis, state, x, lo, hi, cost, tol, max_iter):
    """Iterate on tableau ``T = B^-1 A`` in place until optimal. Returns iteration count."""
    m, ncol = T.shape
    it = 0
    while True:
        it += 1
        if it > max_iter:
            raise LPError("simplex iteration limit reached")
        d = cost - cost[basis] @ T
        entering = -1
        for j in range(ncol):
            s = state[j]
            if s == _BASIC or hi[j] - lo[j] <= tol:
                continue
            if (s == _AT_LOWER and d[j] < -tol) or (s == _AT_UPPER and d[j] > tol):
                entering = j
                break
        if entering < 0:
            return it
        j = entering
        direction = 1.0 if state[j] == _AT_LOWER else -1.0
        delta = -direction * T[:, j]  # change in basic values per unit step

        step = hi[j] - lo[j]
        leave_row, leave_var, leave_to = -1, -1, _AT_LOWER
        for i in range(m):
            bi = basis[i]
            if delta[i] < -tol:
                t = (xB[i] - lo[bi]) / -delta[i]
                to = _AT_LOWER
            elif delta[i] > tol and np.isfinite(hi[bi]):
                t = (hi[bi] - xB[i]) / delta[i]
                to = _AT_UPPER
            else:
                continue
            t = max(t, 0.0)
            if t < step - tol or (abs(t - step) <= tol and leave_row >= 0 and bi < leave_var):
                step, leave_row, leave_var, leave_to = t, i, bi, to
        if not np.isfinite(step):
            raise LPError("problem is unbounded")

        xB += step * delta
        x[j] += direction * step
        if leave_row < 0:  # bound flip, basis unchanged
            state[j] = _AT_UPPER if state[j] == _AT_LOWER else _AT_LOWER
            continue
        r = leave_row
        state[leave_var] = leave_to
        x[leave_var] = lo[leave_var] if leave_to == _AT_LOWER else hi[leave_var]
        piv = T[r, j]
        T[r] /= piv
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        xB[r] = x[j]
        basis[r] = j
        state[j] = _BASIC


def solve_lp(c, A_eq, b_eq, lo, hi, tol: float = 1e-9, max_iter: int = 50_000) -> LPResult:
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A_eq, dtype=float))
    b = np.asarray(b_eq, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    m, n = A.shape
    if not np.all(np.isfinite(lo)):
        raise LPError("all lower bounds must be finite")
    if np.any(lo > hi + tol):
        return LPResult("infeasible", None, np.inf, 0)

    # scale rows so tolerances are relative to row magnitude
    scale = np.maximum(np.abs(A).max(axis=1, initial=0.0), 1.0)
    A = A / scale[:, None]
    b = b / scale

    x = lo.copy()
    resid = b - A @ x
    sign = np.where(resid >= 0, 1.0, -1.0)
    T = np.hstack([A * sign[:, None], np.eye(m)])  # B = diag(sign) -> B^-1 A
    lo_all = np.concatenate([lo, np.zeros(m)])
    hi_all = np.concatenate([hi, np.full(m, np.inf)])
    x_all = np.concatenate([x, np.abs(resid)])
    basis = np.arange(n, n + m)
    state = np.full(n + m, _AT_LOWER)
    state[basis] = _BASIC
    xB = x_all[basis].copy()

    cost1 = np.concatenate([np.zeros(n), np.ones(m)])
    iters = _simplex(T, xB, basis, state, x_all, lo_all, hi_all, cost1, tol, max_iter)
    x_all[basis] = xB
    infeas = float(x_all[n:].sum())
    if infeas > 1e-7 * max(1.0, float(np.abs(b).max(initial=0.0))):
        return LPResult("infeasible", None, np.inf, iters)

    hi_all[n:] = 0.0  # artificials pinned at zero from here on
    x_all[n:] = np.where(state[n:] == _BASIC, x_all[n:], 0.0)
    cost2 = np.concatenate([c, np.zeros(m)])
    iters += _simplex(T, xB, basis, state, x_all, lo_all, hi_all, cost2, tol, max_iter)
    x_all[basis] = xB
    sol = np.clip(x_all[:n], lo, hi)
    return LPResult("optimal", sol, float(c @ sol), iters)
