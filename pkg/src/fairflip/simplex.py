"""Dense bounded-variable primal simplex.

Solves ``min c.x  s.t.  A x <= b,  0 <= x <= upper`` for problems with few
rows and many columns (the flipping LP has ``2K`` rows and one column per
validation instance). The basis inverse is ``m x m`` and refactored every
iteration; bound flips of the entering variable are handled without pivoting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LPInfeasible(Exception):
    pass


@dataclass
class SimplexResult:
    x: np.ndarray
    objective: float
    duals: np.ndarray  # multipliers y of A x <= b, y <= 0 at optimum
    reduced_costs: np.ndarray
    iterations: int


def solve_bounded(c, A, b, upper, *, tol=1e-10, max_iter=None) -> SimplexResult:
    c = np.asarray(c, dtype=np.float64)
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    b = np.asarray(b, dtype=np.float64)
    upper = np.broadcast_to(np.asarray(upper, dtype=np.float64), c.shape).copy()
    m, n = A.shape
    if max_iter is None:
        max_iter = 50 * (n + m) + 1000

    # columns: structurals | slacks | artificials (one per row with b < 0)
    neg = np.flatnonzero(b < 0)
    sign = np.ones(m)
    sign[neg] = -1.0
    A_ext = np.hstack([A * sign[:, None], np.diag(sign), np.zeros((m, neg.size))])
    for j, r in enumerate(neg):
        A_ext[r, n + m + j] = 1.0
    rhs = b * sign
    ub = np.concatenate([upper, np.full(m, np.inf), np.full(neg.size, np.inf)])
    basis = np.array([n + m + list(neg).index(r) if r in neg else n + r for r in range(m)])
    at_upper = np.zeros(A_ext.shape[1], dtype=bool)
    total = A_ext.shape[1]

    it = 0
    if neg.size:
        cost1 = np.zeros(total)
        cost1[n + m :] = 1.0
        basis, at_upper, k = _iterate(cost1, A_ext, rhs, ub, basis, at_upper, tol, max_iter)
        it += k
        xb = _basic_values(A_ext, rhs, ub, basis, at_upper)
        phase1 = float(cost1[basis] @ xb)
        scale = max(1.0, float(np.abs(rhs).max()))
        if phase1 > tol * scale * 10:
            raise LPInfeasible(f"no feasible point (phase-1 residual {phase1:.3g})")
        # pin artificials at zero for phase 2
        ub[n + m :] = 0.0

    cost2 = np.concatenate([c, np.zeros(total - n)])
    basis, at_upper, k = _iterate(cost2, A_ext, rhs, ub, basis, at_upper, tol, max_iter)
    it += k
    xb = _basic_values(A_ext, rhs, ub, basis, at_upper)
    x_full = np.where(at_upper, ub, 0.0)
    x_full[basis] = xb
    x_full = np.where(np.isfinite(x_full), x_full, 0.0)
    B = A_ext[:, basis]
    y_ext = np.linalg.solve(B.T, cost2[basis])
    x = np.clip(x_full[:n], 0.0, upper)
    return SimplexResult(
        x=x,
        objective=float(c @ x),
        duals=y_ext * sign,
        reduced_costs=c - (y_ext * sign) @ A,
        iterations=it,
    )


def _basic_values(A, rhs, ub, basis, at_upper):
    fixed = np.where(at_upper, ub, 0.0)
    fixed[basis] = 0.0
    fixed = np.where(np.isfinite(fixed), fixed, 0.0)
    return np.linalg.solve(A[:, basis], rhs - A @ fixed)


def _iterate(cost, A, rhs, ub, basis, at_upper, tol, max_iter):
    m, total = A.shape
    is_basic = np.zeros(total, dtype=bool)
    is_basic[basis] = True
    degenerate_run = 0
    for k in range(max_iter):
        B = A[:, basis]
        xb = _basic_values(A, rhs, ub, basis, at_upper)
        y = np.linalg.solve(B.T, cost[basis])
        d = cost - y @ A
        movable = ~is_basic & (ub > 0)
        improve = movable & np.where(at_upper, d > tol, d < -tol)
        cand = np.flatnonzero(improve)
        if cand.size == 0:
            return basis, at_upper, k
        # Dantzig pricing, falling back to Bland's rule while stalled
        j = cand[0] if degenerate_run > 50 else cand[np.argmax(np.abs(d[cand]))]
        direction = -1.0 if at_upper[j] else 1.0
        alpha = np.linalg.solve(B, A[:, j])
        # x_B(theta) = xb - direction * theta * alpha
        rate = direction * alpha
        theta = ub[j]
        leave, leave_to_upper = -1, False
        for i in range(m):
            if rate[i] > tol:
                t = max(xb[i], 0.0) / rate[i]
                to_upper = False
            elif rate[i] < -tol and np.isfinite(ub[basis[i]]):
                t = max(ub[basis[i]] - xb[i], 0.0) / -rate[i]
                to_upper = True
            else:
                continue
            if t < theta or (t == theta and leave >= 0 and basis[i] < basis[leave]):
                theta, leave, leave_to_upper = t, i, to_upper
        if not np.isfinite(theta):
            raise ValueError("LP is unbounded")
        degenerate_run = degenerate_run + 1 if theta <= tol else 0
        if leave < 0:
            at_upper[j] = not at_upper[j]
            continue
        out = basis[leave]
        is_basic[out] = False
        at_upper[out] = leave_to_upper
        basis = basis.copy()
        basis[leave] = j
        is_basic[j] = True
        at_upper[j] = False
    raise RuntimeError(f"simplex did not converge in {max_iter} iterations")
