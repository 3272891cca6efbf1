"""Linear programs ``min c x  s.t.  row_lo <= A x <= row_hi,  lb <= x <= ub``.

Two interchangeable routines: a dense bounded-variable primal simplex written
here, and an adapter over scipy's HiGHS ``linprog``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

OPTIMAL, INFEASIBLE, UNBOUNDED, ITERATION_LIMIT = "optimal", "infeasible", "unbounded", "iteration_limit"


@dataclass
class LPResult:
    status: str
    x: np.ndarray | None = None
    fun: float = np.inf
    iterations: int = 0


class BoundedSimplex:
    """Tableau simplex over equality form ``M v = 0`` with bounds on every column.

    Every constraint row gets a slack column ``s = A x`` carrying the row
    bounds, so the equality system is ``[A  -I] (x, s) = 0``.  Phase one adds
    one artificial per row.  Pricing is Dantzig's rule until ``10 * rows``
    pivots have been made, then Bland's rule, which cannot cycle.
    """

    def __init__(self, tol: float = 1e-9, max_iter: int = 50_000):
        self.tol = tol
        self.max_iter = max_iter

    def solve(self, c, a, row_lo, row_hi, lb, ub) -> LPResult:
        a = a.toarray() if sparse.issparse(a) else np.asarray(a, dtype=float)
        m, n = a.shape
        c = np.asarray(c, dtype=float)
        lb = np.asarray(lb, dtype=float)
        ub = np.asarray(ub, dtype=float)
        if np.any(lb > ub + self.tol):
            return LPResult(INFEASIBLE)
        row_lo = np.asarray(row_lo, dtype=float)
        row_hi = np.asarray(row_hi, dtype=float)
        if np.any(row_lo > row_hi + self.tol):
            return LPResult(INFEASIBLE)
        keep = np.isfinite(row_lo) | np.isfinite(row_hi)  # free rows constrain nothing
        a, row_lo, row_hi = a[keep], row_lo[keep], row_hi[keep]
        m = a.shape[0]
        if m == 0:
            x = np.where(c > 0, lb, np.where(c < 0, ub, np.where(np.isfinite(lb), lb, ub)))
            if not np.all(np.isfinite(x)):
                return LPResult(UNBOUNDED)
            return LPResult(OPTIMAL, x, float(c @ x))

        # columns: structural (n), slacks (m), artificials (m)
        lo = np.concatenate([lb, row_lo, np.zeros(m)])
        hi = np.concatenate([ub, row_hi, np.full(m, np.inf)])
        ncol = n + 2 * m
        value = np.where(np.isfinite(lo), lo, hi)
        if not np.all(np.isfinite(value[: n + m])):
            raise ValueError("every column needs at least one finite bound")
        value[n + m :] = 0.0
        residual = a @ value[:n] - value[n : n + m]
        sign = np.where(residual > 0, -1.0, 1.0)
        tab = np.zeros((m, ncol))
        tab[:, :n] = a
        tab[:, n : n + m] = -np.eye(m)
        tab[:, n + m :] = np.diag(sign)
        # basic artificials absorb the residual: sign * art = -residual
        value[n + m :] = np.abs(residual)
        basis = np.arange(n + m, n + 2 * m)
        # make the basis columns the identity
        tab = tab * sign[:, None]

        iters = 0
        phase1_cost = np.zeros(ncol)
        phase1_cost[n + m :] = 1.0
        status, iters = self._iterate(tab, basis, value, lo, hi, phase1_cost, iters, m)
        if status != OPTIMAL:
            return LPResult(status, iterations=iters)
        if value[n + m :].sum() > 1e-7 * max(1.0, np.abs(value[: n + m]).max(initial=0.0)):
            return LPResult(INFEASIBLE, iterations=iters)
        # freeze artificials at zero for phase two
        hi[n + m :] = 0.0
        value[n + m :] = np.clip(value[n + m :], 0.0, 0.0)
        cost = np.zeros(ncol)
        cost[:n] = c
        status, iters = self._iterate(tab, basis, value, lo, hi, cost, iters, m)
        if status != OPTIMAL:
            return LPResult(status, iterations=iters)
        x = value[:n].copy()
        return LPResult(OPTIMAL, x, float(c @ x), iters)

    def _iterate(self, tab, basis, value, lo, hi, cost, iters, m):
        tol = self.tol
        ncol = tab.shape[1]
        is_basic = np.zeros(ncol, dtype=bool)
        is_basic[basis] = True
        bland_after = iters + 10 * m
        while True:
            if iters >= self.max_iter:
                return ITERATION_LIMIT, iters
            duals = cost[basis] @ tab
            reduced = cost - duals
            at_lo = ~is_basic & (value <= lo + tol)
            at_hi = ~is_basic & (value >= hi - tol)
            fixed = hi - lo <= tol
            can_up = ~is_basic & ~fixed & ~at_hi & (reduced < -tol)
            can_up |= ~is_basic & ~fixed & at_lo & (reduced < -tol)
            can_down = ~is_basic & ~fixed & ~at_lo & (reduced > tol)
            candidates = np.flatnonzero(can_up | can_down)
            if candidates.size == 0:
                return OPTIMAL, iters
            if iters >= bland_after:
                enter = int(candidates[0])
            else:
                enter = int(candidates[np.argmax(np.abs(reduced[candidates]))])
            direction = 1.0 if can_up[enter] else -1.0

            # basic values move by -direction * column * t
            col = tab[:, enter]
            step = hi[enter] - lo[enter]
            leave_row, leave_to_hi = -1, False
            rates = -direction * col
            for i in np.flatnonzero(np.abs(rates) > tol):
                b = basis[i]
                if rates[i] > 0:
                    room = (hi[b] - value[b]) / rates[i]
                    to_hi = True
                else:
                    room = (lo[b] - value[b]) / rates[i]
                    to_hi = False
                room = max(room, 0.0)
                better = room < step - tol
                tie = np.isfinite(step) and abs(room - step) <= tol and leave_row >= 0 and b < basis[leave_row]
                if better or (tie and iters >= bland_after):
                    step, leave_row, leave_to_hi = room, i, to_hi
            if not np.isfinite(step):
                return UNBOUNDED, iters

            value[basis] += rates * step
            value[enter] += direction * step
            iters += 1
            if leave_row < 0:
                # bound flip, basis unchanged
                value[enter] = hi[enter] if direction > 0 else lo[enter]
                continue
            leaving = basis[leave_row]
            value[leaving] = hi[leaving] if leave_to_hi else lo[leaving]
            pivot = tab[leave_row, enter]
            tab[leave_row] /= pivot
            others = np.arange(tab.shape[0]) != leave_row
            tab[others] -= np.outer(tab[others, enter], tab[leave_row])
            basis[leave_row] = enter
            is_basic[leaving] = False
            is_basic[enter] = True


def solve_highs(c, a, row_lo, row_hi, lb, ub) -> LPResult:
    a = sparse.csr_matrix(a)
    row_lo, row_hi = np.asarray(row_lo, float), np.asarray(row_hi, float)
    eq = np.isfinite(row_lo) & np.isfinite(row_hi) & (row_lo == row_hi)
    up = ~eq & np.isfinite(row_hi)
    down = ~eq & np.isfinite(row_lo)
    a_ub = sparse.vstack([a[up], -a[down]]) if (up.any() or down.any()) else None
    b_ub = np.concatenate([row_hi[up], -row_lo[down]]) if a_ub is not None else None
    res = linprog(
        c,
        A_ub=a_ub,
        b_ub=b_ub,
        A_eq=a[eq] if eq.any() else None,
        b_eq=row_lo[eq] if eq.any() else None,
        bounds=np.column_stack([lb, ub]),
        method="highs",
    )
    if res.status == 0:
        return LPResult(OPTIMAL, res.x, float(res.fun), int(res.nit))
    if res.status == 2:
        return LPResult(INFEASIBLE)
    if res.status == 3:
        return LPResult(UNBOUNDED)
    return LPResult(ITERATION_LIMIT)


def solve_lp(c, a, row_lo, row_hi, lb, ub, method: str = "simplex") -> LPResult:
    if method == "simplex":
        return BoundedSimplex().solve(c, a, row_lo, row_hi, lb, ub)
    if method == "highs":
        return solve_highs(c, a, row_lo, row_hi, lb, ub)
    raise ValueError(f"unknown LP method {method!r}")
