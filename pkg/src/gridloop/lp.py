"""Dense bounded-variable primal simplex.

Small linear programs (a few hundred variables) appear throughout the
package: economic dispatch, the scenario program and the relaxed thermal
schedule. They are solved here rather than through an external solver so
results, including duals, are deterministic and dependency free.

Problem form::

    minimize    c @ x
    subject to  A_ub @ x <= b_ub
                A_eq @ x == b_eq
                lo <= x <= hi          (either side may be infinite)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError, UnboundedError

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
_PIVOT_TOL = 1e-11


@dataclass
class LPResult:
    x: np.ndarray
    fun: float
    eq_duals: np.ndarray
    """Sensitivity of the optimum to each ``b_eq`` entry."""
    ub_duals: np.ndarray
    """Sensitivity to each ``b_ub`` entry (non-positive at an optimum)."""
    iterations: int


def solve_lp(
    c,
    A_ub=None,
    b_ub=None,
    A_eq=None,
    b_eq=None,
    bounds=None,
    *,
    max_iter: int = 100_000,
) -> LPResult:
    """Solve a linear program; raises InfeasibleError or UnboundedError."""
    c = np.asarray(c, dtype=float)
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    if A_ub.shape != (b_ub.size, n) or A_eq.shape != (b_eq.size, n):
        raise ValueError("constraint matrix shapes do not match")
    lo, hi = _bounds_arrays(bounds, n)

    # x = offset + M @ z with z >= 0 (and z <= zhi)
    cols, zhi, offset = [], [], np.zeros(n)
    for j in range(n):
        if np.isfinite(lo[j]):
            offset[j] = lo[j]
            cols.append((j, 1.0))
            zhi.append(hi[j] - lo[j])
        elif np.isfinite(hi[j]):
            offset[j] = hi[j]
            cols.append((j, -1.0))
            zhi.append(np.inf)
        else:
            cols.append((j, 1.0))
            zhi.append(np.inf)
            cols.append((j, -1.0))
            zhi.append(np.inf)
    if any(h < -FEAS_TOL for h in zhi):
        raise InfeasibleError("a variable has lower bound above upper bound", "bounds")
    nz = len(cols)
    M = np.zeros((n, nz))
    for k, (j, s) in enumerate(cols):
        M[j, k] = s

    m_ub, m_eq = b_ub.size, b_eq.size
    m = m_ub + m_eq
    A_rows = np.vstack([A_ub @ M, A_eq @ M]) if m else np.zeros((0, nz))
    b_rows = np.concatenate([b_ub - A_ub @ offset, b_eq - A_eq @ offset])
    sign = np.where(b_rows < 0, -1.0, 1.0)

    # columns: structural z | slacks for ub rows | artificials
    needs_art = [i for i in range(m) if i >= m_ub or sign[i] < 0]
    n_art = len(needs_art)
    N = nz + m_ub + n_art
    A = np.zeros((m, N))
    A[:, :nz] = A_rows
    A[np.arange(m_ub), nz + np.arange(m_ub)] = 1.0
    A *= sign[:, None]
    b = b_rows * sign
    basis = np.empty(m, dtype=int)
    unit_col = np.empty(m, dtype=int)
    for i in range(m_ub):
        basis[i] = nz + i
        unit_col[i] = nz + i
    for k, i in enumerate(needs_art):
        col = nz + m_ub + k
        A[i, col] = 1.0
        basis[i] = col
        unit_col[i] = col

    ub = np.concatenate([np.asarray(zhi, dtype=float), np.full(m_ub, np.inf), np.full(n_art, np.inf)])
    art = np.zeros(N, dtype=bool)
    art[nz + m_ub :] = True
    cost2 = np.concatenate([c @ M, np.zeros(m_ub + n_art)])

    state = _Tableau(A.copy(), b.copy(), basis, ub)
    iters = 0
    if n_art:
        cost1 = art.astype(float)
        iters += state.run(cost1, barred=np.zeros(N, dtype=bool), max_iter=max_iter)
        infeas = float(np.sum(state.values()[art]))
        if infeas > FEAS_TOL * max(1.0, float(np.max(np.abs(b), initial=0.0))) * 10:
            raise InfeasibleError(f"linear program infeasible (residual {infeas:.3g})", "constraints")
        state.drive_out(art)
        state.ub[art] = 0.0
    iters += state.run(cost2, barred=art, max_iter=max_iter)

    z, y = state.refine(A, b, cost2)
    x = offset + M @ z[:nz]
    duals = y * sign
    return LPResult(
        x=x,
        fun=float(c @ x),
        eq_duals=duals[m_ub:],
        ub_duals=duals[:m_ub],
        iterations=iters,
    )


def _bounds_arrays(bounds, n):
    if bounds is None:
        return np.zeros(n), np.full(n, np.inf)
    if isinstance(bounds, tuple) and len(bounds) == 2 and all(
        v is None or np.isscalar(v) for v in bounds
    ):
        bounds = [bounds] * n
    lo = np.array([(-np.inf if b[0] is None else b[0]) for b in bounds], dtype=float)
    hi = np.array([(np.inf if b[1] is None else b[1]) for b in bounds], dtype=float)
    if lo.size != n:
        raise ValueError("bounds length does not match c")
    return lo, hi


class _Tableau:
    def __init__(self, T, beta, basis, ub):
        self.T = T
        self.beta = beta
        self.basis = basis
        self.ub = ub
        N = T.shape[1]
        self.is_basic = np.zeros(N, dtype=bool)
        self.is_basic[basis] = True
        self.at_upper = np.zeros(N, dtype=bool)

    def values(self):
        v = np.where(self.at_upper, self.ub, 0.0)
        v[self.basis] = self.beta
        return v

    def run(self, cost, barred, max_iter):
        T, m = self.T, self.T.shape[0]
        d = cost - cost[self.basis] @ T
        bland = False
        degenerate = 0
        for it in range(max_iter):
            eligible = ~self.is_basic & ~barred
            improving = eligible & (
                (~self.at_upper & (d < -OPT_TOL)) | (self.at_upper & (d > OPT_TOL))
            )
            cand = np.flatnonzero(improving)
            if cand.size == 0:
                return it
            j = int(cand[0]) if bland else int(cand[np.argmax(np.abs(d[cand]))])
            s = -1.0 if self.at_upper[j] else 1.0
            delta = -s * T[:, j]
            t_best, r_best, to_upper = np.inf, -1, False
            if m:
                ubB = self.ub[self.basis]
                with np.errstate(divide="ignore", invalid="ignore"):
                    down = np.where(delta < -_PIVOT_TOL, self.beta / -delta, np.inf)
                    up = np.where(
                        (delta > _PIVOT_TOL) & np.isfinite(ubB), (ubB - self.beta) / delta, np.inf
                    )
                down = np.maximum(down, 0.0)
                up = np.maximum(up, 0.0)
                ratio = np.minimum(down, up)
                t_best = float(np.min(ratio))
                if np.isfinite(t_best):
                    ties = np.flatnonzero(ratio <= t_best + 1e-12)
                    if bland:
                        r_best = int(ties[np.argmin(self.basis[ties])])
                    else:
                        r_best = int(ties[np.argmax(np.abs(delta[ties]))])
                    to_upper = bool(up[r_best] < down[r_best])
            if self.ub[j] <= t_best:
                t = self.ub[j]
                if not np.isfinite(t):
                    raise UnboundedError("linear program is unbounded")
                self.beta += delta * t
                self.at_upper[j] = not self.at_upper[j]
                continue
            if not np.isfinite(t_best):
                raise UnboundedError("linear program is unbounded")
            t = t_best
            degenerate = degenerate + 1 if t < 1e-12 else 0
            if degenerate > 50:
                bland = True
            entering_value = (self.ub[j] if self.at_upper[j] else 0.0) + s * t
            self.beta += delta * t
            leaving = self.basis[r_best]
            self._pivot(r_best, j)
            self.beta[r_best] = entering_value
            self.is_basic[leaving] = False
            self.at_upper[leaving] = to_upper
            self.at_upper[j] = False
            d = d - d[j] * self.T[r_best]
            if it % 200 == 199:
                d = cost - cost[self.basis] @ self.T
        raise RuntimeError("simplex iteration limit reached")

    def _pivot(self, r, j):
        T = self.T
        T[r] /= T[r, j]
        col = T[:, j].copy()
        col[r] = 0.0
        rows = np.flatnonzero(col)
        if rows.size:
            T[rows] -= np.outer(col[rows], T[r])
        self.basis[r] = j
        self.is_basic[j] = True

    def drive_out(self, art):
        """Pivot zero-valued artificials out of the basis where possible."""
        for r in range(self.T.shape[0]):
            if not art[self.basis[r]]:
                continue
            row = np.abs(self.T[r]) * (~art) * (~self.is_basic)
            j = int(np.argmax(row)) if row.size else 0
            if row.size and row[j] > 1e-9:
                leaving = self.basis[r]
                value = self.ub[j] if self.at_upper[j] else 0.0
                self._pivot(r, j)
                self.beta[r] = value
                self.is_basic[leaving] = False
                self.at_upper[leaving] = False
                self.at_upper[j] = False

    def refine(self, A, b, cost):
        """Recompute basic values and duals from the original data."""
        x = self.values()
        B = A[:, self.basis]
        m = A.shape[0]
        if m == 0:
            return x, np.zeros(0)
        nonbasic = ~self.is_basic
        rhs = b - A[:, nonbasic] @ x[nonbasic]
        try:
            xb = np.linalg.solve(B, rhs)
            y = np.linalg.solve(B.T, cost[self.basis])
        except np.linalg.LinAlgError:
            raise RuntimeError("singular basis") from None
        xb = np.where(np.abs(xb) < 1e-13, 0.0, xb)
        x[self.basis] = xb
        return x, y
