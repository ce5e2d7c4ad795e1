"""Bounded-variable primal simplex on a dense tableau.

Solves ``min c @ x`` subject to ``A @ x = b`` and ``lb <= x <= ub`` with a
two-phase method. Nonbasic variables sit at one of their bounds, so every
returned point is a vertex and has at most ``A.shape[0]`` basic entries.
"""
import numpy as np

from kqbatch._accel import backend

PIVOT_TOL = 1e-9
COST_TOL = 1e-10
FEAS_TOL = 1e-8
STALL_LIMIT = 50  # consecutive degenerate pivots before "auto" falls back to Bland
RULES = ("auto", "bland", "dantzig")


class LPError(RuntimeError):
    """The simplex solver failed (infeasible, unbounded or out of iterations)."""


class _Tableau:
    def __init__(self, A, b, lb, ub):
        m, nv = A.shape
        self.m, self.nv = m, nv
        self.lb = np.concatenate([lb, np.zeros(m)])
        self.ub = np.concatenate([ub, np.full(m, np.inf)])
        x0 = np.where(np.isfinite(lb), lb, ub)
        if np.any(~np.isfinite(x0)):
            raise LPError("free variables are not supported")
        rho = b - A @ x0
        sign = np.where(rho < 0, -1.0, 1.0)
        # rows: m constraints, phase-I costs, phase-II costs
        T = np.zeros((m + 2, nv + m))
        T[:m, :nv] = A * sign[:, None]
        T[:m, nv:] = np.eye(m)
        T[m, :nv] = -T[:m, :nv].sum(axis=0)
        self.T = np.ascontiguousarray(T)
        self.basis = np.arange(nv, nv + m)
        self.xB = np.abs(rho)
        self.at_upper = np.zeros(nv + m, dtype=bool)
        self.at_upper[:nv] = ~np.isfinite(lb)
        self.blocked = np.zeros(nv + m, dtype=bool)
        self.is_basic = np.zeros(nv + m, dtype=bool)
        self.is_basic[self.basis] = True
        self.A, self.b = A, b
        self.iterations = 0
        self.stall = 0

    def nonbasic_values(self):
        return np.where(self.at_upper, self.ub, self.lb)

    def values(self):
        x = self.nonbasic_values()
        x[self.basis] = self.xB
        return x

    def set_costs(self, c):
        row = self.m + 1
        self.T[row] = c
        cB = c[self.basis]
        self.T[row] -= cB @ self.T[: self.m]

    def _entering(self, row, rule):
        d = self.T[row]
        up = ~self.at_upper & (d < -COST_TOL)
        down = self.at_upper & (d > COST_TOL)
        eligible = (up | down) & ~self.is_basic & ~self.blocked
        idx = np.flatnonzero(eligible)
        if idx.size == 0:
            return -1
        if rule == "bland":
            return int(idx[0])
        return int(idx[np.argmax(np.abs(d[idx]))])

    def _ratio(self, j, delta):
        col = self.T[: self.m, j] * delta
        lbB, ubB = self.lb[self.basis], self.ub[self.basis]
        theta = np.full(self.m, np.inf)
        dec = col > PIVOT_TOL
        inc = (col < -PIVOT_TOL) & np.isfinite(ubB)
        theta[dec] = np.maximum(self.xB[dec] - lbB[dec], 0.0) / col[dec]
        theta[inc] = np.maximum(ubB[inc] - self.xB[inc], 0.0) / -col[inc]
        best = theta.min() if self.m else np.inf
        if not np.isfinite(best):
            return -1, np.inf, col
        ties = np.flatnonzero(theta <= best + 1e-12 * max(1.0, best))
        # Bland: smallest variable index among tied leaving candidates
        r = int(ties[np.argmin(self.basis[ties])])
        return r, best, col

    def step(self, row, rule):
        if rule == "auto":
            rule = "bland" if self.stall >= STALL_LIMIT else "dantzig"
        j = self._entering(row, rule)
        if j < 0:
            return False
        delta = -1.0 if self.at_upper[j] else 1.0
        r, theta, col = self._ratio(j, delta)
        self.stall = self.stall + 1 if theta == 0.0 else 0
        span = self.ub[j] - self.lb[j]
        if span <= theta:
            if not np.isfinite(span):
                raise LPError("LP is unbounded")
            self.xB -= span * col
            self.at_upper[j] = not self.at_upper[j]
            self.iterations += 1
            return True
        enter_val = (self.ub[j] if self.at_upper[j] else self.lb[j]) + delta * theta
        self.xB -= theta * col
        leaving = self.basis[r]
        self.at_upper[leaving] = col[r] < 0
        self.is_basic[leaving] = False
        self.xB[r] = enter_val
        self.basis[r] = j
        self.is_basic[j] = True
        self.at_upper[j] = False
        backend().pivot(self.T, r, j)
        self.iterations += 1
        return True

    def run(self, row, rule, max_iter):
        while self.step(row, rule):
            if self.iterations > max_iter:
                raise LPError(f"simplex exceeded {max_iter} iterations")

    def drive_out_artificials(self):
        nv = self.nv
        for r in range(self.m):
            if self.basis[r] < nv:
                continue
            row = self.T[r, :nv]
            cand = np.flatnonzero((np.abs(row) > PIVOT_TOL) & ~self.is_basic[:nv])
            if cand.size == 0:
                continue  # redundant row; the artificial stays basic at zero
            j = int(cand[0])
            leaving = self.basis[r]
            self.is_basic[leaving] = False
            self.at_upper[leaving] = False
            self.xB[r] = self.ub[j] if self.at_upper[j] else self.lb[j]
            self.basis[r] = j
            self.is_basic[j] = True
            self.at_upper[j] = False
            backend().pivot(self.T, r, j)

    def refine(self):
        """Recompute basic values from the original system to shed drift."""
        nv = self.nv
        x = self.nonbasic_values()[:nv]
        struct = self.basis < nv
        x[self.basis[struct]] = 0.0
        rhs = self.b - self.A @ x
        B = np.zeros((self.m, self.m))
        B[:, struct] = self.A[:, self.basis[struct]]
        art = np.flatnonzero(~struct)
        B[self.basis[art] - nv, art] = 1.0
        sol, *_ = np.linalg.lstsq(B, rhs, rcond=None)
        x[self.basis[struct]] = sol[struct]
        return x


def simplex(c, A, b, lb, ub, rule="auto", max_iter=None):
    """Minimise ``c @ x`` over ``{A x = b, lb <= x <= ub}``.

    Parameters
    ----------
    rule : {"auto", "bland", "dantzig"}
        Entering-variable choice. Bland's smallest-index rule cannot cycle
        but is slow; ``"auto"`` prices by Dantzig's rule and switches to
        Bland's while the objective is stalled on a degenerate vertex.

    Returns
    -------
    x : ndarray
        Vertex solution.
    info : dict
        ``iterations``, ``basis`` (structural indices) and ``objective``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    if rule not in RULES:
        raise ValueError(f"unknown pivot rule {rule!r}; expected one of {RULES}")
    m, nv = A.shape
    if max_iter is None:
        max_iter = 50 * (m + nv) + 1000
    tab = _Tableau(A, b, lb, ub)
    tab.run(tab.m, rule, max_iter)
    infeas = tab.xB[tab.basis >= nv].sum()
    if infeas > FEAS_TOL * max(1.0, np.abs(b).max(initial=0.0)):
        raise LPError(f"LP infeasible (phase-I residual {infeas:.3e})")
    tab.drive_out_artificials()
    tab.blocked[nv:] = True
    tab.ub[nv:] = 0.0
    tab.set_costs(np.concatenate([c, np.zeros(m)]))
    tab.run(m + 1, rule, max_iter)
    x = tab.refine()
    x = np.clip(x, lb, ub)
    basis = np.sort(tab.basis[tab.basis < nv])
    return x, {"iterations": tab.iterations, "basis": basis, "objective": float(c @ x)}
