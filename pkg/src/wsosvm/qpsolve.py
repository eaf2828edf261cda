"""Dense convex QP solver for the WSO-SVM dual.

Solves

    minimize    1/2 g'Qg - lin'g
    subject to  eq'g = 0,  ineq'g >= 0,  lower <= g <= upper

with a primal active-set method. The working set holds variables pinned at a
bound plus, when active, the inequality row; it is kept linearly independent
together with the equality row so that multipliers are unique. Steps are
computed in the null space of the working equalities; a singular reduced
Hessian (duplicated samples make Q singular by design) is handled by moving
along zero-curvature descent directions until a bound blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class QPError(RuntimeError):
    pass


class InfeasibleError(QPError):
    pass


class NonConvergenceError(QPError):
    """Raised when the iteration budget is exhausted; carries the best iterate."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


@dataclass
class QPInstance:
    Q: np.ndarray
    lin: np.ndarray
    eq: np.ndarray | None
    ineq: np.ndarray | None
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=np.float64))
        n = self.Q.shape[0]
        self.lin = np.asarray(self.lin, dtype=np.float64).reshape(n)
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=np.float64), (n,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=np.float64), (n,)).copy()
        if self.eq is not None:
            self.eq = np.asarray(self.eq, dtype=np.float64).reshape(n)
        if self.ineq is not None:
            self.ineq = np.asarray(self.ineq, dtype=np.float64).reshape(n)
        if self.Q.shape != (n, n):
            raise ValueError(f"Q must be square, got {self.Q.shape}")
        if np.max(np.abs(self.Q - self.Q.T), initial=0.0) > 1e-10 * max(1.0, np.abs(self.Q).max(initial=0.0)):
            raise ValueError("Q is not symmetric")
        if np.any(self.lower > self.upper):
            raise InfeasibleError("box has lower > upper")

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    def objective(self, g) -> float:
        g = np.asarray(g, dtype=np.float64)
        return float(0.5 * g @ self.Q @ g - self.lin @ g)


@dataclass
class KKTReport:
    stationarity_residual: float
    primal_feas_residual: float
    complementarity_residual: float
    dual_feas_residual: float = 0.0
    iterations: int = 0

    @property
    def max_residual(self) -> float:
        return max(self.stationarity_residual, self.primal_feas_residual,
                   self.complementarity_residual, self.dual_feas_residual)


@dataclass
class Multipliers:
    eq: float
    ineq: float
    lower: np.ndarray
    upper: np.ndarray


@dataclass
class DualSolution:
    gamma: np.ndarray
    objective: float
    mu: float
    lagrange_eq: float
    lagrange_ineq: float
    multipliers: Multipliers
    kkt: KKTReport
    history: list[float] = field(default_factory=list)


def kkt_residuals(qp: QPInstance, gamma, multipliers: Multipliers, iterations: int = 0) -> KKTReport:
    """Residuals of the first-order system at ``gamma`` with the given multipliers.

    Stationarity: ||Qg - lin + eq*l_eq - ineq*l_ineq - l_lower + l_upper||_inf.
    Feasibility: worst box, equality or inequality violation.
    Complementarity: sum of |multiplier * slack| products.
    Dual feasibility: most negative of l_ineq, l_lower, l_upper.
    """
    g = np.asarray(gamma, dtype=np.float64)
    grad = qp.Q @ g - qp.lin - multipliers.lower + multipliers.upper
    feas = max(0.0, float(np.max(qp.lower - g, initial=0.0)), float(np.max(g - qp.upper, initial=0.0)))
    comp = float(np.sum(np.abs(multipliers.lower * (g - qp.lower))) +
                 np.sum(np.abs(multipliers.upper * (qp.upper - g))))
    if qp.eq is not None:
        grad = grad + qp.eq * multipliers.eq
        feas = max(feas, abs(float(qp.eq @ g)))
    if qp.ineq is not None:
        slack = float(qp.ineq @ g)
        grad = grad - qp.ineq * multipliers.ineq
        feas = max(feas, -slack)
        comp += abs(multipliers.ineq * slack)
    dual = max(0.0, -min(float(multipliers.ineq),
                         float(np.min(multipliers.lower, initial=0.0)),
                         float(np.min(multipliers.upper, initial=0.0))))
    return KKTReport(float(np.max(np.abs(grad), initial=0.0)), feas, comp, dual, iterations)


def estimate_multipliers(qp: QPInstance, gamma, tol: float = 1e-9) -> Multipliers:
    """Least-squares multipliers for an arbitrary point.

    Row multipliers are fitted on variables strictly inside their box; the
    remaining gradient is split onto the bound multipliers.
    """
    g = np.asarray(gamma, dtype=np.float64)
    grad = qp.Q @ g - qp.lin
    span = np.maximum(qp.upper - qp.lower, 1.0)
    free = (g > qp.lower + tol * span) & (g < qp.upper - tol * span)
    rows, signs = [], []
    if qp.eq is not None:
        rows.append(qp.eq)
        signs.append(1.0)
    use_ineq = qp.ineq is not None and abs(float(qp.ineq @ g)) <= tol * max(1.0, np.abs(g).sum())
    if use_ineq:
        rows.append(qp.ineq)
        signs.append(-1.0)
    lam = np.zeros(len(rows))
    if rows and free.any():
        M = np.array([s * r[free] for s, r in zip(signs, rows)]).T
        lam = np.linalg.lstsq(M, -grad[free], rcond=None)[0]
    resid = grad.copy()
    for k, (s, r) in enumerate(zip(signs, rows)):
        resid += s * lam[k] * r
    lower = np.where(free, 0.0, np.maximum(resid, 0.0))
    upper = np.where(free, 0.0, np.maximum(-resid, 0.0))
    eq_val = float(lam[0]) if qp.eq is not None else 0.0
    ineq_val = float(lam[-1]) if use_ineq else 0.0
    return Multipliers(eq_val, max(ineq_val, 0.0), lower, upper)


# -- active-set core ------------------------------------------------------------------

_AT_LOWER, _FREE, _AT_UPPER = -1, 0, 1


def _feasible_start(qp: QPInstance) -> np.ndarray:
    x = np.clip(np.zeros(qp.n), qp.lower, qp.upper)
    ok = True
    if qp.eq is not None and abs(qp.eq @ x) > 1e-12:
        ok = False
    if qp.ineq is not None and qp.ineq @ x < -1e-12:
        ok = False
    if ok:
        return x
    from scipy.optimize import linprog

    A_eq = qp.eq[None] if qp.eq is not None else None
    b_eq = [0.0] if qp.eq is not None else None
    A_ub = -qp.ineq[None] if qp.ineq is not None else None
    b_ub = [0.0] if qp.ineq is not None else None
    res = linprog(np.zeros(qp.n), A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=list(zip(qp.lower, qp.upper)), method="highs")
    if res.status != 0:
        raise InfeasibleError(f"no feasible point: {res.message}")
    return np.clip(res.x, qp.lower, qp.upper)


def _null_space(M: np.ndarray, nf: int) -> tuple[np.ndarray, int]:
    """Orthonormal null-space basis of the rows of M restricted to nf columns."""
    if M.shape[0] == 0:
        return np.eye(nf), 0
    q, r = np.linalg.qr(M.T, mode="complete")
    rank = int(np.sum(np.abs(np.diag(r)) > 1e-12 * max(1.0, np.abs(r).max(initial=0.0))))
    return q[:, rank:], rank


def solve(qp: QPInstance, tol: float = 1e-8, max_iter: int | None = None) -> DualSolution:
    """Solve ``qp`` to a KKT point.

    ``tol`` bounds the largest KKT residual relative to
    ``max(1, max|Q| * max|bound|)``; for kernel duals with C <= 1 that is an
    absolute bound. Raises NonConvergenceError (with the best iterate) when the
    iteration budget, 50 * n by default, runs out or the residual test fails.
    """
    n = qp.n
    if max_iter is None:
        max_iter = 50 * max(n, 1)
    lo, hi = qp.lower, qp.upper
    Q, c = qp.Q, qp.lin
    scale = max(1.0, float(np.abs(Q).max(initial=0.0)), float(np.abs(c).max(initial=0.0)))
    # residuals scale with the largest gradient entry the box allows
    box = float(np.max(np.abs(np.concatenate([lo, hi])), initial=0.0))
    kkt_scale = max(1.0, float(np.abs(Q).max(initial=0.0)) * box)
    eps_stat = 1e-12 * scale
    eps_mult = 1e-10 * scale
    eq = qp.eq if qp.eq is not None and np.any(qp.eq[lo < hi] != 0) else None
    ineq = qp.ineq if qp.ineq is not None and np.any(qp.ineq != 0) else None

    x = _feasible_start(qp)
    pinned = lo == hi
    status = np.where(x <= lo, _AT_LOWER, np.where(x >= hi, _AT_UPPER, _FREE))
    status[pinned] = _AT_LOWER
    # free just enough variables to make the equality row independent of the
    # pinned bounds
    if eq is not None and not np.any(eq[status == _FREE] != 0):
        for i in range(n):
            if not pinned[i] and eq[i] != 0:
                status[i] = _FREE
                break
    ineq_active = False

    history = [qp.objective(x)]
    it = 0
    need_step = True
    while True:
        if it >= max_iter:
            sol = _finish(qp, x, status, ineq_active, eq, it, history)
            raise NonConvergenceError(
                f"active-set solver hit max_iter={max_iter}; best KKT residual "
                f"{sol.kkt.max_residual:.3e}", sol)
        it += 1
        F = np.flatnonzero(status == _FREE)
        grad = Q @ x - c
        rows, signs = _working_rows(eq, ineq, ineq_active)
        if need_step:
            p, unbounded = None, False
            M = np.array([r[F] for r in rows]).reshape(len(rows), F.size)
            Z, _ = _null_space(M, F.size)
            if Z.shape[1] > 0:
                rg = Z.T @ grad[F]
                if np.max(np.abs(rg)) > eps_stat:
                    H = Z.T @ Q[np.ix_(F, F)] @ Z
                    p, unbounded = _subspace_step(H, rg, Z)
            if p is not None and np.max(np.abs(p)) > 1e-15 * max(1.0, float(np.abs(x).max())):
                step, block, block_ineq = _ratio_test(x, p, F, lo, hi, None if ineq_active else ineq, unbounded)
                if step == np.inf:
                    raise QPError("objective unbounded below on the feasible set")
                x = x.copy()
                x[F] += step * p
                if block is not None:
                    at_lo = p[np.searchsorted(F, block)] < 0
                    x[block] = lo[block] if at_lo else hi[block]
                    status[block] = _AT_LOWER if at_lo else _AT_UPPER
                elif block_ineq:
                    ineq_active = True
                else:
                    # full Newton step lands on the subspace minimizer
                    need_step = unbounded
                history.append(qp.objective(x))
                continue

        # stationary on the current working set: check multiplier signs
        lam, resid = _row_multipliers(grad, F, rows, signs)
        cand_val, cand = -eps_mult, None
        for i in np.flatnonzero((status != _FREE) & ~pinned):
            m = resid[i] if status[i] == _AT_LOWER else -resid[i]
            if m < cand_val:
                cand_val, cand = m, int(i)
        need_step = True
        if ineq_active and lam[-1] < cand_val:
            ineq_active = False
            continue
        if cand is None:
            sol = _finish(qp, x, status, ineq_active, eq, it, history)
            if sol.kkt.max_residual > tol * kkt_scale:
                raise NonConvergenceError(
                    f"KKT residual {sol.kkt.max_residual:.3e} above tolerance "
                    f"{tol * kkt_scale:.3e} after {it} iterations", sol)
            return sol
        status[cand] = _FREE


def _working_rows(eq, ineq, ineq_active):
    rows, signs = [], []
    if eq is not None:
        rows.append(eq)
        signs.append(1.0)
    if ineq_active:
        rows.append(ineq)
        signs.append(-1.0)
    return rows, signs


def _subspace_step(H: np.ndarray, rg: np.ndarray, Z: np.ndarray):
    try:
        L = np.linalg.cholesky(H)
        # reject near-singular factorizations; they give wild Newton steps
        d = np.diag(L)
        if d.min() > 1e-6 * max(1.0, d.max()):
            y = np.linalg.solve(L.T, np.linalg.solve(L, rg))
            return -(Z @ y), False
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(H)
    cut = 1e-10 * max(1.0, float(w.max(initial=0.0)))
    flat = w <= cut
    proj = V.T @ rg
    if flat.any() and np.max(np.abs(proj[flat])) > 1e-12 * max(1.0, np.abs(rg).max()):
        # zero-curvature descent: the objective is linear along this direction
        return -(Z @ (V[:, flat] @ proj[flat])), True
    y = V[:, ~flat] @ (proj[~flat] / w[~flat])
    return -(Z @ y), False


def _ratio_test(x, p, F, lo, hi, ineq, unbounded):
    step = np.inf if unbounded else 1.0
    block = None
    xf = x[F]
    for k in range(F.size):
        if p[k] < 0:
            t = (lo[F[k]] - xf[k]) / p[k]
        elif p[k] > 0:
            t = (hi[F[k]] - xf[k]) / p[k]
        else:
            continue
        t = max(t, 0.0)
        if t < step:
            step, block = t, int(F[k])
    block_ineq = False
    if ineq is not None:
        dp = float(ineq[F] @ p)
        if dp < -1e-14 * np.abs(ineq[F]).sum() * np.abs(p).max():
            slack = float(ineq @ x)
            t = max(slack / -dp, 0.0)
            if t < step:
                step, block, block_ineq = t, None, True
    return step, block, block_ineq


def _row_multipliers(grad, F, rows, signs):
    """Multipliers of the working rows and the leftover gradient.

    Stationarity on free variables reads grad + eq*l_eq - ineq*l_ineq = 0;
    the leftover ``resid`` equals l_lower - l_upper on pinned variables.
    """
    lam = np.zeros(len(rows))
    if rows and F.size:
        A = np.array([s * r[F] for s, r in zip(signs, rows)]).T
        lam = np.linalg.lstsq(A, -grad[F], rcond=None)[0]
    resid = grad.copy()
    for k, (s, r) in enumerate(zip(signs, rows)):
        resid = resid + s * lam[k] * r
    return lam, resid


def _finish(qp, x, status, ineq_active, eq, it, history) -> DualSolution:
    F = np.flatnonzero(status == _FREE)
    x = x.copy()
    x[status == _AT_LOWER] = qp.lower[status == _AT_LOWER]
    x[status == _AT_UPPER] = qp.upper[status == _AT_UPPER]
    rows, signs = _working_rows(eq, qp.ineq, ineq_active)
    if rows and F.size:
        # polish: remove drift in the working rows using the free variables
        A = np.array([r[F] for r in rows])
        viol = np.array([r @ x for r in rows])
        x[F] -= np.linalg.lstsq(A, viol, rcond=None)[0]
        x[F] = np.clip(x[F], qp.lower[F], qp.upper[F])
    grad = qp.Q @ x - qp.lin
    lam, resid = _row_multipliers(grad, F, rows, signs)
    lower = np.where(status == _AT_LOWER, resid, 0.0)
    upper = np.where(status == _AT_UPPER, -resid, 0.0)
    # a fixed variable's bound multiplier may take either sign
    pinned = qp.lower == qp.upper
    lower[pinned] = np.maximum(resid[pinned], 0.0)
    upper[pinned] = np.maximum(-resid[pinned], 0.0)
    lam_eq = float(lam[0]) if eq is not None else 0.0
    lam_ineq = float(lam[-1]) if ineq_active else 0.0
    mult = Multipliers(lam_eq, lam_ineq, lower, upper)
    kkt = kkt_residuals(qp, x, mult, it)
    mu = float(qp.ineq @ x) if qp.ineq is not None else 0.0
    return DualSolution(x, qp.objective(x), mu, lam_eq, lam_ineq, mult, kkt, history)
