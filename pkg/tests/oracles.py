"""Independent reference computations used by the test suite.

None of these share code paths with the package implementations they check.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np


def brute_force_qp(Q, lin, eq, ineq, lower, upper, feas_tol=1e-9):
    """Exhaustive active-set enumeration for small box/eq/ineq QPs.

    Every variable is at its lower bound, its upper bound or free; the
    inequality is either tight or ignored. For each free set the
    equality-constrained subproblem is solved in closed form (all bound
    assignments at once as multiple right-hand sides) and the best feasible
    candidate is kept. Subproblems whose reduced Hessian is singular are
    skipped: some vertex of the optimal set always has a non-singular one.
    Returns ``(objective, gamma)``.
    """
    Q = np.asarray(Q, float)
    lin = np.asarray(lin, float)
    lower = np.asarray(lower, float)
    upper = np.asarray(upper, float)
    n = Q.shape[0]
    best = (np.inf, None)
    for tight in (False, True):
        rows = []
        if eq is not None:
            rows.append(np.asarray(eq, float))
        if tight and ineq is not None:
            rows.append(np.asarray(ineq, float))
        if tight and ineq is None:
            continue
        E = np.array(rows).reshape(len(rows), n)
        for mask in range(1 << n):
            S = [i for i in range(n) if mask >> i & 1]
            B = [i for i in range(n) if not mask >> i & 1]
            nb = len(B)
            combos = list(itertools.product([0, 1], repeat=nb))
            assign = np.array(combos, dtype=float).reshape(len(combos), nb)
            XB = np.where(assign == 0, lower[B], upper[B])  # (A, nb)
            X = np.zeros((XB.shape[0], n))
            X[:, B] = XB
            if S:
                ES = E[:, S]
                rhs = -(E[:, B] @ XB.T)  # (m, A)
                if ES.shape[0]:
                    u, sv, vt = np.linalg.svd(ES)
                    rank = int(np.sum(sv > 1e-12))
                    Z = vt[rank:].T
                    xp = np.linalg.pinv(ES) @ rhs
                else:
                    Z = np.eye(len(S))
                    xp = np.zeros((len(S), XB.shape[0]))
                QSS = Q[np.ix_(S, S)]
                if Z.shape[1]:
                    H = Z.T @ QSS @ Z
                    if np.linalg.eigvalsh(H).min() <= 1e-9:
                        continue
                    g = QSS @ xp + Q[np.ix_(S, B)] @ XB.T - lin[S][:, None]
                    z = -np.linalg.solve(H, Z.T @ g)
                    xs = xp + Z @ z
                else:
                    xs = xp
                X[:, S] = xs.T
            ok = np.all(X >= lower - feas_tol, axis=1) & np.all(X <= upper + feas_tol, axis=1)
            for r in rows:
                ok &= np.abs(X @ r) <= 1e-8
            if ineq is not None:
                ok &= X @ np.asarray(ineq, float) >= -feas_tol
            if not ok.any():
                continue
            Xo = X[ok]
            obj = 0.5 * np.einsum("ai,ij,aj->a", Xo, Q, Xo) - Xo @ lin
            k = int(np.argmin(obj))
            if obj[k] < best[0]:
                best = (float(obj[k]), Xo[k].copy())
    return best


def grid_min_2d(f, lo, hi, steps=401):
    """Minimum of f over a square grid (coarse oracle for 2-variable problems)."""
    g = np.linspace(lo, hi, steps)
    best = (np.inf, None)
    for a in g:
        for b in g:
            v = f(np.array([a, b]))
            if v < best[0]:
                best = (v, (a, b))
    return best


def midranks(values):
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [Fraction(0)] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        r = Fraction(i + 1 + j + 1, 2)
        for k in range(i, j + 1):
            ranks[order[k]] = r
        i = j + 1
    return ranks


def rank_sum_enumeration(a, b):
    """P(W_a >= observed) over every equally likely split of the pooled ranks."""
    pooled = list(a) + list(b)
    ranks = midranks(pooled)
    obs = sum(ranks[: len(a)])
    total = hits = 0
    for subset in itertools.combinations(range(len(pooled)), len(a)):
        total += 1
        if sum(ranks[i] for i in subset) >= obs:
            hits += 1
    return Fraction(hits, total)


def random_wso_qp(rng, n1, n2, m0, m12, kind, C1, C2, dim=3, gamma=0.3):
    """Random dual instance with the WSO constraint pattern, built from scratch.

    Returns ``(Q, lin, eq, ineq, lower, upper)`` with variables ordered
    (class 1, class 2, normal, tumoral pool) and the labelled biopsies
    repeated inside the tumoral pool.
    """
    X1 = rng.normal(size=(n1, dim)) - 1
    X2 = rng.normal(size=(n2, dim)) + 1
    X0 = rng.normal(size=(m0, dim)) - 3
    Xu = rng.normal(size=(m12, dim)) + 0.5
    X = np.vstack([X1, X2, X0, X1, X2, Xu])
    y = np.r_[-np.ones(n1), np.ones(n2), -np.ones(m0), np.ones(n1 + n2 + m12)]
    n = len(y)
    K = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            if kind == "linear":
                K[i, j] = float(np.dot(X[i], X[j]))
            else:
                K[i, j] = float(np.exp(-gamma * np.sum((X[i] - X[j]) ** 2)))
    K = (K + K.T) / 2
    Q = y[:, None] * K * y[None, :]
    ineq = np.r_[-np.ones(n1), np.ones(n2), np.zeros(n - n1 - n2)]
    upper = np.r_[np.full(n1 + n2, float(C1)), np.full(n - n1 - n2, float(C2))]
    return Q, np.ones(n), y, ineq, np.zeros(n), upper
