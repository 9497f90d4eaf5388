"""Compiled inner loops: simplex exchange polish for quantile fits and
Gram-based coordinate descent for the l1-penalized weight problem.

Every kernel is plain scalar code so it runs identically (only slower)
when numba is unavailable.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


@njit(cache=True)
def _gauss_solve(A, b):
    """Solve A x = b by Gaussian elimination with partial pivoting.

    Returns (x, ok); ok is False when a pivot is numerically zero.
    """
    p = A.shape[0]
    M = np.empty((p, p + 1))
    for i in range(p):
        for j in range(p):
            M[i, j] = A[i, j]
        M[i, p] = b[i]
    amax = 0.0
    for i in range(p):
        for j in range(p):
            if abs(M[i, j]) > amax:
                amax = abs(M[i, j])
    tol = 1e-13 * (amax + 1.0)
    for col in range(p):
        piv = col
        best = abs(M[col, col])
        for r in range(col + 1, p):
            if abs(M[r, col]) > best:
                best = abs(M[r, col])
                piv = r
        if best <= tol:
            return np.zeros(p), False
        if piv != col:
            for j in range(p + 1):
                tmp = M[col, j]
                M[col, j] = M[piv, j]
                M[piv, j] = tmp
        inv = 1.0 / M[col, col]
        for r in range(col + 1, p):
            f = M[r, col] * inv
            if f != 0.0:
                for j in range(col, p + 1):
                    M[r, j] -= f * M[col, j]
    x = np.zeros(p)
    for i in range(p - 1, -1, -1):
        acc = M[i, p]
        for j in range(i + 1, p):
            acc -= M[i, j] * x[j]
        x[i] = acc / M[i, i]
    return x, True


@njit(cache=True)
def _independent_rows(Phi, absu, p):
    """Indices of p rows with small |residual| whose Phi rows are independent.

    Greedy modified Gram-Schmidt over rows ordered by |residual|; returns
    (indices, ok).
    """
    n = Phi.shape[0]
    order = np.argsort(absu)
    S = np.zeros(p, dtype=np.int64)
    Q = np.zeros((p, p))
    r = 0
    for pos in range(n):
        i = order[pos]
        v = Phi[i].astype(np.float64).copy()
        norm0 = 0.0
        for j in range(p):
            norm0 += v[j] * v[j]
        norm0 = np.sqrt(norm0)
        for q in range(r):
            dot = 0.0
            for j in range(p):
                dot += Q[q, j] * Phi[i, j]
            for j in range(p):
                v[j] -= dot * Q[q, j]
        nv = 0.0
        for j in range(p):
            nv += v[j] * v[j]
        nv = np.sqrt(nv)
        if nv > 1e-10 * (norm0 + 1e-300):
            for j in range(p):
                Q[r, j] = v[j] / nv
            S[r] = i
            r += 1
            if r == p:
                return S, True
    return S, False


@njit(cache=True)
def exchange_polish_batch(Phi, x, taus, Pi, U, certified, max_pivots):
    """Exact vertex polish of quantile-regression iterates, one tau at a time.

    Starting from the IRLS residuals in ``U``, snaps each tau to the basic
    solution interpolating p observations and runs simplex exchange steps
    until the dual multipliers of the active rows lie in [tau-1, tau]
    (global optimality for the check-loss LP). On success overwrites
    ``Pi[k]``/``U[:, k]`` and sets ``certified[k]``.
    """
    n, p = Phi.shape
    K = taus.shape[0]
    ej = np.zeros(p)
    for k in range(K):
        tau = taus[k]
        u0 = np.empty(n)
        for i in range(n):
            u0[i] = abs(U[i, k])
        S, ok = _independent_rows(Phi, u0, p)
        if not ok:
            certified[k] = False
            continue
        done = False
        pi = np.zeros(p)
        u = np.zeros(n)
        for _ in range(max_pivots):
            PS = np.empty((p, p))
            bS = np.empty(p)
            for r in range(p):
                for j in range(p):
                    PS[r, j] = Phi[S[r], j]
                bS[r] = x[S[r]]
            pi, ok = _gauss_solve(PS, bS)
            if not ok:
                break
            for i in range(n):
                acc = x[i]
                for j in range(p):
                    acc -= Phi[i, j] * pi[j]
                u[i] = acc
            for r in range(p):
                u[S[r]] = 0.0
            # dual multipliers of the active rows
            g = np.zeros(p)
            for i in range(n):
                if u[i] > 0.0:
                    for j in range(p):
                        g[j] += Phi[i, j] * tau
                elif u[i] < 0.0:
                    for j in range(p):
                        g[j] += Phi[i, j] * (tau - 1.0)
            c, ok = _gauss_solve(PS.T.copy(), g)
            if not ok:
                break
            jstar = 0
            worst = -1.0
            for r in range(p):
                cr = -c[r]
                v = cr - tau
                if (tau - 1.0) - cr > v:
                    v = (tau - 1.0) - cr
                if v > worst:
                    worst = v
                    jstar = r
            if worst <= 1e-10:
                for j in range(p):
                    Pi[k, j] = pi[j]
                for i in range(n):
                    U[i, k] = u[i]
                certified[k] = True
                done = True
                break
            for j in range(p):
                ej[j] = 0.0
            ej[jstar] = 1.0
            d, ok = _gauss_solve(PS, ej)
            if not ok:
                break
            cj = -c[jstar]
            sgn = 1.0 if cj < tau - 1.0 else -1.0
            dd = np.empty(n)
            for i in range(n):
                acc = 0.0
                for j in range(p):
                    acc += Phi[i, j] * d[j]
                dd[i] = acc * sgn
            t = np.full(n, np.inf)
            for i in range(n):
                if dd[i] != 0.0:
                    ti = u[i] / dd[i]
                    if ti > 1e-14 and np.isfinite(ti):
                        t[i] = ti
            for r in range(p):
                t[S[r]] = np.inf
            # pass through crossings while the directional derivative stays negative
            slope = ((1.0 - tau) if sgn > 0 else tau) + cj * sgn
            order = np.argsort(t)
            enter = -1
            for pos in range(n):
                i = order[pos]
                if not np.isfinite(t[i]):
                    break
                if slope + abs(dd[i]) >= -1e-14:
                    enter = i
                    break
                slope += abs(dd[i])
            if enter < 0:
                break
            S[jstar] = enter
        if not done:
            certified[k] = False


@njit(cache=True)
def lasso_cd(H, b, n, penalty, w, max_pass, tol):
    """Cyclic coordinate descent for min (1/n)||x - G w||^2 + penalty*||w||_1.

    Works on precomputed Gram quantities H = G'G and b = G'x; ``w`` is
    updated in place and returned.
    """
    K = b.shape[0]
    s = H @ w
    thr = n * penalty / 2.0
    for _ in range(max_pass):
        dmax = 0.0
        wmax = 1.0
        for k in range(K):
            hkk = H[k, k]
            if hkk <= 0.0:
                continue
            rho = b[k] - s[k] + hkk * w[k]
            if rho > thr:
                wk = (rho - thr) / hkk
            elif rho < -thr:
                wk = (rho + thr) / hkk
            else:
                wk = 0.0
            d = wk - w[k]
            if d != 0.0:
                for j in range(K):
                    s[j] += H[j, k] * d
                w[k] = wk
                if abs(d) > dmax:
                    dmax = abs(d)
            if abs(wk) > wmax:
                wmax = abs(wk)
        if dmax <= tol * wmax:
            break
    return w


@njit(cache=True)
def lasso_path_sse(H, b, n_train, G_test, x_test, penalties, w, sse):
    """Warm-started descent along a decreasing penalty path, accumulating
    held-out squared prediction error into ``sse`` (one entry per penalty;
    ``penalties`` ascending)."""
    npen = penalties.shape[0]
    K = w.shape[0]
    m = x_test.shape[0]
    for ci in range(npen - 1, -1, -1):
        w = lasso_cd(H, b, n_train, penalties[ci], w, 300, 1e-9)
        acc = 0.0
        for i in range(m):
            pred = 0.0
            for k in range(K):
                pred += G_test[i, k] * w[k]
            r = x_test[i] - pred
            acc += r * r
        sse[ci] += acc
    return w
