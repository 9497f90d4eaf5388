import numpy as np
import pytest
import scipy.sparse as sp
from scipy.optimize import linprog

import qlsiv


def lp_check_loss_oracle(design, x, tau):
    """Independent exact quantile regression by linear programming.

    Minimize tau*1'u+ + (1-tau)*1'u- subject to design@pi + u+ - u- = x.
    Returns (pi, objective).
    """
    n, p = design.shape
    cost = np.concatenate([np.zeros(p), tau * np.ones(n), (1 - tau) * np.ones(n)])
    a_eq = sp.hstack([sp.csr_matrix(design), sp.eye(n), -sp.eye(n)], format="csc")
    res = linprog(
        cost,
        A_eq=a_eq,
        b_eq=x,
        bounds=[(None, None)] * p + [(0, None)] * (2 * n),
        method="highs",
    )
    assert res.success
    return res.x[:p], res.fun


def inv3(a):
    """Hand-rolled inverse for matrices up to 3x3 via cofactors."""
    a = np.asarray(a, dtype=float)
    k = a.shape[0]
    if k == 1:
        return np.array([[1.0 / a[0, 0]]])
    if k == 2:
        det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
        return np.array([[a[1, 1], -a[0, 1]], [-a[1, 0], a[0, 0]]]) / det
    c = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            minor = np.delete(np.delete(a, i, axis=0), j, axis=1)
            c[i, j] = (-1) ** (i + j) * (minor[0, 0] * minor[1, 1] - minor[0, 1] * minor[1, 0])
    det = sum(a[0, j] * c[0, j] for j in range(3))
    return c.T / det


def lasso_sign_enumeration_oracle(G, x, penalty):
    """Global minimizer of (1/n)||x - G w||^2 + penalty*||w||_1 for small K
    by enumerating supports and sign patterns with KKT verification."""
    n, K = G.shape
    best = (np.inf, np.zeros(K))
    from itertools import combinations, product

    def objective(w):
        r = x - G @ w
        return float(r @ r) / n + penalty * float(np.abs(w).sum())

    best = (objective(np.zeros(K)), np.zeros(K))
    for size in range(1, K + 1):
        for supp in combinations(range(K), size):
            Gs = G[:, supp]
            gram = Gs.T @ Gs
            if np.linalg.matrix_rank(gram) < size:
                continue
            for signs in product((-1.0, 1.0), repeat=size):
                s = np.asarray(signs)
                rhs = Gs.T @ x - n * penalty / 2.0 * s
                try:
                    ws = np.linalg.solve(gram, rhs)
                except np.linalg.LinAlgError:
                    continue
                if np.any(np.sign(ws) != s):
                    continue
                w = np.zeros(K)
                w[list(supp)] = ws
                f = objective(w)
                if f < best[0] - 1e-15:
                    best = (f, w)
    return best[1], best[0]


@pytest.fixture(scope="session")
def design_a_small():
    spec = qlsiv.DGPSpec(design="A", n=500, seed=424242)
    return qlsiv.generate(spec, 0)


@pytest.fixture(scope="session")
def design_a_fs(design_a_small):
    return qlsiv.fit_first_stage(
        design_a_small, qlsiv.InstrumentBasis("quadratic-full"), qlsiv.QuantileGrid(step=0.10)
    )


def random_small_dataset(rng, n=None):
    n = n or int(rng.integers(20, 51))
    z1 = rng.standard_normal(n)
    z2 = rng.standard_normal(n)
    e = rng.standard_normal((n, 2))
    x = 0.7 * z1 + 1.1 * z2 + e[:, 1] + 0.5 * e[:, 0]
    y = 0.3 + 1.2 * x - 0.4 * z1 + e[:, 0]
    return qlsiv.Dataset(y=y, x=x, z1=z1, z2=z2)
