"""First-stage linear quantile regressions and the quantile-instrument dictionary.

The solver runs iteratively reweighted least squares on a smoothed check
loss (smoothing shrinking to 1e-6 of the residual scale), vectorized over
the whole quantile grid, then snaps each fit to an exact basic solution
with simplex exchange steps. Fits whose exchange certificate fails fall
back to the exact linear-programming formulation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.optimize import linprog

from ._kernels import exchange_polish_batch
from .exceptions import ConvergenceError, QlsivError, RankDeficientError
from .grids import BuiltBasis, InstrumentBasis, QuantileGrid


def check_loss(u, tau: float):
    """Asymmetric absolute-error loss u * (tau - 1{u < 0}).

    Zero iff u = 0; vectorized over u.
    """
    if not 0.0 < tau < 1.0:
        raise QlsivError(f"tau must be in (0, 1), got {tau}")
    u = np.asarray(u, dtype=float)
    out = u * (tau - (u < 0.0))
    return float(out) if out.ndim == 0 else out


def _total_loss(u_cols: np.ndarray, taus: np.ndarray) -> np.ndarray:
    return np.sum(u_cols * (taus[None, :] - (u_cols < 0.0)), axis=0)


def _nonpivot_columns(matrix: np.ndarray, labels: tuple[str, ...]) -> tuple[str, ...]:
    n, p = matrix.shape
    _, _, piv = scipy.linalg.qr(matrix, mode="economic", pivoting=True)
    r = np.linalg.matrix_rank(matrix)
    return tuple(labels[j] for j in sorted(piv[r:]))


def _require_full_rank(matrix: np.ndarray, labels: tuple[str, ...], hint: str = "") -> None:
    n, p = matrix.shape
    if n < p:
        raise QlsivError(f"need at least {p} rows for a {p}-column design, got {n}")
    if np.linalg.matrix_rank(matrix) < p:
        offending = _nonpivot_columns(matrix, labels)
        msg = f"design matrix is rank deficient; dependent columns: {offending}"
        if hint:
            msg += f". {hint}"
        raise RankDeficientError(msg, offending=offending)


def quantile_lp(design: np.ndarray, x: np.ndarray, tau: float) -> np.ndarray:
    """Exact quantile regression via the standard LP splitu+ / u- formulation."""
    n, p = design.shape
    cost = np.concatenate([np.zeros(p), tau * np.ones(n), (1.0 - tau) * np.ones(n)])
    a_eq = sp.hstack([sp.csr_matrix(design), sp.eye(n), -sp.eye(n)], format="csc")
    res = linprog(
        cost,
        A_eq=a_eq,
        b_eq=x,
        bounds=[(None, None)] * p + [(0, None)] * (2 * n),
        method="highs",
    )
    if not res.success:
        raise ConvergenceError(f"LP quantile solver failed at tau={tau}: {res.message}")
    return res.x[:p]


def _irls(Phi, x, taus, tol, max_iter):
    """Smoothed-check-loss IRLS over all taus at once.

    Returns (Pi (K,p), U (n,K), iterations). All quantities are exactly
    scale equivariant in x: the smoothing schedule is tied to the residual
    scale.
    """
    n, p = Phi.shape
    K = taus.size
    P2 = (Phi[:, :, None] * Phi[:, None, :]).reshape(n, p * p)
    Px = Phi * x[:, None]
    beta0, *_ = np.linalg.lstsq(Phi, x, rcond=None)
    Pi = np.tile(beta0, (K, 1))
    U = x[:, None] - Phi @ Pi.T
    scale = float(np.mean(np.abs(x - np.median(x))))
    if scale <= 0.0:
        return Pi, U, 0  # constant x: the least-squares fit is already exact
    dmin = 1e-6 * scale
    delta = max(float(np.quantile(np.abs(U), 0.8)), scale)
    tr = taus[None, :]
    prev_obj = None
    iters = 0
    while iters < max_iter:
        iters += 1
        at_floor = delta <= dmin
        c = np.where(U >= 0, tr, 1.0 - tr)
        W = c / np.maximum(np.abs(U), delta)
        A = (P2.T @ W).T.reshape(K, p, p)
        b = (Px.T @ W).T
        try:
            Pi = np.linalg.solve(A, b[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            A[:, np.arange(p), np.arange(p)] += 1e-10 * scale
            Pi = np.linalg.solve(A, b[:, :, None])[:, :, 0]
        U = x[:, None] - Phi @ Pi.T
        if at_floor:
            obj = _total_loss(U, taus)
            if prev_obj is not None and np.all(
                np.abs(obj - prev_obj) <= tol * np.maximum(1.0, np.abs(prev_obj))
            ):
                break
            prev_obj = obj
        else:
            delta = max(delta * 0.25, dmin)
    return Pi, U, iters


def _solve_quantiles(Phi, x, taus, tol=1e-8, max_iter=200):
    """Full pipeline: IRLS warm start, exchange polish, LP fallback.

    Returns (Pi, U, report) with one report dict per tau.
    """
    n, p = Phi.shape
    taus = np.asarray(taus, dtype=float)
    K = taus.size
    schedule_budget = min(max_iter, 16)
    Pi, U, iters = _irls(Phi, x, taus, tol, schedule_budget)
    Pi = np.ascontiguousarray(Pi)
    U = np.ascontiguousarray(U)
    certified = np.zeros(K, dtype=np.bool_)
    phi_c = np.ascontiguousarray(Phi)
    exchange_polish_batch(phi_c, x, taus, Pi, U, certified, 40 + 12 * p)
    if not certified.all():
        # one more IRLS round from the current iterates, then retry
        Pi2, U2, it2 = _irls(Phi, x, taus, tol, min(max_iter, 40))
        better = _total_loss(U2, taus) < _total_loss(U, taus)
        Pi[better] = Pi2[better]
        U[:, better] = U2[:, better]
        iters += it2
        Pi = np.ascontiguousarray(Pi)
        U = np.ascontiguousarray(U)
        exchange_polish_batch(phi_c, x, taus, Pi, U, certified, 60 + 12 * p)
    report = []
    for k in range(K):
        method = "irls+exchange"
        if not certified[k]:
            try:
                pi_lp = quantile_lp(Phi, x, float(taus[k]))
            except ConvergenceError as exc:
                gap = None
                raise ConvergenceError(
                    f"quantile fit did not converge at tau={taus[k]}: {exc}",
                    last_iterate=Pi[k].copy(),
                    objective_gap=gap,
                ) from exc
            u_lp = x - Phi @ pi_lp
            if _total_loss(u_lp[:, None], taus[k : k + 1])[0] <= _total_loss(
                U[:, k : k + 1], taus[k : k + 1]
            )[0]:
                Pi[k] = pi_lp
                U[:, k] = u_lp
            method = "lp"
        report.append(
            {
                "tau": float(taus[k]),
                "method": method,
                "converged": True,
                "objective": float(_total_loss(U[:, k : k + 1], taus[k : k + 1])[0]),
                "iterations": iters,
            }
        )
    return Pi, U, report


def fit_quantile(design, x, tau: float, tol: float = 1e-8, max_iter: int = 200) -> np.ndarray:
    """Minimize the empirical check loss of x - design @ pi at a single tau."""
    design = np.atleast_2d(np.asarray(design, dtype=float))
    if design.shape[0] == 1 and design.shape[1] > 1:
        design = design.T
    x = np.asarray(x, dtype=float).ravel()
    if not 0.0 < tau < 1.0:
        raise QlsivError(f"tau must be in (0, 1), got {tau}")
    labels = tuple(f"col{j}" for j in range(design.shape[1]))
    _require_full_rank(design, labels)
    Pi, _, _ = _solve_quantiles(design, x, np.array([tau]), tol=tol, max_iter=max_iter)
    return Pi[0]


@dataclass(frozen=True)
class FirstStageFit:
    """Per-tau quantile coefficients and the n x K dictionary of fitted quantiles."""

    grid: QuantileGrid
    basis: InstrumentBasis
    built: BuiltBasis
    pi_hat: np.ndarray  # (K, p)
    dictionary: np.ndarray  # (n, K)
    convergence: tuple[dict, ...]

    @property
    def n(self) -> int:
        return self.dictionary.shape[0]

    @property
    def k(self) -> int:
        return self.dictionary.shape[1]

    def crossing_count(self, tol: float = 1e-9) -> int:
        """Number of rows whose fitted quantiles are not monotone in tau."""
        d = np.diff(self.dictionary, axis=1)
        return int(np.sum((d < -tol).any(axis=1)))


def fit_first_stage(
    data,
    basis: InstrumentBasis | None = None,
    grid: QuantileGrid | None = None,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> FirstStageFit:
    """Fit one quantile regression of the endogenous variable per grid
    point and stack the fitted values into the instrument dictionary."""
    basis = basis if basis is not None else InstrumentBasis()
    grid = grid if grid is not None else QuantileGrid()
    built = basis.build(data.z1, data.z2, data.z1_names, data.z2_names)
    hint = ""
    if basis.spec == "quadratic-full":
        sq = [lab for lab in built.labels if lab.endswith("^2")]
        if sq:
            hint = "if an instrument is binary its square duplicates it; use basis 'quadratic-no-z2sq'"
    if built.matrix.shape[0] < built.dim + 1:
        raise QlsivError(
            f"need at least basis dimension + 1 = {built.dim + 1} rows, got {built.matrix.shape[0]}"
        )
    _require_full_rank(built.matrix, built.labels, hint=hint)
    x = np.asarray(data.x, dtype=float).ravel()
    taus = grid.as_array()
    try:
        Pi, U, report = _solve_quantiles(built.matrix, x, taus, tol=tol, max_iter=max_iter)
    except ConvergenceError:
        raise
    dictionary = built.matrix @ Pi.T
    return FirstStageFit(
        grid=grid,
        basis=basis,
        built=built,
        pi_hat=Pi,
        dictionary=dictionary,
        convergence=tuple(report),
    )
