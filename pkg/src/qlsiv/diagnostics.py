"""Weak-IV diagnostics: mean first-stage F, per-quantile joint F of the
instrument terms, the distributional F of the dictionary, and the
rule-of-thumb decision label."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .data import Dataset
from .first_stage import FirstStageFit, _solve_quantiles
from .iv import first_stage_f

STRONG_F = 10.0
STANDARD_TAUS = (0.10, 0.25, 0.50, 0.75, 0.90)

LABEL_STRONG_MEAN = "strong mean"
LABEL_DISTRIBUTIONAL = "weak mean / strong distributional"
LABEL_BOTH_WEAK = "both weak"
LABEL_MEAN_ONLY = "strong mean / weak distributional"


@dataclass(frozen=True)
class DiagnosticsReport:
    mean_f: float
    quantile_f: tuple[tuple[float, float], ...]  # (tau, joint F of instrument terms)
    distributional_f: float
    distributional_df: int
    label: str
    notes: tuple[str, ...] = ()

    def quantile_f_at(self, tau: float) -> float:
        for t, f in self.quantile_f:
            if abs(t - tau) < 1e-9:
                return f
        raise KeyError(f"no quantile F computed at tau={tau}")

    @property
    def max_quantile_f(self) -> float:
        return max(f for _, f in self.quantile_f)


def decision_label(mean_f: float, max_quantile_f: float, threshold: float = STRONG_F) -> str:
    """Four-way classification of first-stage strength with the F >= 10
    rule of thumb on the mean and distributional sides."""
    mean_strong = mean_f >= threshold
    dist_strong = max_quantile_f >= threshold
    if mean_strong:
        return LABEL_STRONG_MEAN if dist_strong else LABEL_MEAN_ONLY
    return LABEL_DISTRIBUTIONAL if dist_strong else LABEL_BOTH_WEAK


def _hall_sheather_bandwidth(tau: float, n: int, alpha: float = 0.05) -> float:
    z = norm.ppf(1.0 - alpha / 2.0)
    q = norm.ppf(tau)
    num = 1.5 * norm.pdf(q) ** 2
    den = 2.0 * q * q + 1.0
    return float(n ** (-1.0 / 3.0) * z ** (2.0 / 3.0) * (num / den) ** (1.0 / 3.0))


def _density_at_zero(resid: np.ndarray, tau: float) -> float:
    """Gaussian-kernel estimate of the residual density at zero, bandwidth
    converted from the Hall-Sheather probability-scale rule."""
    n = resid.size
    h_prob = _hall_sheather_bandwidth(tau, n)
    lo = np.quantile(resid, max(tau - h_prob, 1.0 / n))
    hi = np.quantile(resid, min(tau + h_prob, 1.0 - 1.0 / n))
    scale = float(np.std(resid)) + 1e-300
    h = max((hi - lo) / 2.0, 1e-4 * scale)
    return float(np.mean(norm.pdf(resid / h)) / h)


def quantile_joint_f(Phi: np.ndarray, x: np.ndarray, pi: np.ndarray, tau: float, block: np.ndarray) -> float:
    """Wald joint F of the columns in ``block`` for one quantile fit, using
    the tau(1-tau) * J^{-1} Sigma J^{-1} covariance with a scalar kernel
    density estimate of the residual density at zero."""
    n, p = Phi.shape
    resid = x - Phi @ pi
    f0 = _density_at_zero(resid, tau)
    J = Phi.T @ Phi / n
    cov = tau * (1.0 - tau) / (n * f0 * f0) * np.linalg.pinv(J)
    b = pi[block]
    Vb = cov[np.ix_(block, block)]
    try:
        w = float(b @ np.linalg.solve(Vb, b))
    except np.linalg.LinAlgError:
        w = float(b @ np.linalg.pinv(Vb) @ b)
    return w / block.size


def distributional_f(data: Dataset, fit: FirstStageFit) -> tuple[float, int, tuple[str, ...]]:
    """Robust joint Wald F of the dictionary columns in the regression of x
    on (1, z1, dictionary). Collinear columns are removed first and the
    statistic is reported on the survivors."""
    G = fit.dictionary
    n = data.n
    base = np.column_stack([np.ones(n), data.z1])
    full = np.column_stack([base, G])
    keep = _independent_extension(base, G)
    notes = ()
    if keep.size < G.shape[1]:
        notes = (
            f"distributional F computed on {keep.size} of {G.shape[1]} dictionary columns "
            "(remainder collinear with the base regressors)",
        )
    if keep.size == 0:
        return 0.0, 0, notes + ("dictionary fully collinear with (1, z1); distributional F is 0",)
    D = np.column_stack([base, G[:, keep]])
    theta, _, _, _ = np.linalg.lstsq(D, data.x, rcond=1e-10)
    resid = data.x - D @ theta
    bread = np.linalg.pinv(D.T @ D / n)
    meat = (D * (resid**2)[:, None]).T @ D / n
    V = bread @ meat @ bread / n
    sel = slice(base.shape[1], D.shape[1])
    b = theta[sel]
    Vb = V[sel, sel]
    w = float(b @ np.linalg.pinv(Vb) @ b)
    return w / keep.size, int(keep.size), notes


def _independent_extension(base: np.ndarray, G: np.ndarray, rtol: float = 1e-8) -> np.ndarray:
    """Indices of G columns that extend span(base) one at a time (greedy QR)."""
    n = base.shape[0]
    Q, _ = np.linalg.qr(base)
    basis = [Q[:, j] for j in range(Q.shape[1])]
    keep = []
    for j in range(G.shape[1]):
        v = G[:, j].astype(float).copy()
        norm0 = np.linalg.norm(v) + 1e-300
        for q in basis:
            v -= (q @ G[:, j]) * q
        # second orthogonalization pass for numerical safety
        for q in basis:
            v -= (q @ v) * q
        nv = np.linalg.norm(v)
        if nv > rtol * norm0:
            basis.append(v / nv)
            keep.append(j)
    return np.asarray(keep, dtype=int)


def diagnose(
    data: Dataset,
    fit: FirstStageFit | None = None,
    extra_taus: tuple[float, ...] = STANDARD_TAUS,
) -> DiagnosticsReport:
    """Full first-stage diagnosis.

    Reports the robust mean first-stage F of the excluded instruments, the
    per-quantile joint F of the instrument terms at the grid quantiles plus
    ``extra_taus``, the distributional F of the dictionary columns, and the
    decision label. A first-stage fit is required for the distributional
    part; without one only the mean F and the extra-tau quantile
    regressions (on the linear basis) are available.
    """
    mean_f = first_stage_f(data, data.z2)
    notes: tuple[str, ...] = ()

    if fit is not None:
        Phi = fit.built.matrix
        block = np.flatnonzero(fit.built.z2_mask)
        taus = list(fit.grid.as_array())
        pis = list(fit.pi_hat)
        want = [t for t in extra_taus if not any(abs(t - g) < 1e-9 for g in taus)]
        if want:
            extra_pi, _, _ = _solve_quantiles(Phi, data.x, np.asarray(want))
            taus += list(want)
            pis += list(extra_pi)
        qf = tuple(
            sorted(
                (float(t), quantile_joint_f(Phi, data.x, pi, float(t), block))
                for t, pi in zip(taus, pis)
            )
        )
        dist_f, dist_df, dnotes = distributional_f(data, fit)
        notes += dnotes
    else:
        from .grids import InstrumentBasis

        built = InstrumentBasis("linear").build(data.z1, data.z2, data.z1_names, data.z2_names)
        block = np.flatnonzero(built.z2_mask)
        extra_pi, _, _ = _solve_quantiles(built.matrix, data.x, np.asarray(extra_taus))
        qf = tuple(
            sorted(
                (float(t), quantile_joint_f(built.matrix, data.x, pi, float(t), block))
                for t, pi in zip(extra_taus, extra_pi)
            )
        )
        dist_f, dist_df = float("nan"), 0
        notes += ("no first-stage fit supplied; distributional F unavailable",)

    max_qf = max(f for _, f in qf)
    label = decision_label(mean_f, max_qf)
    return DiagnosticsReport(
        mean_f=mean_f,
        quantile_f=qf,
        distributional_f=dist_f,
        distributional_df=dist_df,
        label=label,
        notes=notes,
    )
