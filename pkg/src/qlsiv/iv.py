"""Two-stage least squares, plug-in regressions, and robust covariance."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .exceptions import ConfigError, DegenerateInstrumentError

Z95 = 1.96  # normal critical value used for all nominal 95% intervals


@dataclass(frozen=True)
class IVFit:
    """Structural fit: coefficients ordered (alpha, beta, gamma', ...),
    sandwich covariance of the estimate, and derived standard errors."""

    theta: np.ndarray
    vcov: np.ndarray
    se: np.ndarray
    method: str
    n: int
    param_names: tuple[str, ...]
    residuals: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    @property
    def beta(self) -> float:
        """Coefficient on the endogenous regressor."""
        return float(self.theta[1])

    @property
    def beta_se(self) -> float:
        return float(self.se[1])

    def conf_int(self, level: float = 0.95) -> np.ndarray:
        if abs(level - 0.95) < 1e-12:
            z = Z95
        else:
            from scipy.stats import norm

            z = float(norm.ppf(0.5 + level / 2.0))
        return np.column_stack([self.theta - z * self.se, self.theta + z * self.se])


def _as_columns(arr) -> np.ndarray:
    a = np.asarray(arr, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    return a


def _resolve_instrument_columns(data: Dataset, instruments) -> np.ndarray:
    if instruments is None:
        if data.z2.shape[1] == 0:
            raise ConfigError("no instrument columns available")
        return data.z2
    values = getattr(instruments, "values", instruments)
    return _as_columns(values)


def _cluster_meat(M: np.ndarray, eps: np.ndarray, clusters: np.ndarray) -> np.ndarray:
    scores = M * eps[:, None]
    _, inverse = np.unique(clusters, return_inverse=True)
    sums = np.zeros((inverse.max() + 1, M.shape[1]))
    np.add.at(sums, inverse, scores)
    return sums.T @ sums / M.shape[0]


def _meat(M: np.ndarray, eps: np.ndarray, clusters) -> np.ndarray:
    if clusters is None:
        return (M * (eps**2)[:, None]).T @ M / M.shape[0]
    return _cluster_meat(M, eps, np.asarray(clusters))


def _solve_psd(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(A, B)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(A) @ B


def project_regressor(x, z1, instrument_columns) -> np.ndarray:
    """Orthogonal projection of x onto span(1, z1, instrument_columns)."""
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    cols = [np.ones(n), _as_columns(z1)]
    if instrument_columns is not None:
        ic = _as_columns(instrument_columns)
        if ic.shape[1]:
            cols.append(ic)
    M = np.column_stack(cols)
    coef, _, rank, _ = np.linalg.lstsq(M, x, rcond=1e-10)
    return M @ coef


def first_stage_f(data: Dataset, instrument_columns) -> float:
    """Heteroskedasticity-robust Wald F for the instrument block in the
    regression of x on (1, z1, instruments)."""
    ic = _as_columns(instrument_columns)
    n = data.n
    D = np.column_stack([np.ones(n), data.z1, ic])
    q = ic.shape[1]
    theta, _, rank, _ = np.linalg.lstsq(D, data.x, rcond=1e-10)
    resid = data.x - D @ theta
    bread = np.linalg.pinv(D.T @ D / n)
    V = bread @ _meat(D, resid, None) @ bread / n
    sel = slice(D.shape[1] - q, D.shape[1])
    b = theta[sel]
    Vb = V[sel, sel]
    try:
        w = float(b @ np.linalg.solve(Vb, b))
    except np.linalg.LinAlgError:
        w = float(b @ np.linalg.pinv(Vb) @ b)
    return w / q


def fit_2sls(data: Dataset, instruments=None, cluster: bool | None = None) -> IVFit:
    """2SLS with instrument stack (instrument columns, z1, 1).

    ``instruments`` may be raw excluded-instrument columns, a
    GeneratedInstrument, or None (use data.z2). The covariance is the
    heteroskedasticity-robust IV sandwich; passing cluster=True uses the
    dataset's cluster labels for the meat.
    """
    clusters = _resolve_clusters(data, cluster)
    ic = _resolve_instrument_columns(data, instruments)
    n = data.n
    if np.ptp(data.x) <= 0.0:
        raise DegenerateInstrumentError(
            f"endogenous column {data.x_name!r} has zero variance", detail=0.0
        )
    S = np.column_stack([np.ones(n), data.x, data.z1])
    M = np.column_stack([ic, data.z1, np.ones(n)])
    coef, _, rank, _ = np.linalg.lstsq(M, S, rcond=1e-10)
    notes = ()
    if rank < M.shape[1]:
        notes = ("instrument stack is rank deficient; projection used the pseudo-inverse",)
    S_hat = M @ coef
    A_mat = S_hat.T @ S
    sv = np.linalg.svd(A_mat, compute_uv=False)
    if sv[-1] <= 1e-12 * max(sv[0], 1e-300):
        raise DegenerateInstrumentError(
            f"S'P_M S is numerically singular (smallest singular value {sv[-1]:.3e}); "
            "the instruments carry no variation for the endogenous regressor",
            detail=float(sv[-1]),
        )
    theta = np.linalg.solve(A_mat, S_hat.T @ data.y)
    eps = data.y - S @ theta
    A = S.T @ M / n
    Q = M.T @ M / n
    omega = _meat(M, eps, clusters)
    B = _solve_psd(Q, A.T).T  # A Q^{-1}
    bread = np.linalg.pinv(B @ A.T)
    V = bread @ (B @ omega @ B.T) @ bread
    vcov = (V + V.T) / (2.0 * n)
    se = np.sqrt(np.clip(np.diag(vcov), 0.0, None))
    return IVFit(
        theta=theta,
        vcov=vcov,
        se=se,
        method="2sls-analytic",
        n=n,
        param_names=("const", data.x_name, *data.z1_names),
        residuals=eps,
        diagnostics={"first_stage_f": first_stage_f(data, ic)},
        notes=notes,
    )


def _ols_robust(D: np.ndarray, y: np.ndarray, clusters) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = D.shape[0]
    theta, _, rank, _ = np.linalg.lstsq(D, y, rcond=1e-10)
    resid = y - D @ theta
    bread = np.linalg.pinv(D.T @ D / n)
    V = bread @ _meat(D, resid, clusters) @ bread / n
    return theta, (V + V.T) / 2.0, resid


def _resolve_clusters(data: Dataset, cluster):
    if cluster is None or cluster is False:
        return None
    if data.clusters is None:
        raise ConfigError("cluster-robust covariance requested but the dataset has no cluster labels")
    return data.clusters


def fit_plugin_ols(data: Dataset, instruments=None, cluster: bool | None = None) -> IVFit:
    """OLS of y on (1, x_tilde, z1) where x_tilde projects x onto
    span(1, z1, instruments); numerically identical coefficients to
    fit_2sls, with robust OLS standard errors that treat the projected
    regressor as fixed."""
    clusters = _resolve_clusters(data, cluster)
    ic = _resolve_instrument_columns(data, instruments)
    x_tilde = project_regressor(data.x, data.z1, ic)
    D = np.column_stack([np.ones(data.n), x_tilde, data.z1])
    theta, vcov, resid = _ols_robust(D, data.y, clusters)
    return IVFit(
        theta=theta,
        vcov=vcov,
        se=np.sqrt(np.clip(np.diag(vcov), 0.0, None)),
        method="ols-plugin",
        n=data.n,
        param_names=("const", data.x_name, *data.z1_names),
        residuals=resid,
        diagnostics={"first_stage_f": first_stage_f(data, ic)},
    )


def fit_substitute_ols(data: Dataset, substitute, cluster: bool | None = None) -> IVFit:
    """OLS of y on (1, substitute, z1): the study-table plug-in that uses a
    generated prediction directly in place of the endogenous regressor,
    with robust standard errors treating it as fixed."""
    clusters = _resolve_clusters(data, cluster)
    values = np.asarray(getattr(substitute, "values", substitute), dtype=float).ravel()
    if values.size != data.n:
        raise ConfigError("substitute regressor has wrong length")
    D = np.column_stack([np.ones(data.n), values, data.z1])
    theta, vcov, resid = _ols_robust(D, data.y, clusters)
    return IVFit(
        theta=theta,
        vcov=vcov,
        se=np.sqrt(np.clip(np.diag(vcov), 0.0, None)),
        method="ols-substitute",
        n=data.n,
        param_names=("const", data.x_name, *data.z1_names),
        residuals=resid,
    )
