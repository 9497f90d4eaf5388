"""Distributional control function: estimated conditional rank of the
endogenous variable and the augmented outcome regression."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .data import Dataset
from .first_stage import FirstStageFit
from .grids import QuantileGrid
from .iv import IVFit, _ols_robust, _resolve_clusters


@dataclass(frozen=True)
class ControlVariable:
    """Estimated conditional rank of x given the instruments, on the
    trimmed grid scale [tau_1, tau_K]."""

    v_hat: np.ndarray
    grid: QuantileGrid
    crossing_count: int


def estimate_control(fit: FirstStageFit, x) -> ControlVariable:
    """Grid approximation of the conditional distribution at the data:
    v_i = tau_1 + step * #{k : g_k(Z_i) <= x_i}, clamped to [tau_1, tau_K]."""
    xv = np.asarray(x, dtype=float).ravel()
    if xv.size != fit.n:
        raise ValueError("x length does not match the first-stage fit")
    taus = fit.grid.as_array()
    count = (fit.dictionary <= xv[:, None]).sum(axis=1)
    v = np.clip(fit.grid.tau_min + fit.grid.step * count, taus[0], taus[-1])
    if np.ptp(v) < 1e-12:
        warnings.warn(
            "estimated control variable is constant across rows; dictionary may be degenerate",
            stacklevel=2,
        )
    return ControlVariable(v_hat=v, grid=fit.grid, crossing_count=fit.crossing_count())


def fit_drcf(data: Dataset, fit: FirstStageFit, cluster: bool | None = None) -> IVFit:
    """Control-function regression of y on (1, x, z1, control).

    The estimated rank enters through its normal score, matching the
    Gaussian first-stage errors of the simulation designs; coefficients
    are ordered (alpha, beta_x, gamma', beta_v) and the covariance is the
    robust OLS sandwich treating the control as fixed.
    """
    clusters = _resolve_clusters(data, cluster)
    control = estimate_control(fit, data.x)
    notes = ()
    score = norm.ppf(control.v_hat)
    if np.ptp(control.v_hat) < 1e-12:
        notes = ("non-identified-control: constant control variable dropped from the regression",)
        D = np.column_stack([np.ones(data.n), data.x, data.z1])
        names = ("const", data.x_name, *data.z1_names)
    else:
        D = np.column_stack([np.ones(data.n), data.x, data.z1, score])
        names = ("const", data.x_name, *data.z1_names, "v_hat")
    theta, vcov, resid = _ols_robust(D, data.y, clusters)
    return IVFit(
        theta=theta,
        vcov=vcov,
        se=np.sqrt(np.clip(np.diag(vcov), 0.0, None)),
        method="drcf",
        n=data.n,
        param_names=names,
        residuals=resid,
        diagnostics={"crossing_count": control.crossing_count},
        notes=notes,
    )
