"""Aggregating the quantile dictionary into a single generated instrument.

Weight choices: equal, least squares (the optimal mean-square predictor),
ridge, and two LASSO variants. Ridge/LASSO penalties marked "cv-selected"
are tuned by K-fold cross-validation on the first half of the rows; the
final weights are then estimated on the second half and the instrument is
evaluated on all rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import lasso_cd, lasso_path_sse
from .exceptions import ConfigError, DegenerateInstrumentError, QlsivError
from .first_stage import FirstStageFit

WEIGHT_KINDS = ("equal", "ols", "ridge", "lasso-equal-on-support", "lasso-coefficients")
CV_SELECTED = "cv-selected"
SV_CUTOFF = 1e-10  # relative singular-value cutoff for pseudo-inverse solves


@dataclass(frozen=True)
class WeightMethod:
    kind: str
    penalty: float | str = CV_SELECTED
    cv_folds: int = 10
    split_fraction: float = 0.5

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise ConfigError(f"unknown weight method {self.kind!r}; choose from {WEIGHT_KINDS}")
        if isinstance(self.penalty, str):
            if self.penalty != CV_SELECTED:
                raise ConfigError(f"penalty must be a number or {CV_SELECTED!r}")
        elif self.penalty < 0:
            raise ConfigError("penalty must be nonnegative")
        if self.cv_folds < 2:
            raise ConfigError("cv_folds must be at least 2")
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError("split_fraction must be in (0, 1)")

    @classmethod
    def equal(cls) -> "WeightMethod":
        return cls(kind="equal", penalty=0.0)

    @classmethod
    def ols(cls) -> "WeightMethod":
        return cls(kind="ols", penalty=0.0)

    @classmethod
    def ridge(cls, penalty=CV_SELECTED) -> "WeightMethod":
        return cls(kind="ridge", penalty=penalty)

    @classmethod
    def lasso_equal(cls, penalty=CV_SELECTED) -> "WeightMethod":
        return cls(kind="lasso-equal-on-support", penalty=penalty)

    @classmethod
    def lasso_coef(cls, penalty=CV_SELECTED) -> "WeightMethod":
        return cls(kind="lasso-coefficients", penalty=penalty)


@dataclass(frozen=True)
class InstrumentWeights:
    method: WeightMethod
    w: np.ndarray
    selected_support: tuple[int, ...] | None = None
    penalty_used: float | None = None
    training_indices: np.ndarray | None = None
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class GeneratedInstrument:
    values: np.ndarray
    weights: InstrumentWeights
    provenance: dict


def weights_ols(dictionary, x) -> InstrumentWeights:
    """Minimum-norm least-squares weights; fitted values are the orthogonal
    projection of x onto the dictionary's column span."""
    G = np.asarray(dictionary, dtype=float)
    x = np.asarray(x, dtype=float).ravel()
    if not np.any(np.abs(G) > 0):
        raise DegenerateInstrumentError("dictionary is identically zero; projection degenerate")
    w, _, rank, _ = np.linalg.lstsq(G, x, rcond=SV_CUTOFF)
    notes = ()
    if rank < G.shape[1]:
        notes = (f"dictionary rank {rank} < {G.shape[1]} columns; minimum-norm solution used",)
    return InstrumentWeights(method=WeightMethod.ols(), w=w, penalty_used=0.0, notes=notes)


def weights_ridge(dictionary, x, penalty: float, center: bool = False) -> InstrumentWeights:
    """Closed-form ridge weights (G'G + n*penalty*I)^{-1} G'x.

    With ``center=True`` the Gram quantities are computed on demeaned
    columns and a demeaned x (an unpenalized intercept); the returned
    weights still apply to the raw dictionary, the dropped intercept being
    a location shift that no downstream estimator depends on.
    """
    if penalty < 0:
        raise ConfigError("ridge penalty must be nonnegative")
    G = np.asarray(dictionary, dtype=float)
    xv = np.asarray(x, dtype=float).ravel()
    n, K = G.shape
    if center:
        G = G - G.mean(axis=0)
        xv = xv - xv.mean()
    if penalty == 0.0:
        w, *_ = np.linalg.lstsq(G, xv, rcond=SV_CUTOFF)
    else:
        w = np.linalg.solve(G.T @ G + n * penalty * np.eye(K), G.T @ xv)
    return InstrumentWeights(
        method=WeightMethod.ridge(penalty), w=w, penalty_used=float(penalty)
    )


def lasso_penalty_max(dictionary, x) -> float:
    """Smallest penalty with empty support: max_k |2 G_k'x| / n."""
    G = np.asarray(dictionary, dtype=float)
    xv = np.asarray(x, dtype=float).ravel()
    return float(2.0 * np.max(np.abs(G.T @ xv)) / G.shape[0])


def _standardized(G, x):
    mu = G.mean(axis=0)
    sd = G.std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    return (G - mu) / sd, x - x.mean(), sd


def weights_lasso(
    dictionary,
    x,
    penalty: float,
    variant: str = "coefficients",
    refit: bool = False,
    standardize: bool = False,
    tol: float = 1e-12,
    max_pass: int = 5000,
) -> InstrumentWeights:
    """Coordinate-descent solution of (1/n)||x - G w||^2 + penalty*||w||_1.

    variant="equal-on-support" replaces the nonzero coefficients with
    1/|support|; refit=True re-estimates the support coefficients by least
    squares (post-LASSO). With standardize=True the solver runs on
    centered unit-variance columns (and centered x) and back-transforms
    the coefficients to the raw scale.
    """
    if variant not in ("coefficients", "equal-on-support"):
        raise ConfigError(f"unknown lasso variant {variant!r}")
    if penalty < 0:
        raise ConfigError("lasso penalty must be nonnegative")
    G = np.asarray(dictionary, dtype=float)
    xv = np.asarray(x, dtype=float).ravel()
    n, K = G.shape
    if standardize:
        Gs, xs, sd = _standardized(G, xv)
    else:
        Gs, xs, sd = G, xv, np.ones(K)
    Gs = np.ascontiguousarray(Gs)
    H = Gs.T @ Gs
    b = Gs.T @ xs
    w = lasso_cd(H, b, n, float(penalty), np.zeros(K), max_pass, tol)
    support = np.abs(w) > 0
    if not support.any():
        raise DegenerateInstrumentError(
            f"empty LASSO support at penalty {penalty:g}; no quantile column selected",
            detail=float(penalty),
        )
    w = w / sd
    kind = "lasso-equal-on-support" if variant == "equal-on-support" else "lasso-coefficients"
    if variant == "equal-on-support":
        w = np.where(support, 1.0 / support.sum(), 0.0)
    elif refit:
        w = np.zeros(K)
        w[support], *_ = np.linalg.lstsq(G[:, support], xv, rcond=SV_CUTOFF)
    return InstrumentWeights(
        method=WeightMethod(kind=kind, penalty=float(penalty)),
        w=w,
        selected_support=tuple(int(i) for i in np.flatnonzero(support)),
        penalty_used=float(penalty),
    )


def ridge_candidate_grid(dictionary, num: int = 50) -> np.ndarray:
    """Log-spaced ridge penalties spanning [1e-4, 1e2] times the mean
    (centered) column second moment."""
    G = np.asarray(dictionary, dtype=float)
    Gc = G - G.mean(axis=0)
    scale = float(np.mean(np.sum(Gc * Gc, axis=0) / G.shape[0]))
    scale = max(scale, 1e-300)
    return np.geomspace(1e-4 * scale, 1e2 * scale, num)


def lasso_candidate_grid(dictionary, x, num: int = 50, standardize: bool = True) -> np.ndarray:
    """Log-spaced lasso penalties spanning [1e-5, 1] times the empty-support
    threshold of the (standardized) problem."""
    G = np.asarray(dictionary, dtype=float)
    xv = np.asarray(x, dtype=float).ravel()
    if standardize:
        Gs, xs, _ = _standardized(G, xv)
        lam_max = float(2.0 * np.max(np.abs(Gs.T @ xs)) / G.shape[0])
    else:
        lam_max = lasso_penalty_max(G, xv)
    lam_max = max(lam_max, 1e-300)
    return np.geomspace(1e-5 * lam_max, lam_max, num)


def cv_folds_assignment(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Deterministic fold assignment: a seeded permutation of row indices
    split into ``folds`` contiguous blocks."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, n]))
    return np.array_split(rng.permutation(n), folds)


def select_penalty_cv(
    dictionary_train,
    x_train,
    folds: int,
    candidate_grid,
    seed: int,
    kind: str = "ridge",
    standardize: bool = True,
) -> float:
    """Candidate penalty minimizing mean out-of-fold squared prediction
    error of x; summation over folds in fold order, ties broken toward
    the smaller candidate."""
    G = np.asarray(dictionary_train, dtype=float)
    xv = np.asarray(x_train, dtype=float).ravel()
    n, K = G.shape
    if folds < 2:
        raise ConfigError("cross-validation needs at least 2 folds")
    if n < folds:
        raise ConfigError(f"{n} training rows cannot form {folds} folds")
    candidates = np.sort(np.asarray(candidate_grid, dtype=float))
    if candidates.size == 0:
        raise ConfigError("empty candidate grid")
    sse = np.zeros(candidates.size)
    for fold in cv_folds_assignment(n, folds, seed):
        mask = np.ones(n, dtype=bool)
        mask[fold] = False
        G_tr, x_tr = G[mask], xv[mask]
        G_te, x_te = G[fold], xv[fold]
        if kind == "ridge":
            mu = G_tr.mean(axis=0)
            Gc, xc = G_tr - mu, x_tr - x_tr.mean()
            off = x_tr.mean()
            vals, vecs = np.linalg.eigh(Gc.T @ Gc)
            vals = np.clip(vals, 0.0, None)
            proj = vecs.T @ (Gc.T @ xc)
            Gte_c = G_te - mu
            for ci, lam in enumerate(candidates):
                denom = vals + len(x_tr) * lam
                denom[denom <= 0] = np.inf
                w = vecs @ (proj / denom)
                r = x_te - (off + Gte_c @ w)
                sse[ci] += float(r @ r)
        elif kind == "lasso":
            if standardize:
                mu = G_tr.mean(axis=0)
                sd = G_tr.std(axis=0)
                sd = np.where(sd < 1e-12, 1.0, sd)
                off = x_tr.mean()
                Gs = np.ascontiguousarray((G_tr - mu) / sd)
                xs = np.ascontiguousarray(x_tr - off)
                Gte_s = np.ascontiguousarray((G_te - mu) / sd)
                xte_s = np.ascontiguousarray(x_te - off)
            else:
                Gs = np.ascontiguousarray(G_tr)
                xs = np.ascontiguousarray(x_tr)
                Gte_s = np.ascontiguousarray(G_te)
                xte_s = np.ascontiguousarray(x_te)
            H = Gs.T @ Gs
            b = Gs.T @ xs
            lasso_path_sse(H, b, len(xs), Gte_s, xte_s, candidates, np.zeros(K), sse)
        else:
            raise ConfigError(f"unknown cv kind {kind!r}")
    return float(candidates[int(np.argmin(sse))])


def build_instrument(
    fit: FirstStageFit | np.ndarray,
    x,
    method: WeightMethod,
    seed: int = 0,
) -> GeneratedInstrument:
    """Turn the quantile dictionary into one generated instrument.

    equal / ols use all rows. ridge / lasso with a cv-selected penalty
    split the rows: the first ceil(split_fraction * n) rows pick the
    penalty by ``select_penalty_cv``, the remaining rows estimate the
    final weights; the instrument is evaluated on all rows either way.
    """
    if isinstance(fit, FirstStageFit):
        G = fit.dictionary
        provenance = {
            "grid": (fit.grid.tau_min, fit.grid.step, fit.grid.k),
            "basis": fit.basis.spec,
        }
    else:
        G = np.asarray(fit, dtype=float)
        provenance = {"grid": None, "basis": None}
    xv = np.asarray(x, dtype=float).ravel()
    n, K = G.shape
    if xv.size != n:
        raise ConfigError("x length does not match the dictionary rows")
    provenance["method"] = method.kind

    if method.kind == "equal":
        weights = InstrumentWeights(method=method, w=np.full(K, 1.0 / K), penalty_used=0.0)
    elif method.kind == "ols":
        weights = weights_ols(G, xv)
    else:
        if method.penalty == CV_SELECTED:
            n_tr = int(np.ceil(method.split_fraction * n))
            if n_tr < method.cv_folds or n - n_tr < 1:
                raise ConfigError(
                    f"sample split {n_tr}/{n - n_tr} too small for {method.cv_folds}-fold CV"
                )
            G_tr, x_tr = G[:n_tr], xv[:n_tr]
            G_est, x_est = G[n_tr:], xv[n_tr:]
            train_idx = np.arange(n_tr)
        else:
            G_tr = x_tr = None
            G_est, x_est = G, xv
            train_idx = None
        if method.kind == "ridge":
            if method.penalty == CV_SELECTED:
                penalty = select_penalty_cv(
                    G_tr, x_tr, method.cv_folds, ridge_candidate_grid(G_tr), seed, kind="ridge"
                )
            else:
                penalty = float(method.penalty)
            weights = weights_ridge(G_est, x_est, penalty, center=True)
        else:
            variant = (
                "equal-on-support" if method.kind == "lasso-equal-on-support" else "coefficients"
            )
            if method.penalty == CV_SELECTED:
                penalty = select_penalty_cv(
                    G_tr,
                    x_tr,
                    method.cv_folds,
                    lasso_candidate_grid(G_tr, x_tr),
                    seed,
                    kind="lasso",
                )
            else:
                penalty = float(method.penalty)
            weights = weights_lasso(G_est, x_est, penalty, variant=variant, standardize=True)
        weights = InstrumentWeights(
            method=method,
            w=weights.w,
            selected_support=weights.selected_support,
            penalty_used=weights.penalty_used,
            training_indices=train_idx,
            notes=weights.notes,
        )
    values = G @ weights.w
    return GeneratedInstrument(values=values, weights=weights, provenance=provenance)
