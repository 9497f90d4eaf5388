"""Monte Carlo laboratory: designs A/B/C, the ten estimators, and the
bias / RMSE / coverage aggregation."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .control_function import fit_drcf
from .data import Dataset
from .exceptions import ConfigError, QlsivError
from .first_stage import fit_first_stage
from .grids import InstrumentBasis, QuantileGrid
from .instruments import WeightMethod, build_instrument, weights_lasso
from .iv import Z95, fit_2sls, fit_substitute_ols

logger = logging.getLogger(__name__)

DESIGN_CODES = {"A": 1, "B": 2, "C": 3}
ESTIMATOR_IDS = (
    "classic-iv",
    "dr-cf",
    "qls",
    "qls-a",
    "qls-r",
    "qls-r-a",
    "qls-l1",
    "qls-l1-a",
    "qls-l2",
    "qls-l2-a",
)
DEFAULT_STEPS = (0.10, 0.05, 0.01, 0.001)
DISPLAY_NAMES = {
    "classic-iv": "Classic IV",
    "dr-cf": "DR-CF",
    "qls": "Q-LS",
    "qls-a": "Q-LS-a",
    "qls-r": "Q-LS-R",
    "qls-r-a": "Q-LS-R-a",
    "qls-l1": "Q-LS-L1",
    "qls-l1-a": "Q-LS-L1-a",
    "qls-l2": "Q-LS-L2",
    "qls-l2-a": "Q-LS-L2-a",
}


@dataclass(frozen=True)
class DGPSpec:
    """One simulation design point. Structural coefficients are fixed at
    (beta0, beta1, beta_x) = (1, 1, 1); errors are bivariate normal with
    unit variances and the given correlation."""

    design: str
    n: int
    omega: float = 0.0
    gamma_scale: float = 0.5
    sigma0: float = 1.0
    sigma1: float = 3.0
    error_correlation: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if self.design not in DESIGN_CODES:
            raise ConfigError(f"unknown design {self.design!r}")
        if self.n < 10:
            raise ConfigError("n too small")


def _child_rng(spec: DGPSpec, replication_index: int, salt: int = 0) -> np.random.Generator:
    seq = np.random.SeedSequence(
        [
            int(spec.seed) & 0xFFFFFFFF,
            DESIGN_CODES[spec.design],
            int(round(spec.omega * 1000)),
            int(spec.n),
            int(replication_index),
            int(salt),
        ]
    )
    return np.random.default_rng(seq)


def generate(spec: DGPSpec, replication_index: int) -> Dataset:
    """Draw one dataset; deterministic in (spec.seed, replication_index)."""
    rng = _child_rng(spec, replication_index)
    n = spec.n
    z1 = rng.standard_normal(n)
    if spec.design == "C":
        z2 = (rng.random(n) < 0.5).astype(float)
    else:
        z2 = rng.standard_normal(n)
    rho = spec.error_correlation
    e = rng.standard_normal((n, 2))
    eps = e[:, 0]
    nu = rho * e[:, 0] + np.sqrt(1.0 - rho * rho) * e[:, 1]
    if spec.design == "A":
        x = z1 + z2 + nu
    elif spec.design == "B":
        x = z1 - np.cos(spec.omega * z2) + np.exp(spec.gamma_scale * z2) * nu
    else:
        sigma = spec.sigma0 + (spec.sigma1 - spec.sigma0) * z2
        x = z1 + z2 + sigma * nu
    y = 1.0 + z1 + x + eps
    return Dataset(y=y, x=x, z1=z1, z2=z2)


def basis_for_design(design: str) -> InstrumentBasis:
    if design == "C":
        logger.info("design C uses basis quadratic-no-z2sq (binary instrument squares drop)")
        return InstrumentBasis("quadratic-no-z2sq")
    return InstrumentBasis("quadratic-full")


def parse_design(token) -> tuple[str, float]:
    """Accept 'A', 'C', 'B:0.5', ('B', 0.5), ... -> (letter, omega)."""
    if isinstance(token, (tuple, list)):
        letter, omega = token[0], float(token[1] or 0.0)
    else:
        s = str(token).strip()
        if ":" in s:
            letter, _, om = s.partition(":")
            omega = float(om)
        else:
            letter, omega = s, 0.0
    letter = letter.strip().upper()
    if letter not in DESIGN_CODES:
        raise ConfigError(f"unknown design {token!r}")
    if letter != "B" and omega != 0.0:
        raise ConfigError(f"design {letter} takes no omega")
    return letter, omega


@dataclass(frozen=True)
class ReportRow:
    design: str
    omega: float
    n: int
    step: float | None  # None for estimators that do not use the grid
    k: int | None
    estimator: str
    bias: float
    rmse: float
    coverage: float
    mean_se: float
    sd: float
    failures: int
    reps: int


@dataclass(frozen=True)
class SimulationReport:
    rows: tuple[ReportRow, ...]

    def row(self, design: str, n: int, estimator: str, step: float | None = None, omega: float = 0.0) -> ReportRow:
        for r in self.rows:
            if (
                r.design == design
                and r.n == n
                and r.estimator == estimator
                and abs(r.omega - omega) < 1e-12
                and ((r.step is None and step is None) or (r.step is not None and step is not None and abs(r.step - step) < 1e-12))
            ):
                return r
        raise KeyError(f"no report row for {design, omega, n, step, estimator}")


def summarize(betas, ses, failures: int, true_beta: float = 1.0) -> dict:
    """Bias, RMSE, empirical 95% coverage, mean SE, and Monte Carlo SD over
    the successful replications."""
    b = np.asarray(betas, dtype=float)
    s = np.asarray(ses, dtype=float)
    dev = b - true_beta
    cover = float(np.mean(np.abs(dev) <= Z95 * s)) if b.size else float("nan")
    return {
        "bias": float(dev.mean()) if b.size else float("nan"),
        "rmse": float(np.sqrt(np.mean(dev**2))) if b.size else float("nan"),
        "coverage": cover,
        "mean_se": float(s.mean()) if b.size else float("nan"),
        "sd": float(b.std(ddof=1)) if b.size > 1 else 0.0,
        "failures": int(failures),
        "reps": int(b.size),
    }


_METHOD_SALTS = {"ridge": 11, "lasso": 12}


def _estimate_all(spec: DGPSpec, rep: int, steps, estimators) -> dict:
    """Fit every requested estimator on one generated dataset.

    Returns {(step_or_None, estimator): (beta, se) or ('fail', reason)}.
    """
    data = generate(spec, rep)
    out: dict = {}

    def guard(key, fn):
        try:
            fit = fn()
            beta, se = fit.beta, fit.beta_se
            if not (np.isfinite(beta) and np.isfinite(se)):
                raise QlsivError("non-finite estimate")
            out[key] = (float(beta), float(se))
        except (QlsivError, np.linalg.LinAlgError, ValueError) as exc:
            out[key] = ("fail", type(exc).__name__)

    if "classic-iv" in estimators:
        guard((None, "classic-iv"), lambda: fit_2sls(data))
    grid_ests = [e for e in estimators if e != "classic-iv"]
    if not grid_ests:
        return out
    basis = basis_for_design(spec.design)
    for step in steps:
        grid = QuantileGrid(step=step)
        try:
            fs = fit_first_stage(data, basis, grid)
        except (QlsivError, np.linalg.LinAlgError) as exc:
            for est in grid_ests:
                out[(step, est)] = ("fail", type(exc).__name__)
            continue
        if "dr-cf" in grid_ests:
            guard((step, "dr-cf"), lambda: fit_drcf(data, fs))
        if "qls" in grid_ests or "qls-a" in grid_ests:
            gi = build_instrument(fs, data.x, WeightMethod.equal())
            if "qls" in grid_ests:
                guard((step, "qls"), lambda: fit_substitute_ols(data, gi))
            if "qls-a" in grid_ests:
                guard((step, "qls-a"), lambda: fit_2sls(data, gi))
        if "qls-r" in grid_ests or "qls-r-a" in grid_ests:
            seed = _child_rng(spec, rep, salt=_METHOD_SALTS["ridge"]).integers(2**31)
            try:
                gi = build_instrument(fs, data.x, WeightMethod.ridge(), seed=int(seed))
            except QlsivError as exc:
                for est in ("qls-r", "qls-r-a"):
                    if est in grid_ests:
                        out[(step, est)] = ("fail", type(exc).__name__)
            else:
                if "qls-r" in grid_ests:
                    guard((step, "qls-r"), lambda: fit_substitute_ols(data, gi))
                if "qls-r-a" in grid_ests:
                    guard((step, "qls-r-a"), lambda: fit_2sls(data, gi))
        lasso_requested = [e for e in ("qls-l1", "qls-l1-a", "qls-l2", "qls-l2-a") if e in grid_ests]
        if lasso_requested:
            seed = _child_rng(spec, rep, salt=_METHOD_SALTS["lasso"]).integers(2**31)
            try:
                gi2 = build_instrument(fs, data.x, WeightMethod.lasso_coef(), seed=int(seed))
                penalty = gi2.weights.penalty_used
                n_tr = int(np.ceil(0.5 * fs.n))
                w_eq = weights_lasso(
                    fs.dictionary[n_tr:], data.x[n_tr:], penalty,
                    variant="equal-on-support", standardize=True,
                )
                eq_values = fs.dictionary @ w_eq.w
            except QlsivError as exc:
                for est in lasso_requested:
                    out[(step, est)] = ("fail", type(exc).__name__)
            else:
                if "qls-l1" in grid_ests:
                    guard((step, "qls-l1"), lambda: fit_substitute_ols(data, eq_values))
                if "qls-l1-a" in grid_ests:
                    guard((step, "qls-l1-a"), lambda: fit_2sls(data, eq_values))
                if "qls-l2" in grid_ests:
                    guard((step, "qls-l2"), lambda: fit_substitute_ols(data, gi2))
                if "qls-l2-a" in grid_ests:
                    guard((step, "qls-l2-a"), lambda: fit_2sls(data, gi2))
    return out


def _replication_worker(payload):
    master_seed, design, omega, n, rep, steps, estimators = payload
    spec = DGPSpec(design=design, n=n, omega=omega, seed=master_seed)
    return rep, _estimate_all(spec, rep, steps, estimators)


def run_study(
    designs,
    ns,
    grid_steps,
    estimators,
    replications: int,
    master_seed: int,
    parallelism: int = 1,
    true_beta: float = 1.0,
) -> SimulationReport:
    """Run every estimator on every (design, n) cell for ``replications``
    independent datasets and aggregate per (design, n, K, estimator).

    Replication r of a cell is seeded by a fixed hash of (master_seed,
    design, omega, n, r), so the report is identical for any parallelism
    degree. Estimator failures are excluded from the aggregates and
    counted.
    """
    if replications < 2:
        raise ConfigError("need at least 2 replications")
    design_points = [parse_design(d) for d in designs]
    steps = tuple(float(s) for s in grid_steps)
    estimators = tuple(estimators)
    for est in estimators:
        if est not in ESTIMATOR_IDS:
            raise ConfigError(f"unknown estimator id {est!r}")
    rows: list[ReportRow] = []
    for letter, omega in design_points:
        for n in ns:
            payloads = [
                (master_seed, letter, omega, int(n), rep, steps, estimators)
                for rep in range(replications)
            ]
            if parallelism > 1:
                with ProcessPoolExecutor(max_workers=parallelism) as pool:
                    results = list(
                        pool.map(_replication_worker, payloads, chunksize=max(1, replications // (8 * parallelism)))
                    )
            else:
                results = [_replication_worker(p) for p in payloads]
            results.sort(key=lambda t: t[0])
            per_rep = [r[1] for r in results]
            for est in estimators:
                est_steps = (None,) if est == "classic-iv" else steps
                for step in est_steps:
                    betas, ses, failures = [], [], 0
                    for rep_out in per_rep:
                        res = rep_out.get((step, est))
                        if res is None or res[0] == "fail":
                            failures += 1
                            continue
                        betas.append(res[0])
                        ses.append(res[1])
                    stats = summarize(betas, ses, failures, true_beta=true_beta)
                    k = None if step is None else QuantileGrid(step=step).k
                    rows.append(
                        ReportRow(
                            design=letter,
                            omega=omega,
                            n=int(n),
                            step=step,
                            k=k,
                            estimator=est,
                            **stats,
                        )
                    )
    return SimulationReport(rows=tuple(rows))
