import numpy as np
import pytest
from numpy.testing import assert_allclose

import qlsiv
from qlsiv import fit_2sls, fit_plugin_ols, fit_substitute_ols, project_regressor
from qlsiv.exceptions import ConfigError, DegenerateInstrumentError
from qlsiv.iv import _meat

from conftest import random_small_dataset


def exact_2sls_oracle(data, instrument):
    """Direct small-matrix (S'P_M S)^{-1} S'P_M y."""
    n = data.n
    S = np.column_stack([np.ones(n), data.x, data.z1])
    M = np.column_stack([instrument, data.z1, np.ones(n)])
    P = M @ np.linalg.inv(M.T @ M) @ M.T
    return np.linalg.inv(S.T @ P @ S) @ (S.T @ P @ data.y)


class TestFit2sls:
    def test_exogenous_instrument_equals_ols(self):
        rng = np.random.default_rng(0)
        data = random_small_dataset(rng, n=80)
        fit = fit_2sls(data, instruments=data.x)
        D = np.column_stack([np.ones(data.n), data.x, data.z1])
        ols = np.linalg.lstsq(D, data.y, rcond=None)[0]
        assert_allclose(fit.theta, ols, atol=1e-10)

    def test_small_sample_explicit_oracle(self):
        y = np.array([1.0, 2.0, 1.5, 3.0, 2.5, 0.5])
        x = np.array([0.5, 1.0, 0.8, 1.6, 1.2, 0.3])
        z1 = np.array([0.1, -0.2, 0.0, 0.3, -0.1, 0.2])
        z2 = np.array([1.0, 2.0, 1.5, 3.0, 2.2, 0.8])
        data = qlsiv.Dataset(y=y, x=x, z1=z1, z2=z2)
        fit = fit_2sls(data)
        assert_allclose(fit.theta, exact_2sls_oracle(data, z2), atol=1e-10)

    def test_instrument_scale_invariance(self):
        rng = np.random.default_rng(1)
        data = random_small_dataset(rng, n=60)
        instr = data.z2[:, 0] + 0.1 * rng.standard_normal(60)
        f1 = fit_2sls(data, instruments=instr)
        f2 = fit_2sls(data, instruments=-57.3 * instr)
        assert_allclose(f1.theta, f2.theta, atol=1e-10)
        assert_allclose(f1.se, f2.se, atol=1e-10)

    def test_sandwich_reduces_under_homoskedasticity(self):
        rng = np.random.default_rng(2)
        data = random_small_dataset(rng, n=70)
        fit = fit_2sls(data)
        n = data.n
        S = np.column_stack([np.ones(n), data.x, data.z1])
        M = np.column_stack([data.z2, data.z1, np.ones(n)])
        eps = fit.residuals
        sigma2 = float(np.mean(eps**2))
        A = S.T @ M / n
        Q = M.T @ M / n
        # impose homoskedastic residuals in the meat via the package helper
        omega = _meat(M, np.full(n, np.sqrt(sigma2)), None)
        B = A @ np.linalg.inv(Q)
        bread = np.linalg.inv(B @ A.T)
        V_sand = bread @ (B @ omega @ B.T) @ bread
        assert_allclose(V_sand, sigma2 * bread, atol=1e-10)

    def test_singleton_clusters_match_heteroskedastic_meat(self):
        rng = np.random.default_rng(3)
        M = rng.standard_normal((40, 3))
        eps = rng.standard_normal(40)
        het = _meat(M, eps, None)
        clustered = _meat(M, eps, np.arange(40))
        assert_allclose(het, clustered, atol=0)

    def test_cluster_robust_runs_and_differs(self):
        rng = np.random.default_rng(4)
        data = random_small_dataset(rng, n=100)
        clustered = qlsiv.Dataset(
            y=data.y, x=data.x, z1=data.z1, z2=data.z2, clusters=np.repeat(np.arange(20), 5)
        )
        f_het = fit_2sls(clustered)
        f_cl = fit_2sls(clustered, cluster=True)
        assert_allclose(f_het.theta, f_cl.theta, atol=0)
        assert not np.allclose(f_het.se, f_cl.se)

    def test_cluster_requested_without_labels(self):
        rng = np.random.default_rng(5)
        data = random_small_dataset(rng)
        with pytest.raises(ConfigError):
            fit_2sls(data, cluster=True)

    def test_degenerate_instrument_raises(self):
        rng = np.random.default_rng(6)
        data = random_small_dataset(rng, n=50)
        with pytest.raises(DegenerateInstrumentError) as err:
            fit_2sls(data, instruments=np.zeros(50))
        assert err.value.detail is not None

    def test_constant_endogenous_zero_variance(self):
        rng = np.random.default_rng(7)
        n = 40
        data = qlsiv.Dataset(
            y=rng.standard_normal(n),
            x=np.full(n, 2.0),
            z1=rng.standard_normal(n),
            z2=rng.standard_normal(n),
        )
        with pytest.raises(DegenerateInstrumentError, match="zero variance"):
            fit_2sls(data)

    def test_first_stage_f_reported(self):
        rng = np.random.default_rng(8)
        data = random_small_dataset(rng, n=120)
        fit = fit_2sls(data)
        assert fit.diagnostics["first_stage_f"] > 10


class TestPluginEquivalence:
    @pytest.mark.parametrize("seed", range(8))
    def test_matches_2sls_coefficients(self, seed):
        rng = np.random.default_rng(1000 + seed)
        data = random_small_dataset(rng)
        instr = np.column_stack([data.z2, data.z2**2])
        f_iv = fit_2sls(data, instruments=instr)
        f_pl = fit_plugin_ols(data, instruments=instr)
        assert_allclose(f_pl.theta, f_iv.theta, rtol=1e-8, atol=1e-10)
        assert f_pl.method == "ols-plugin"

    def test_plugin_equals_ols_when_span_contains_x(self):
        rng = np.random.default_rng(9)
        data = random_small_dataset(rng, n=60)
        f_pl = fit_plugin_ols(data, instruments=data.x)
        D = np.column_stack([np.ones(data.n), data.x, data.z1])
        ols = np.linalg.lstsq(D, data.y, rcond=None)[0]
        assert_allclose(f_pl.theta, ols, atol=1e-10)


class TestProjectRegressor:
    def test_idempotent(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal(50)
        z1 = rng.standard_normal(50)
        cols = rng.standard_normal((50, 2))
        once = project_regressor(x, z1, cols)
        twice = project_regressor(once, z1, cols)
        assert_allclose(twice, once, atol=1e-10)

    def test_in_span_returns_itself(self):
        rng = np.random.default_rng(11)
        z1 = rng.standard_normal(30)
        cols = rng.standard_normal((30, 2))
        x = 1.0 + 2.0 * z1 - cols[:, 0] + 0.5 * cols[:, 1]
        assert_allclose(project_regressor(x, z1, cols), x, atol=1e-10)

    def test_empty_instruments_projects_on_controls(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal(40)
        z1 = rng.standard_normal(40)
        got = project_regressor(x, z1, np.empty((40, 0)))
        D = np.column_stack([np.ones(40), z1])
        want = D @ np.linalg.lstsq(D, x, rcond=None)[0]
        assert_allclose(got, want, atol=1e-12)

    def test_matches_hat_matrix_oracle(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal(10)
        z1 = rng.standard_normal(10)
        cols = rng.standard_normal((10, 1))
        M = np.column_stack([np.ones(10), z1, cols])
        want = M @ np.linalg.inv(M.T @ M) @ M.T @ x
        assert_allclose(project_regressor(x, z1, cols), want, atol=1e-10)


class TestIVFitStructure:
    def test_se_vcov_consistency(self):
        rng = np.random.default_rng(14)
        data = random_small_dataset(rng, n=90)
        fit = fit_2sls(data)
        assert_allclose(fit.se, np.sqrt(np.diag(fit.vcov)), atol=1e-14)
        assert_allclose(fit.vcov, fit.vcov.T, atol=1e-10)

    def test_conf_int_halfwidth(self):
        rng = np.random.default_rng(15)
        data = random_small_dataset(rng, n=90)
        fit = fit_2sls(data)
        ci = fit.conf_int()
        assert_allclose(ci[:, 1] - ci[:, 0], 2 * 1.96 * fit.se, atol=1e-12)


class TestSubstituteOls:
    def test_matches_direct_regression(self):
        rng = np.random.default_rng(16)
        data = random_small_dataset(rng, n=70)
        sub = data.z2[:, 0] * 0.8 + 0.1
        fit = fit_substitute_ols(data, sub)
        D = np.column_stack([np.ones(data.n), sub, data.z1])
        want = np.linalg.lstsq(D, data.y, rcond=None)[0]
        assert_allclose(fit.theta, want, atol=1e-10)
        assert fit.method == "ols-substitute"
