import numpy as np
import pytest
from numpy.testing import assert_allclose

import qlsiv
from qlsiv import (
    WeightMethod,
    build_instrument,
    lasso_penalty_max,
    select_penalty_cv,
    weights_lasso,
    weights_ols,
    weights_ridge,
)
from qlsiv.exceptions import ConfigError, DegenerateInstrumentError
from qlsiv.instruments import cv_folds_assignment

from conftest import inv3, lasso_sign_enumeration_oracle


class TestWeightsOls:
    def test_single_column_projection_onto_itself(self):
        x = np.array([1.0, -2.0, 0.5, 4.0])
        w = weights_ols(x[:, None], x)
        assert w.w[0] == pytest.approx(1.0, abs=1e-12)

    def test_orthonormal_columns(self):
        G = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
        x = np.array([3.0, 4.0, 5.0])
        w = weights_ols(G, x)
        assert_allclose(w.w, [3.0, 4.0], atol=1e-12)
        assert_allclose(G @ w.w, [3.0, 4.0, 0.0], atol=1e-12)

    def test_matches_normal_equations_oracle(self):
        rng = np.random.default_rng(7)
        G = rng.standard_normal((20, 3))
        x = rng.standard_normal(20)
        w = weights_ols(G, x)
        oracle = inv3(G.T @ G) @ (G.T @ x)
        assert_allclose(w.w, oracle, atol=1e-8)

    def test_zero_dictionary_degenerate(self):
        with pytest.raises(DegenerateInstrumentError):
            weights_ols(np.zeros((10, 3)), np.arange(10.0))

    def test_rank_deficiency_note(self):
        rng = np.random.default_rng(8)
        a = rng.standard_normal(15)
        G = np.column_stack([a, 2 * a, rng.standard_normal(15)])
        w = weights_ols(G, rng.standard_normal(15))
        assert w.notes


class TestProjectionInvariants:
    def test_orthogonality_and_relevance(self, design_a_small, design_a_fs):
        x = design_a_small.x
        gi = build_instrument(design_a_fs, x, WeightMethod.ols())
        G, h = design_a_fs.dictionary, gi.values
        n = len(x)
        r = x - h
        assert np.max(np.abs(r @ G)) / n <= 1e-8
        assert (x @ h) / n == pytest.approx((h @ h) / n, abs=1e-8)
        # relevance dichotomy: nonzero projection => cov(x, h) = var(h)
        assert (h @ h) / n > 1e-8
        xc, hc = x - x.mean(), h - h.mean()
        assert (xc @ hc) / n == pytest.approx((hc @ hc) / n, abs=1e-8)
        assert (xc @ hc) / n > 0


class TestWeightsRidge:
    def test_zero_penalty_equals_ols(self):
        rng = np.random.default_rng(9)
        G = rng.standard_normal((25, 4))
        x = rng.standard_normal(25)
        assert_allclose(weights_ridge(G, x, 0.0).w, weights_ols(G, x).w, atol=1e-8)

    def test_huge_penalty_shrinks_to_zero(self):
        rng = np.random.default_rng(10)
        G = rng.standard_normal((30, 5))
        x = rng.standard_normal(30)
        assert np.max(np.abs(weights_ridge(G, x, 1e12).w)) < 1e-6

    def test_matches_closed_form_oracle(self):
        rng = np.random.default_rng(11)
        G = rng.standard_normal((20, 3))
        x = rng.standard_normal(20)
        lam = 0.5
        w = weights_ridge(G, x, lam)
        oracle = inv3(G.T @ G + 20 * lam * np.eye(3)) @ (G.T @ x)
        assert_allclose(w.w, oracle, atol=1e-10)

    def test_norm_monotone_in_penalty(self):
        rng = np.random.default_rng(12)
        G = rng.standard_normal((40, 6))
        x = G @ rng.standard_normal(6) + rng.standard_normal(40)
        lams = [0.0, 0.01, 0.1, 1.0, 10.0]
        norms = [np.linalg.norm(weights_ridge(G, x, lam).w) for lam in lams]
        assert all(a >= b - 1e-12 for a, b in zip(norms, norms[1:]))

    def test_negative_penalty_rejected(self):
        with pytest.raises(ConfigError):
            weights_ridge(np.ones((5, 1)), np.ones(5), -1.0)


class TestWeightsLasso:
    def test_zero_penalty_equals_ols(self):
        rng = np.random.default_rng(13)
        G = rng.standard_normal((40, 4))
        x = G @ np.array([1.0, -2.0, 0.5, 0.0]) + 0.1 * rng.standard_normal(40)
        w = weights_lasso(G, x, 0.0)
        assert_allclose(w.w, weights_ols(G, x).w, atol=1e-6)

    def test_above_threshold_empty_support(self):
        rng = np.random.default_rng(14)
        G = rng.standard_normal((30, 3))
        x = rng.standard_normal(30)
        lam_max = lasso_penalty_max(G, x)
        with pytest.raises(DegenerateInstrumentError):
            weights_lasso(G, x, 1.01 * lam_max)

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_sign_enumeration_oracle(self, seed):
        rng = np.random.default_rng(20 + seed)
        G = rng.standard_normal((30, 4))
        G[:, 0] *= 3.0  # one dominant column
        x = G @ np.array([1.5, 0.3, 0.0, -0.2]) + 0.2 * rng.standard_normal(30)
        lam = 0.3 * lasso_penalty_max(G, x)
        w = weights_lasso(G, x, lam)
        w_star, f_star = lasso_sign_enumeration_oracle(G, x, lam)
        support = np.flatnonzero(np.abs(w.w) > 1e-12)
        support_star = np.flatnonzero(np.abs(w_star) > 1e-12)
        assert set(support) == set(support_star)
        assert np.all(np.sign(w.w[support]) == np.sign(w_star[support_star]))
        assert_allclose(w.w, w_star, atol=1e-6)

    @pytest.mark.parametrize("seed", range(4))
    def test_kkt_conditions(self, seed):
        rng = np.random.default_rng(30 + seed)
        n = 50
        G = rng.standard_normal((n, 6))
        x = G @ rng.standard_normal(6) + rng.standard_normal(n)
        lam = 0.2 * lasso_penalty_max(G, x)
        w = weights_lasso(G, x, lam)
        r = x - G @ w.w
        grad = 2.0 * (G.T @ r) / n
        on = np.abs(w.w) > 1e-12
        assert np.all(np.abs(grad[~on]) <= lam + 1e-6)
        assert_allclose(grad[on], lam * np.sign(w.w[on]), atol=1e-6)

    def test_equal_on_support_variant(self):
        rng = np.random.default_rng(15)
        G = rng.standard_normal((40, 5))
        x = G @ np.array([2.0, 0.0, 1.0, 0.0, 0.0]) + 0.1 * rng.standard_normal(40)
        lam = 0.2 * lasso_penalty_max(G, x)
        w = weights_lasso(G, x, lam, variant="equal-on-support")
        support = np.asarray(w.selected_support)
        assert_allclose(w.w[support], 1.0 / support.size)
        assert np.all(w.w[np.setdiff1d(np.arange(5), support)] == 0.0)

    def test_post_lasso_refit(self):
        rng = np.random.default_rng(16)
        G = rng.standard_normal((60, 5))
        x = G @ np.array([2.0, 0.0, 1.0, 0.0, 0.0]) + 0.1 * rng.standard_normal(60)
        lam = 0.2 * lasso_penalty_max(G, x)
        w = weights_lasso(G, x, lam, refit=True)
        support = np.asarray(w.selected_support)
        restricted, *_ = np.linalg.lstsq(G[:, support], x, rcond=None)
        assert_allclose(w.w[support], restricted, atol=1e-8)


class TestSelectPenaltyCv:
    def test_singleton_grid(self):
        rng = np.random.default_rng(17)
        G = rng.standard_normal((50, 3))
        x = rng.standard_normal(50)
        assert select_penalty_cv(G, x, 5, [0.7], seed=1) == pytest.approx(0.7)

    def test_noiseless_span_selects_zero(self):
        rng = np.random.default_rng(18)
        G = rng.standard_normal((60, 3))
        x = G @ np.array([1.0, -1.0, 2.0])
        assert select_penalty_cv(G, x, 5, [0.0, 10.0], seed=3, kind="ridge") == 0.0

    def test_matches_independent_cv_recompute(self):
        # recompute the out-of-fold MSE curve with an independent loop
        spec = qlsiv.DGPSpec(design="C", n=400, seed=77)
        data = qlsiv.generate(spec, 0)
        fs = qlsiv.fit_first_stage(
            data, qlsiv.InstrumentBasis("quadratic-no-z2sq"), qlsiv.QuantileGrid(step=0.10)
        )
        G, x = fs.dictionary[:200], data.x[:200]
        cands = np.geomspace(1e-4, 1e2, 12)
        chosen = select_penalty_cv(G, x, 4, cands, seed=5, kind="ridge")
        n = len(x)
        sse = np.zeros(len(cands))
        for fold in cv_folds_assignment(n, 4, seed=5):
            mask = np.ones(n, bool)
            mask[fold] = False
            Gtr, xtr = G[mask], x[mask]
            mu, off = Gtr.mean(axis=0), xtr.mean()
            Gc, xc = Gtr - mu, xtr - off
            for ci, lam in enumerate(cands):
                w = np.linalg.solve(Gc.T @ Gc + len(xtr) * lam * np.eye(G.shape[1]), Gc.T @ xc)
                r = x[fold] - (off + (G[fold] - mu) @ w)
                sse[ci] += r @ r
        assert chosen == pytest.approx(cands[int(np.argmin(sse))])

    def test_too_few_rows(self):
        with pytest.raises(ConfigError):
            select_penalty_cv(np.ones((3, 1)), np.ones(3), 5, [0.1], seed=0)


class TestBuildInstrument:
    def test_equal_weights_are_row_means(self, design_a_small, design_a_fs):
        gi = build_instrument(design_a_fs, design_a_small.x, WeightMethod.equal())
        assert_allclose(gi.values, design_a_fs.dictionary.mean(axis=1), atol=1e-12)

    def test_ols_instrument_tracks_linear_fit_design_a(self):
        spec = qlsiv.DGPSpec(design="A", n=10_000, seed=21)
        data = qlsiv.generate(spec, 0)
        fs = qlsiv.fit_first_stage(data, qlsiv.InstrumentBasis(), qlsiv.QuantileGrid(step=0.01))
        gi = build_instrument(fs, data.x, WeightMethod.ols())
        lin = np.column_stack([np.ones(data.n), data.z1, data.z2])
        fitted = lin @ np.linalg.lstsq(lin, data.x, rcond=None)[0]
        assert np.corrcoef(gi.values, fitted)[0, 1] > 0.99

    def test_pure_variance_design_has_no_excluded_signal(self):
        spec = qlsiv.DGPSpec(design="B", n=100_000, omega=0.0, seed=22)
        data = qlsiv.generate(spec, 0)
        fs = qlsiv.fit_first_stage(data, qlsiv.InstrumentBasis("linear"), qlsiv.QuantileGrid(step=0.10))
        gi = build_instrument(fs, data.x, WeightMethod.ols())
        D = np.column_stack([np.ones(data.n), data.z1])
        resid_h = gi.values - D @ np.linalg.lstsq(D, gi.values, rcond=None)[0]
        resid_x = data.x - D @ np.linalg.lstsq(D, data.x, rcond=None)[0]
        denom = np.linalg.norm(resid_h) * np.linalg.norm(resid_x)
        assert abs(resid_h @ resid_x) / denom < 0.05

    def test_cv_split_uses_first_half_and_is_deterministic(self, design_a_small, design_a_fs):
        x = design_a_small.x
        gi1 = build_instrument(design_a_fs, x, WeightMethod.ridge(), seed=99)
        gi2 = build_instrument(design_a_fs, x, WeightMethod.ridge(), seed=99)
        assert_allclose(gi1.values, gi2.values, atol=0)
        assert gi1.weights.penalty_used == gi2.weights.penalty_used
        n_tr = int(np.ceil(0.5 * design_a_small.n))
        assert_allclose(gi1.weights.training_indices, np.arange(n_tr))

    def test_fixed_penalty_uses_all_rows(self, design_a_small, design_a_fs):
        gi = build_instrument(design_a_fs, design_a_small.x, WeightMethod.ridge(0.1))
        assert gi.weights.training_indices is None
        assert gi.weights.penalty_used == pytest.approx(0.1)
