import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.stats import norm

import qlsiv
from qlsiv import InstrumentBasis, QuantileGrid, estimate_control, fit_drcf, fit_first_stage
from qlsiv.first_stage import FirstStageFit


def synthetic_fit(dictionary, step=0.10):
    """FirstStageFit wrapper around a hand-built dictionary."""
    n, k = dictionary.shape
    grid = QuantileGrid(step=step)
    assert grid.k == k
    basis = InstrumentBasis("linear")
    built = basis.build(np.zeros(n), np.zeros(n))
    return FirstStageFit(
        grid=grid,
        basis=basis,
        built=built,
        pi_hat=np.zeros((k, built.dim)),
        dictionary=dictionary,
        convergence=(),
    )


class TestEstimateControl:
    def test_below_all_quantiles_clamps_to_floor(self):
        fit = synthetic_fit(np.tile(np.linspace(1.0, 2.0, 10), (4, 1)))
        cv = estimate_control(fit, np.full(4, -5.0))
        assert_allclose(cv.v_hat, 0.01)

    def test_above_all_quantiles_clamps_to_ceiling(self):
        fit = synthetic_fit(np.tile(np.linspace(1.0, 2.0, 99), (4, 1)), step=0.01)
        cv = estimate_control(fit, np.full(4, 50.0))
        # 0.01 + 0.01 * 99 clamps to the last grid point 0.99
        assert_allclose(cv.v_hat, 0.99)

    def test_range_always_inside_trim(self, design_a_small, design_a_fs):
        cv = estimate_control(design_a_fs, design_a_small.x)
        assert cv.v_hat.min() >= 0.01
        assert cv.v_hat.max() <= 0.99

    def test_monotone_in_x(self, design_a_small, design_a_fs):
        cv = estimate_control(design_a_fs, design_a_small.x)
        bumped = estimate_control(design_a_fs, design_a_small.x + 0.3)
        assert np.all(bumped.v_hat >= cv.v_hat)

    def test_tracks_oracle_rank_in_location_design(self):
        rng = np.random.default_rng(31)
        n = 10_000
        z1 = rng.standard_normal(n)
        z2 = rng.standard_normal(n)
        u = rng.standard_normal(n)
        x = z1 + z2 + u
        data = qlsiv.Dataset(y=np.zeros(n), x=x, z1=z1, z2=z2)
        fs = fit_first_stage(data, InstrumentBasis("linear"), QuantileGrid(step=0.01))
        cv = estimate_control(fs, x)
        oracle = norm.cdf(u)  # true conditional rank
        assert np.corrcoef(cv.v_hat, oracle)[0, 1] > 0.97

    def test_grid_refinement_changes_little(self):
        spec = qlsiv.DGPSpec(design="A", n=1000, seed=32)
        data = qlsiv.generate(spec, 0)
        basis = InstrumentBasis("quadratic-full")
        v99 = estimate_control(fit_first_stage(data, basis, QuantileGrid(step=0.01)), data.x)
        v981 = estimate_control(fit_first_stage(data, basis, QuantileGrid(step=0.001)), data.x)
        assert np.mean(np.abs(v99.v_hat - v981.v_hat)) <= 0.02

    def test_constant_dictionary_warns(self):
        fit = synthetic_fit(np.ones((6, 10)))
        with pytest.warns(UserWarning):
            cv = estimate_control(fit, np.zeros(6))
        assert np.ptp(cv.v_hat) == 0.0


class TestFitDrcf:
    def test_coefficient_layout(self, design_a_small, design_a_fs):
        fit = fit_drcf(design_a_small, design_a_fs)
        assert fit.param_names[0] == "const"
        assert fit.param_names[1] == design_a_small.x_name
        assert fit.param_names[-1] == "v_hat"
        assert fit.method == "drcf"

    def test_exogenous_x_is_unbiased(self):
        # with independent errors the control is superfluous but harmless
        betas = []
        tvals = []
        for rep in range(60):
            spec = qlsiv.DGPSpec(design="A", n=400, error_correlation=0.0, seed=55)
            data = qlsiv.generate(spec, rep)
            fs = fit_first_stage(data, InstrumentBasis(), QuantileGrid(step=0.10))
            fit = fit_drcf(data, fs)
            betas.append(fit.beta)
            tvals.append(fit.theta[-1] / fit.se[-1])
        bias = np.mean(betas) - 1.0
        mc_se = np.std(betas) / np.sqrt(len(betas))
        assert abs(bias) <= 4 * mc_se + 1e-3
        assert abs(np.mean(tvals)) < 1.0

    def test_constant_control_dropped_with_flag(self):
        rng = np.random.default_rng(33)
        n = 60
        data = qlsiv.Dataset(
            y=rng.standard_normal(n),
            x=rng.standard_normal(n) + 10.0,
            z1=rng.standard_normal(n),
            z2=rng.standard_normal(n),
        )
        fit_obj = synthetic_fit(np.tile(np.linspace(-1, 0, 10), (n, 1)))
        with pytest.warns(UserWarning):
            fit = fit_drcf(data, fit_obj)
        assert any("non-identified-control" in note for note in fit.notes)
        assert "v_hat" not in fit.param_names
