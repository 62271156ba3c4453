import numpy as np
import pytest

from mirrorselect.estimation import (
    Dataset,
    DimensionError,
    SingularModelError,
    fit_crossfit,
    fit_dual,
    fit_glm,
    fit_lasso,
    standardize_pair,
)

from conftest import make_gaussian_data, ols_oracle


class TestDataset:
    def test_rejects_nonbinary_treatment(self):
        with pytest.raises(ValueError, match="0/1"):
            Dataset(y=np.zeros(5), a=np.array([0, 1, 2, 0, 1.0]), x=np.ones((5, 1)))

    def test_rejects_nonbinary_binomial_outcome(self):
        with pytest.raises(ValueError, match="0/1"):
            Dataset(y=np.array([0, 1, 0.5]), a=np.zeros(3), x=np.ones((3, 1)), family="binomial")

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError, match="equal length"):
            Dataset(y=np.zeros(4), a=np.zeros(5), x=np.ones((5, 1)))

    def test_family_aliases(self):
        d = Dataset(y=np.array([0.0, 1.0]), a=np.array([0.0, 1.0]),
                    x=np.ones((2, 1)), family="binomial-logit")
        assert d.family == "binomial"


class TestFitGlm:
    def test_noiseless_line_is_exact(self):
        x = np.linspace(-2, 2, 30).reshape(-1, 1)
        data = Dataset(y=2.0 * x[:, 0], a=np.zeros(30), x=x)
        fit = fit_glm(data, "outcome")
        assert fit.coef[0] == pytest.approx(2.0, abs=1e-12)
        assert fit.intercept == pytest.approx(0.0, abs=1e-12)
        assert fit.treatment_coef == 0.0  # constant treatment column is dropped

    def test_balanced_logistic_with_zero_column(self):
        n = 40
        data = Dataset(y=np.zeros(n), a=np.r_[np.zeros(n // 2), np.ones(n // 2)],
                       x=np.zeros((n, 1)))
        fit = fit_glm(data, "treatment")
        assert fit.intercept == pytest.approx(0.0, abs=1e-10)
        assert fit.coef[0] == 0.0
        assert np.isnan(fit.se[0])

    def test_matches_normal_equation_oracle(self):
        data = make_gaussian_data(n=50, p=3, beta=[0.5, -0.3, 0.0], alpha=[0.4, 0, 0], seed=42)
        fit = fit_glm(data, "outcome")
        design = np.column_stack([np.ones(50), data.a, data.x])
        expected = ols_oracle(design, data.y)
        assert fit.intercept == pytest.approx(expected[0], abs=1e-8)
        assert fit.treatment_coef == pytest.approx(expected[1], abs=1e-8)
        np.testing.assert_allclose(fit.coef, expected[2:], atol=1e-8)

    @pytest.mark.parametrize("seed", range(10))
    def test_oracle_property_random_instances(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(30, 200))
        p = int(rng.integers(1, min(20, n - 4)))
        data = make_gaussian_data(n=n, p=p, beta=rng.standard_normal(p) * 0.5, seed=seed + 1000)
        fit = fit_glm(data, "outcome")
        design = np.column_stack([np.ones(n), data.a, data.x])
        expected = ols_oracle(design, data.y)
        np.testing.assert_allclose(np.r_[fit.intercept, fit.treatment_coef, fit.coef],
                                   expected, atol=1e-8)

    @pytest.mark.parametrize("seed", range(5))
    def test_logistic_score_equation_zero(self, seed):
        rng = np.random.default_rng(seed)
        n, p = 300, 4
        x = rng.standard_normal((n, p))
        a = (rng.random(n) < 1 / (1 + np.exp(-(0.7 * x[:, 0] - 0.4 * x[:, 2])))).astype(float)
        data = Dataset(y=np.zeros(n), a=a, x=x)
        fit = fit_glm(data, "treatment")
        assert fit.converged
        design = np.column_stack([np.ones(n), x])
        eta = design @ np.r_[fit.intercept, fit.coef]
        mu = 1 / (1 + np.exp(-eta))
        score = design.T @ (a - mu)
        assert np.max(np.abs(score)) < 1e-6

    def test_dimension_error(self):
        data = make_gaussian_data(n=6, p=4)
        with pytest.raises(DimensionError):
            fit_glm(data, "outcome")

    def test_exact_collinearity_raises(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((60, 2))
        x = np.column_stack([x, x[:, 0] + x[:, 1]])
        data = Dataset(y=rng.standard_normal(60), a=np.zeros(60), x=x)
        with pytest.raises(SingularModelError):
            fit_glm(data, "outcome")

    def test_perfect_separation_flagged(self):
        x = np.r_[np.linspace(-3, -1, 30), np.linspace(1, 3, 30)].reshape(-1, 1)
        a = (x[:, 0] > 0).astype(float)
        data = Dataset(y=np.zeros(60), a=a, x=x)
        fit = fit_glm(data, "treatment")
        assert not fit.converged
        assert np.isnan(fit.se[0])

    def test_se_positive_and_reasonable(self):
        data = make_gaussian_data(n=150, p=3, beta=[1.0, 0, 0], seed=3)
        fit = fit_glm(data, "outcome")
        assert (fit.se > 0).all()
        # OLS standard error scale on unit-variance columns is ~ 1/sqrt(n)
        assert np.all(fit.se < 0.5)


class TestCrossfit:
    def test_deterministic_in_seed(self):
        data = make_gaussian_data(n=100, p=6, beta=[1, 0, 0, 0, 0, 0], seed=9)
        f1 = fit_crossfit(data, "outcome", split_seed=5)
        f2 = fit_crossfit(data, "outcome", split_seed=5)
        assert np.array_equal(f1.coef, f2.coef)
        assert np.array_equal(f1.se, f2.se, equal_nan=True)
        assert f1.intercept == f2.intercept

    def test_different_seed_changes_split(self):
        data = make_gaussian_data(n=100, p=6, beta=[1, 0, 0, 0, 0, 0], seed=9)
        f1 = fit_crossfit(data, "outcome", split_seed=5)
        f2 = fit_crossfit(data, "outcome", split_seed=6)
        assert not np.array_equal(f1.coef, f2.coef)

    def test_null_model_empty_support(self):
        # pure noise with this seed screens out everything
        data = make_gaussian_data(n=200, p=10, tau=0.0, seed=17)
        fit = fit_crossfit(data, "outcome", split_seed=2)
        assert np.all(fit.coef == 0)
        assert np.all(np.isnan(fit.se))
        rng = np.random.default_rng(2)
        half2 = rng.permutation(200)[100:]
        assert fit.intercept == pytest.approx(float(np.mean(data.y[half2])), abs=0.2)

    def test_dominant_predictor_recovered(self):
        hits = 0
        for seed in range(100):
            data = make_gaussian_data(n=400, p=8, beta=[5, 0, 0, 0, 0, 0, 0, 0],
                                      seed=seed + 5000)
            fit = fit_crossfit(data, "outcome", split_seed=seed)
            if fit.coef[0] != 0 and np.isfinite(fit.se[0]):
                if abs(fit.coef[0] - 5.0) <= 3 * fit.se[0]:
                    hits += 1
        assert hits >= 95

    def test_min_size(self):
        data = make_gaussian_data(n=12, p=2)
        with pytest.raises(DimensionError):
            fit_crossfit(data, "outcome", split_seed=0)


class TestStandardizePair:
    def test_direct_ratio(self):
        data = make_gaussian_data(n=80, p=3, seed=1)
        d1 = fit_dual(data.subset(np.arange(40)), "mle")
        d2 = fit_dual(data.subset(np.arange(40, 80)), "mle")
        pair = standardize_pair(d1, d2)
        np.testing.assert_allclose(pair.t1[:, 1], d1.outcome.coef / d1.outcome.se)
        np.testing.assert_allclose(pair.t1[:, 0], d1.treatment.coef / d1.treatment.se)
        np.testing.assert_allclose(pair.t2[:, 1], d2.outcome.coef / d2.outcome.se)

    def test_sentinel_maps_to_zero(self):
        data = make_gaussian_data(n=200, p=10, tau=0.0, seed=17)
        d1 = fit_dual(data.subset(np.arange(100)), "crossfit", seed=3)
        d2 = fit_dual(data.subset(np.arange(100, 200)), "crossfit", seed=4)
        pair = standardize_pair(d1, d2)
        unselected = np.isnan(d1.outcome.se)
        assert np.all(pair.t1[unselected, 1] == 0.0)

    def test_swapping_halves_swaps_rows(self):
        data = make_gaussian_data(n=120, p=4, beta=[0.8, 0, 0, 0], seed=2)
        d1 = fit_dual(data.subset(np.arange(60)), "mle")
        d2 = fit_dual(data.subset(np.arange(60, 120)), "mle")
        ab = standardize_pair(d1, d2)
        ba = standardize_pair(d2, d1)
        np.testing.assert_array_equal(ab.t1, ba.t2)
        np.testing.assert_array_equal(ab.t2, ba.t1)

    def test_hand_built_ratios(self):
        from mirrorselect.estimation import DualFit, ModelFit

        out1 = ModelFit(coef=np.array([2.0, 1.0, -3.0]), se=np.array([0.5, 2.0, 1.5]),
                        intercept=0.0, family="gaussian", method="mle", treatment_coef=0.1)
        trt1 = ModelFit(coef=np.array([1.0, 0.0, 4.0]), se=np.array([1.0, 1.0, 2.0]),
                        intercept=0.0, family="binomial", method="mle")
        dual = DualFit(outcome=out1, treatment=trt1)
        pair = standardize_pair(dual, dual)
        np.testing.assert_allclose(pair.t1, [[1.0, 4.0], [0.0, 0.5], [2.0, -2.0]])
