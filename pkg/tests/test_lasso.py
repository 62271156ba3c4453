import numpy as np
import pytest

from mirrorselect._parallel import parallel_map
from mirrorselect.estimation import Dataset, fit_glm, fit_lasso

from conftest import make_binomial_data, make_gaussian_data


def _standardized(cols):
    return (cols - cols.mean(0)) / cols.std(0)


def _kkt_residuals(data, fit, target):
    """Stationarity residuals on the standardized scale, computed from scratch."""
    if target == "outcome":
        resp = data.y
        slopes = np.column_stack([data.a, data.x])
        coefs = np.r_[fit.treatment_coef, fit.coef]
        pf = np.r_[0.0, np.ones(data.p)]
    else:
        resp = data.a
        slopes = data.x
        coefs = fit.coef
        pf = np.ones(data.p)
    eta = fit.intercept + slopes @ coefs
    if fit.family == "gaussian":
        resid = resp - eta
    else:
        resid = resp - 1 / (1 + np.exp(-eta))
    sd = slopes.std(0)
    sd[sd == 0] = 1.0
    grad = -_standardized(slopes).T @ resid / data.n if np.all(slopes.std(0) > 0) else None
    if grad is None:
        std = (slopes - slopes.mean(0)) / sd
        grad = -std.T @ resid / data.n
    coef_std = coefs * sd
    lam = fit.lam
    out = np.zeros_like(grad)
    active = coef_std != 0
    out[active] = np.abs(grad[active] + lam * pf[active] * np.sign(coef_std[active]))
    out[~active] = np.maximum(np.abs(grad[~active]) - lam * pf[~active], 0.0)
    return np.r_[out, abs(resid.sum()) / data.n]


class TestNullThreshold:
    def test_above_lambda_max_zeroes_all_slopes(self):
        data = make_gaussian_data(n=60, p=5, beta=[1, 0.5, 0, 0, 0], seed=0)
        std = _standardized(data.x)
        lam_max = np.max(np.abs(std.T @ (data.a - data.a.mean()))) / data.n
        fit = fit_lasso(data, "treatment", lam=lam_max * 1.0001)
        assert np.all(fit.coef == 0.0)

    def test_unpenalized_treatment_survives_huge_lambda(self):
        data = make_gaussian_data(n=100, p=4, tau=2.0, beta=[0.5, 0, 0, 0], seed=1)
        fit = fit_lasso(data, "outcome", lam=10.0)
        assert np.all(fit.coef == 0.0)
        base = np.polyfit(data.a, data.y, 1)[0]
        assert fit.treatment_coef == pytest.approx(base, rel=1e-6)


class TestLambdaZero:
    def test_matches_glm_gaussian(self):
        data = make_gaussian_data(n=50, p=3, beta=[0.5, -0.2, 0], seed=5)
        lasso = fit_lasso(data, "outcome", lam=0.0)
        glm = fit_glm(data, "outcome")
        np.testing.assert_allclose(lasso.coef, glm.coef, atol=1e-6)
        assert lasso.treatment_coef == pytest.approx(glm.treatment_coef, abs=1e-6)
        assert lasso.intercept == pytest.approx(glm.intercept, abs=1e-6)

    def test_negative_lambda_rejected(self):
        data = make_gaussian_data(n=50, p=3)
        with pytest.raises(ValueError, match="nonnegative"):
            fit_lasso(data, "outcome", lam=-0.1)


class TestKKT:
    @pytest.mark.parametrize("seed", range(5))
    def test_gaussian_fixed_lambda(self, seed):
        rng = np.random.default_rng(seed)
        data = make_gaussian_data(n=80, p=12, beta=rng.standard_normal(12) * 0.4, seed=seed)
        fit = fit_lasso(data, "outcome", lam=float(rng.uniform(0.01, 0.2)))
        assert np.max(_kkt_residuals(data, fit, "outcome")) < 1e-6

    @pytest.mark.parametrize("seed", range(3))
    def test_binomial_fixed_lambda(self, seed):
        rng = np.random.default_rng(seed + 50)
        data = make_binomial_data(n=250, p=8, beta=rng.standard_normal(8) * 0.6, seed=seed)
        fit = fit_lasso(data, "treatment", lam=float(rng.uniform(0.005, 0.1)))
        assert fit.converged
        assert np.max(_kkt_residuals(data, fit, "treatment")) < 1e-6

    def test_cv_path_kkt_reported(self):
        data = make_gaussian_data(n=120, p=30, beta=np.r_[np.ones(3), np.zeros(27)] * 0.8, seed=9)
        fit = fit_lasso(data, "outcome")
        assert fit.kkt_violation is not None and fit.kkt_violation < 1e-6
        assert np.max(_kkt_residuals(data, fit, "outcome")) < 1e-6

    def test_cv_path_kkt_binomial(self):
        data = make_binomial_data(n=200, p=10, beta=np.r_[1.0, -0.8, np.zeros(8)], seed=21)
        fit = fit_lasso(data, "treatment")
        assert fit.kkt_violation < 1e-6


class TestCrossValidation:
    def test_recovers_true_support_high_dim(self):
        def one(seed):
            rng = np.random.default_rng(seed)
            n, p = 100, 200
            x = rng.standard_normal((n, p))
            beta = np.zeros(p)
            beta[:5] = 1.0
            y = x @ beta + rng.standard_normal(n)
            data = Dataset(y=y, a=np.zeros(n), x=x)
            fit = fit_lasso(data, "outcome")
            return bool(np.all(fit.coef[:5] != 0))

        hits = sum(parallel_map(one, range(100)))
        assert hits >= 90

    def test_cv_deterministic(self):
        data = make_gaussian_data(n=90, p=15, beta=np.r_[0.9, np.zeros(14)], seed=12)
        f1 = fit_lasso(data, "outcome")
        f2 = fit_lasso(data, "outcome")
        assert f1.lam == f2.lam
        assert np.array_equal(f1.coef, f2.coef)


class TestScaling:
    def test_column_scale_equivariance(self):
        data = make_gaussian_data(n=80, p=4, beta=[0.6, 0.4, 0, 0], seed=8)
        scaled_x = data.x.copy()
        scaled_x[:, 0] *= 10.0
        scaled = Dataset(y=data.y, a=data.a, x=scaled_x, family="gaussian")
        f1 = fit_lasso(data, "outcome", lam=0.05)
        f2 = fit_lasso(scaled, "outcome", lam=0.05)
        assert f2.coef[0] == pytest.approx(f1.coef[0] / 10.0, rel=1e-8)
        np.testing.assert_allclose(f2.coef[1:], f1.coef[1:], rtol=1e-8)

    def test_adhoc_se_positive(self):
        data = make_gaussian_data(n=100, p=6, beta=[0.5, 0, 0, 0, 0, 0], seed=4)
        fit = fit_lasso(data, "outcome")
        assert np.all(np.isfinite(fit.se))
        assert np.all(fit.se > 0)

    def test_zero_variance_column_ignored(self):
        data = make_gaussian_data(n=70, p=3, beta=[0.7, 0, 0], seed=6)
        x = data.x.copy()
        x[:, 2] = 1.5
        d = Dataset(y=data.y, a=data.a, x=x)
        fit = fit_lasso(d, "outcome")
        assert fit.coef[2] == 0.0
        assert np.isnan(fit.se[2])
