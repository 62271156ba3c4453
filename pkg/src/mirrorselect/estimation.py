"""Outcome- and treatment-model estimation backends.

Fits the two working models used everywhere else in the package: a GLM for
the outcome given treatment and covariates, and a logistic model for the
treatment given covariates. Three backends are provided: straight maximum
likelihood (``mle``), l1-penalized fits with cross-validated penalty
(``lasso``), and a split-and-refit procedure (``crossfit``) that screens
with the lasso on one half of the sample and refits the survivors by MLE
on the other half. Coefficients standardized by their standard errors feed
the mirror-statistic layer.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, qr

from . import _lasso


class EstimationError(Exception):
    """Base class for model-fitting failures."""


class DimensionError(EstimationError):
    """Sample too small for the requested fit."""


class SingularModelError(EstimationError):
    """Design matrix is numerically singular beyond repairable degeneracy."""


_FAMILY_ALIASES = {
    "gaussian": "gaussian",
    "gaussian-identity": "gaussian",
    "binomial": "binomial",
    "binomial-logit": "binomial",
}

TARGETS = ("outcome", "treatment")

IRLS_TOL = 1e-8
IRLS_MAX_ITER = 100
SEPARATION_CAP = 20.0  # |coef| on the unit-variance scale beyond which a logistic fit is flagged
LASSO_KKT_TOL = 5e-7
CV_FOLDS = 10
CV_N_LAMBDAS = 100
CV_MIN_RATIO = 1e-3


def canonical_family(family):
    try:
        return _FAMILY_ALIASES[family]
    except KeyError:
        raise ValueError(f"unknown family {family!r}; expected one of {sorted(set(_FAMILY_ALIASES))}")


@dataclass(frozen=True)
class Dataset:
    """Observed sample: outcome ``y``, binary treatment ``a``, covariates ``x``.

    ``family`` names the outcome model: ``"gaussian"`` (identity link) or
    ``"binomial"`` (logit link). The treatment model is always logistic.
    """

    y: np.ndarray
    a: np.ndarray
    x: np.ndarray
    family: str = "gaussian"

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        a = np.asarray(self.a, dtype=float)
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 2:
            raise ValueError("x must be a 2-d array")
        n, p = x.shape
        if n < 2:
            raise ValueError(f"need at least 2 observations, got {n}")
        if p < 1:
            raise ValueError("need at least one covariate column")
        if y.shape != (n,) or a.shape != (n,):
            raise ValueError("y, a and the rows of x must have equal length")
        if not np.isin(a, (0.0, 1.0)).all():
            raise ValueError("treatment must contain only 0/1 values")
        fam = canonical_family(self.family)
        if fam == "binomial" and not np.isin(y, (0.0, 1.0)).all():
            raise ValueError("binomial outcome must contain only 0/1 values")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "family", fam)

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    def subset(self, rows):
        return Dataset(self.y[rows], self.a[rows], self.x[rows], self.family)


@dataclass(frozen=True)
class ModelFit:
    """Per-variable slope estimates and standard errors from one model fit.

    ``se`` entries are NaN where no standard error is available (dropped or
    unselected coordinates); downstream standardization maps those to zero.
    ``treatment_coef`` is present exactly when this is an outcome-model fit.
    """

    coef: np.ndarray
    se: np.ndarray
    intercept: float
    family: str
    method: str
    converged: bool = True
    treatment_coef: float | None = None
    lam: float | None = None
    kkt_violation: float | None = None

    def __post_init__(self):
        coef = np.asarray(self.coef, dtype=float)
        se = np.asarray(self.se, dtype=float)
        if coef.shape != se.shape or coef.ndim != 1:
            raise ValueError("coef and se must be 1-d arrays of equal length")
        defined = np.isfinite(se)
        if not (se[defined] > 0).all():
            raise ValueError("defined standard errors must be strictly positive")
        object.__setattr__(self, "coef", coef)
        object.__setattr__(self, "se", se)

    @property
    def p(self):
        return self.coef.shape[0]


@dataclass(frozen=True)
class DualFit:
    """The outcome-model and treatment-model fits for one sample."""

    outcome: ModelFit
    treatment: ModelFit

    def __post_init__(self):
        if self.outcome.p != self.treatment.p:
            raise ValueError("outcome and treatment fits must share p")
        if self.outcome.method != self.treatment.method:
            raise ValueError("outcome and treatment fits must share the method")
        if self.outcome.treatment_coef is None:
            raise ValueError("outcome fit must carry a treatment coefficient")
        if self.treatment.treatment_coef is not None:
            raise ValueError("treatment fit cannot carry a treatment coefficient")

    @property
    def p(self):
        return self.outcome.p

    @property
    def method(self):
        return self.outcome.method


@dataclass(frozen=True)
class StandardizedPair:
    """Standardized (treatment, outcome) coefficient rows from two disjoint halves.

    Row ``j`` of ``t1``/``t2`` is the pair (treatment z-score, outcome z-score)
    for covariate ``j`` on the corresponding half.
    """

    t1: np.ndarray
    t2: np.ndarray

    def __post_init__(self):
        t1 = np.asarray(self.t1, dtype=float)
        t2 = np.asarray(self.t2, dtype=float)
        if t1.shape != t2.shape or t1.ndim != 2 or t1.shape[1] != 2:
            raise ValueError("t1 and t2 must be equal-shape (p, 2) arrays")
        if not (np.isfinite(t1).all() and np.isfinite(t2).all()):
            raise ValueError("standardized statistics must be finite")
        object.__setattr__(self, "t1", t1)
        object.__setattr__(self, "t2", t2)

    @property
    def p(self):
        return self.t1.shape[0]


def _check_target(target):
    if target not in TARGETS:
        raise ValueError(f"target must be one of {TARGETS}, got {target!r}")


def _response_design(data, target):
    """Response vector, slope columns, family and treatment-column flag."""
    _check_target(target)
    if target == "outcome":
        cols = np.column_stack([data.a, data.x])
        return data.y, cols, data.family, True
    return data.a, data.x, "binomial", False


def _glm_core(resp, slopes, family):
    """MLE on [intercept | slopes]; returns (coef, se, converged, mu).

    Zero-variance slope columns are dropped (coefficient 0, standard error
    NaN); exact collinearity among the remaining columns raises
    ``SingularModelError``.
    """
    n, m = slopes.shape
    keep = np.flatnonzero(np.ptp(slopes, axis=0) > 0)
    design = np.column_stack([np.ones(n), slopes[:, keep]])
    if family == "gaussian":
        beta, se_k, mu = _ols(design, resp)
        converged = True
    else:
        beta, se_k, mu, converged = _irls_logit(design, resp)
    coef = np.zeros(m)
    se = np.full(m, np.nan)
    coef[keep] = beta[1:]
    se[keep] = se_k[1:]
    if family == "binomial":
        # flag coordinates running away on the unit-variance scale (separation)
        sd = slopes[:, keep].std(axis=0)
        runaway = np.abs(beta[1:] * sd) > SEPARATION_CAP
        if runaway.any():
            se[keep[runaway]] = np.nan
            converged = False
    return beta[0], coef, se, converged, mu


def _solve_spd(gram, rhs):
    try:
        c = cho_factor(gram)
    except np.linalg.LinAlgError as exc:
        raise SingularModelError("weighted Gram matrix is numerically singular") from exc
    except ValueError as exc:  # NaN/inf contamination
        raise SingularModelError("weighted Gram matrix is not finite") from exc
    return cho_solve(c, rhs), c


def _ols(design, resp):
    n, k = design.shape
    gram = design.T @ design
    beta, c = _solve_spd(gram, design.T @ resp)
    mu = design @ beta
    rss = float(np.sum((resp - mu) ** 2))
    dispersion = rss / max(n - k, 1)
    cov = cho_solve(c, np.eye(k)) * dispersion
    se = np.sqrt(np.clip(np.diag(cov), 0, None))
    se[se == 0] = np.nan
    return beta, se, mu


def _irls_logit(design, resp, tol=IRLS_TOL, max_iter=IRLS_MAX_ITER):
    n, k = design.shape
    beta = np.zeros(k)
    mu = np.full(n, 0.5)
    dev = _lasso.binomial_deviance(resp, mu)
    converged = False
    for _ in range(max_iter):
        eta = design @ beta
        mu = _lasso._expit(eta)
        wv = np.clip(mu * (1 - mu), 1e-10, None)
        z = eta + (resp - mu) / wv
        wd = design * wv[:, None]
        beta_new, _ = _solve_spd(wd.T @ design, wd.T @ z)
        new_dev = _lasso.binomial_deviance(resp, _lasso._expit(design @ beta_new))
        halvings = 0
        while new_dev > dev + 1e-12 and halvings < 10:
            beta_new = 0.5 * (beta_new + beta)
            new_dev = _lasso.binomial_deviance(resp, _lasso._expit(design @ beta_new))
            halvings += 1
        beta = beta_new
        if abs(dev - new_dev) < tol:
            dev = new_dev
            converged = True
            break
        dev = new_dev
    eta = design @ beta
    mu = _lasso._expit(eta)
    wv = np.clip(mu * (1 - mu), 1e-10, None)
    wd = design * wv[:, None]
    cov, _ = _solve_spd(wd.T @ design, np.eye(k))
    se = np.sqrt(np.clip(np.diag(cov), 0, None))
    se[se == 0] = np.nan
    return beta, se, mu, converged


def fit_glm(data, target):
    """Maximum-likelihood fit of the outcome or treatment model.

    The outcome model regresses ``y`` on the treatment plus all covariates
    with the family's link; the treatment model is a logistic regression of
    ``a`` on the covariates. Standard errors come from the inverse observed
    Fisher information. Requires the low-dimensional regime ``n > p + 2``.
    """
    _check_target(target)
    n, p = data.x.shape
    if n <= p + 2:
        raise DimensionError(f"fit_glm needs n > p + 2 (n={n}, p={p})")
    resp, slopes, family, has_treat = _response_design(data, target)
    intercept, coef, se, converged, _ = _glm_core(resp, slopes, family)
    treat_coef = None
    if has_treat:
        treat_coef = float(coef[0])
        coef, se = coef[1:], se[1:]
    return ModelFit(
        coef=coef,
        se=se,
        intercept=float(intercept),
        family=family,
        method="mle",
        converged=converged,
        treatment_coef=treat_coef,
    )


def _standardize_columns(mat):
    mean = mat.mean(axis=0)
    sd = mat.std(axis=0)
    scale = np.where(sd > 0, sd, 1.0)
    return (mat - mean) / scale, mean, scale


def _adhoc_se(slopes_orig, weights, n_minus_df_dispersion=None):
    """Per-coordinate univariate-information standard errors.

    ``sqrt(dispersion / sum_i w_i (x_ij - xbar_j)^2)`` with the weighted
    column mean; zero-information columns get NaN.
    """
    wsum = weights.sum()
    xbar = (slopes_orig * weights[:, None]).sum(axis=0) / wsum
    info = (weights[:, None] * (slopes_orig - xbar) ** 2).sum(axis=0)
    dispersion = 1.0 if n_minus_df_dispersion is None else n_minus_df_dispersion
    with np.errstate(divide="ignore"):
        se = np.sqrt(dispersion / info)
    se[~np.isfinite(se)] = np.nan
    return se


def fit_lasso(data, target, lam=None):
    """l1-penalized fit of the outcome or treatment model.

    Covariates are internally centered and scaled to unit variance; the
    reported coefficients are on the original scale. The intercept and, in
    the outcome model, the treatment column are never penalized. When
    ``lam`` is omitted it is chosen by 10-fold cross-validation over a
    100-point geometric grid from the null-model penalty down to 1e-3 of
    it, minimizing validation deviance (ties resolved toward the stronger
    penalty). Standard errors are univariate GLM-style surrogates evaluated
    at the fitted weights. ``kkt_violation`` records the worst stationarity
    residual over every path point actually solved.
    """
    _check_target(target)
    n, p = data.x.shape
    if n < 10:
        raise DimensionError(f"fit_lasso needs n >= 10, got n={n}")
    if lam is not None and lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    resp, slopes, family, has_treat = _response_design(data, target)
    std, _, scale = _standardize_columns(slopes)
    pf = np.ones(std.shape[1])
    if has_treat:
        pf[0] = 0.0

    if family == "gaussian":
        unpen = np.flatnonzero(pf == 0)
        b0, _, resid = _lasso.gaussian_base_fit(resp, np.ones(n), [std[:, j] for j in unpen])
        lam_max = _lasso.lambda_max(std, resid, np.ones(n), pf)
    else:
        unpen = np.flatnonzero(pf == 0)
        b0, _, resid, _ = _lasso.logistic_base_fit(resp, [std[:, j] for j in unpen])
        lam_max = _lasso.lambda_max(std, resid, np.ones(n), pf)

    worst_kkt = 0.0
    saturated = False
    if lam is None:
        lambdas = _lasso.lambda_grid(lam_max, CV_N_LAMBDAS, CV_MIN_RATIO)
        folds = np.arange(n) % CV_FOLDS
        cv_dev = np.zeros(len(lambdas))
        for f in range(CV_FOLDS):
            tr = folds != f
            va = ~tr
            if family == "gaussian":
                coefs, b0s, kkt = _lasso.gaussian_path(std[tr], resp[tr], pf, lambdas, LASSO_KKT_TOL)
            else:
                coefs, b0s, kkt, sat = _lasso.logistic_path(std[tr], resp[tr], pf, lambdas, LASSO_KKT_TOL)
                saturated = saturated or sat
            worst_kkt = max(worst_kkt, kkt)
            preds = std[va] @ coefs.T + b0s
            if family == "gaussian":
                cv_dev += np.sum((resp[va, None] - preds) ** 2, axis=0)
            else:
                mu = np.clip(_lasso._expit(preds), 1e-12, 1 - 1e-12)
                yv = resp[va, None]
                cv_dev += -2.0 * np.sum(yv * np.log(mu) + (1 - yv) * np.log(1 - mu), axis=0)
        best = int(np.argmin(cv_dev))  # descending grid: first minimum = strongest penalty
        lambdas_fit = lambdas
        chosen = float(lambdas[best])
    else:
        if lam >= lam_max:
            lambdas_fit = np.array([lam], dtype=float)
        else:
            warm = _lasso.lambda_grid(lam_max, 10, max(lam / lam_max, 1e-4))
            lambdas_fit = np.append(warm[warm > lam], lam)
        best = len(lambdas_fit) - 1
        chosen = float(lam)

    if family == "gaussian":
        coefs, b0s, kkt = _lasso.gaussian_path(std, resp, pf, lambdas_fit, LASSO_KKT_TOL)
    else:
        coefs, b0s, kkt, sat = _lasso.logistic_path(std, resp, pf, lambdas_fit, LASSO_KKT_TOL)
        saturated = saturated or sat
    worst_kkt = max(worst_kkt, kkt)
    coef_std = coefs[best]
    b0 = float(b0s[best])

    coef_orig = coef_std / scale
    eta = b0 + std @ coef_std
    if family == "gaussian":
        rss = float(np.sum((resp - eta) ** 2))
        df = 1 + int(np.count_nonzero(coef_std))
        weights = np.ones(n)
        se = _adhoc_se(slopes, weights, rss / max(n - df, 1))
    else:
        mu = _lasso._expit(eta)
        weights = np.clip(mu * (1 - mu), 1e-10, None)
        se = _adhoc_se(slopes, weights)
    intercept = b0 - float(np.sum(coef_orig * slopes.mean(axis=0)))

    treat_coef = None
    if has_treat:
        treat_coef = float(coef_orig[0])
        coef_orig, se = coef_orig[1:], se[1:]
    return ModelFit(
        coef=coef_orig,
        se=se,
        intercept=intercept,
        family=family,
        method="lasso",
        converged=not saturated,
        treatment_coef=treat_coef,
        lam=chosen,
        kkt_violation=worst_kkt,
    )


def _independent_cols(mat, tol=1e-9):
    """Indices of a maximal linearly independent column subset (pivoted QR)."""
    if mat.shape[1] == 0:
        return np.empty(0, dtype=int)
    _, r, piv = qr(mat, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0:
        return np.empty(0, dtype=int)
    rank = int(np.sum(diag > tol * diag[0]))
    return np.sort(piv[:rank])


def fit_crossfit(data, target, split_seed):
    """Split-and-refit estimation: lasso screening, then restricted MLE.

    The sample is split in half by a permutation drawn from ``split_seed``;
    the lasso (cross-validated penalty) on the first half selects a support
    and the second half refits that support by maximum likelihood. Unselected
    coordinates report coefficient 0 and an undefined (NaN) standard error.
    A collinear refit column is dropped rather than failing; an empty support
    yields the intercept-only (plus treatment) fit.
    """
    _check_target(target)
    n = data.n
    if n < 20:
        raise DimensionError(f"fit_crossfit needs n >= 20, got n={n}")
    rng = np.random.default_rng(split_seed)
    perm = rng.permutation(n)
    h1, h2 = perm[: n // 2], perm[n // 2 :]
    screen = fit_lasso(data.subset(h1), target)
    support = np.flatnonzero(screen.coef != 0)

    d2 = data.subset(h2)
    resp, slopes_all, family, has_treat = _response_design(d2, target)
    limit = len(h2) - 4 - int(has_treat)
    if support.size > limit:
        # keep the strongest screened coordinates on the unit-variance scale
        strength = np.abs(screen.coef[support]) * data.x[h1][:, support].std(axis=0)
        support = support[np.argsort(-strength, kind="stable")[:limit]]
        support = np.sort(support)

    cols = (support + 1) if has_treat else support  # slope-column indices of the support
    sub = np.concatenate([np.array([0]), cols]).astype(int) if has_treat else cols.astype(int)
    design_slopes = slopes_all[:, sub]
    kept_local = _independent_cols(np.column_stack([np.ones(len(h2)), design_slopes]))
    kept_local = kept_local[kept_local > 0] - 1  # drop the intercept slot
    design_slopes = design_slopes[:, kept_local]

    intercept, coef_k, se_k, converged, _ = _glm_core(resp, design_slopes, family)

    coef = np.zeros(data.p)
    se = np.full(data.p, np.nan)
    treat_coef = None
    if has_treat:
        kept_is_treat = kept_local == 0
        if kept_is_treat.any():
            ti = int(np.flatnonzero(kept_is_treat)[0])
            treat_coef = float(coef_k[ti])
        else:
            treat_coef = 0.0
        cov_mask = ~kept_is_treat
        cov_idx = support[kept_local[cov_mask] - 1]
        coef[cov_idx] = coef_k[cov_mask]
        se[cov_idx] = se_k[cov_mask]
    else:
        cov_idx = support[kept_local]
        coef[cov_idx] = coef_k
        se[cov_idx] = se_k
    return ModelFit(
        coef=coef,
        se=se,
        intercept=float(intercept),
        family=family,
        method="crossfit",
        converged=converged,
        treatment_coef=treat_coef,
        lam=screen.lam,
        kkt_violation=screen.kkt_violation,
    )


def fit_dual(data, method, seed=None):
    """Fit both working models with the same backend; ``seed`` feeds crossfit."""
    if method == "mle":
        out = fit_glm(data, "outcome")
        trt = fit_glm(data, "treatment")
    elif method == "lasso":
        out = fit_lasso(data, "outcome")
        trt = fit_lasso(data, "treatment")
    elif method == "crossfit":
        if seed is None:
            raise ValueError("crossfit requires a seed")
        out = fit_crossfit(data, "outcome", seed)
        trt = fit_crossfit(data, "treatment", seed)
    else:
        raise ValueError(f"unknown estimation method {method!r}")
    return DualFit(outcome=out, treatment=trt)


def _zcol(fit):
    with np.errstate(invalid="ignore", divide="ignore"):
        z = fit.coef / fit.se
    z[~np.isfinite(z)] = 0.0
    return z


def standardize_pair(fit1, fit2):
    """Stack the two halves' standardized (treatment, outcome) coefficients.

    Coordinates with an undefined standard error (unselected under
    crossfit, dropped, or separation-flagged) map to 0.
    """
    if fit1.p != fit2.p:
        raise ValueError("the two fits must share p")
    t1 = np.column_stack([_zcol(fit1.treatment), _zcol(fit1.outcome)])
    t2 = np.column_stack([_zcol(fit2.treatment), _zcol(fit2.outcome)])
    return StandardizedPair(t1=t1, t2=t2)
