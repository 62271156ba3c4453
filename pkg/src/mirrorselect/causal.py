"""Average treatment effect estimation on a selected covariate set.

Given the indices chosen by a selection method, the estimators here refit
the outcome and/or propensity models by maximum likelihood on the full
sample and plug them into regression standardization, inverse probability
weighting, or the doubly robust combination of the two. Percentile
bootstrap intervals rerun an arbitrary selection-plus-estimation pipeline
on resampled rows.
"""

from dataclasses import dataclass

import numpy as np

from ._lasso import _expit
from ._parallel import parallel_map
from .estimation import EstimationError, _glm_core

ESTIMATORS = ("standardization", "ipw", "aipw", "unadjusted")
DEFAULT_CLIP = (0.01, 0.99)


@dataclass(frozen=True)
class ATEEstimate:
    """Point estimate of the average treatment effect, optionally with a CI."""

    estimate: float
    estimator: str
    selected: np.ndarray
    ci_lower: float | None = None
    ci_upper: float | None = None
    n_boot: int | None = None

    def __post_init__(self):
        sel = np.unique(np.asarray(self.selected, dtype=int))
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if (self.ci_lower is None) != (self.ci_upper is None):
            raise ValueError("confidence bounds must come in pairs")
        if self.ci_lower is not None and self.ci_lower > self.ci_upper:
            raise ValueError("ci_lower must not exceed ci_upper")
        object.__setattr__(self, "selected", sel)


def _fit_outcome_models(data, cols):
    """Fit y ~ treatment + selected covariates; return (mu1, mu0) per unit."""
    slopes = np.column_stack([data.a, data.x[:, cols]]) if cols.size else data.a[:, None]
    try:
        intercept, coef, _, _, _ = _glm_core(data.y, slopes, data.family)
    except EstimationError as exc:
        raise EstimationError(f"outcome-model fit failed: {exc}") from exc
    tau_hat = coef[0]
    xb = data.x[:, cols] @ coef[1:] if cols.size else 0.0
    eta1 = intercept + tau_hat + xb
    eta0 = intercept + xb
    if data.family == "gaussian":
        return eta1, eta0
    return _expit(eta1), _expit(eta0)


def _fit_propensity(data, cols, clip):
    slopes = data.x[:, cols] if cols.size else np.zeros((data.n, 1))
    try:
        intercept, coef, _, _, _ = _glm_core(data.a, slopes, "binomial")
    except EstimationError as exc:
        raise EstimationError(f"propensity-model fit failed: {exc}") from exc
    e = _expit(intercept + slopes @ coef)
    return np.clip(e, clip[0], clip[1])


def aipw_from_nuisances(y, a, propensity, mu1, mu0):
    """Doubly robust ATE from explicit nuisance values.

    Augments each arm's weighted outcome with the model prediction:
    the result is consistent if either the propensity or the outcome
    model is correct.
    """
    arm1 = a * y / propensity - (a - propensity) / propensity * mu1
    arm0 = (1 - a) * y / (1 - propensity) + (a - propensity) / (1 - propensity) * mu0
    return float(np.mean(arm1 - arm0))


def estimate_ate(data, selected, estimator="aipw", clip=DEFAULT_CLIP):
    """Estimate the average treatment effect adjusting for ``selected``.

    ``standardization`` averages outcome-model predictions under both
    treatment assignments; ``ipw`` weights observed outcomes by the inverse
    (clipped) propensity; ``aipw`` combines the two and is doubly robust;
    ``unadjusted`` is the raw difference of arm means. An empty selection
    is valid and amounts to intercept-only adjustment.
    """
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}")
    cols = np.unique(np.asarray(selected, dtype=int)) if len(np.atleast_1d(selected)) else np.empty(0, int)
    if cols.size and (cols.min() < 0 or cols.max() >= data.p):
        raise ValueError("selected indices out of range")
    n1 = int(data.a.sum())
    if estimator != "standardization" and (n1 == 0 or n1 == data.n):
        raise ValueError("both treatment arms must be nonempty")

    if estimator == "unadjusted":
        est = float(data.y[data.a == 1].mean() - data.y[data.a == 0].mean())
        return ATEEstimate(est, estimator, cols)
    if estimator == "standardization":
        mu1, mu0 = _fit_outcome_models(data, cols)
        return ATEEstimate(float(np.mean(mu1 - mu0)), estimator, cols)
    if estimator == "ipw":
        e = _fit_propensity(data, cols, clip)
        est = float(np.mean(data.a * data.y / e - (1 - data.a) * data.y / (1 - e)))
        return ATEEstimate(est, estimator, cols)
    mu1, mu0 = _fit_outcome_models(data, cols)
    e = _fit_propensity(data, cols, clip)
    return ATEEstimate(aipw_from_nuisances(data.y, data.a, e, mu1, mu0), estimator, cols)


def bootstrap_ci(data, pipeline, n_boot=1000, level=0.95, seed=0, threads=None):
    """Percentile bootstrap interval for a selection-plus-estimation pipeline.

    ``pipeline`` maps a Dataset to an ATEEstimate (or a bare float). Rows
    are resampled with replacement ``n_boot`` times; failed resamples are
    recorded and excluded, and more than 10% failures aborts. Deterministic
    in ``seed``.
    """
    if n_boot < 100:
        raise ValueError("n_boot must be at least 100")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    point = pipeline(data)
    if not isinstance(point, ATEEstimate):
        point = ATEEstimate(float(point), "aipw", np.empty(0, int))
    root = np.random.SeedSequence(seed)
    seeds = root.spawn(n_boot)

    def one(child):
        rng = np.random.default_rng(child)
        rows = rng.integers(0, data.n, size=data.n)
        try:
            value = pipeline(data.subset(rows))
        except Exception:
            return np.nan
        return value.estimate if isinstance(value, ATEEstimate) else float(value)

    draws = np.asarray(parallel_map(one, seeds, threads), dtype=float)
    failed = int(np.isnan(draws).sum())
    if failed > 0.1 * n_boot:
        raise EstimationError(f"{failed}/{n_boot} bootstrap resamples failed")
    good = draws[~np.isnan(draws)]
    alpha = 1.0 - level
    lo, hi = np.quantile(good, [alpha / 2, 1 - alpha / 2])
    return ATEEstimate(
        point.estimate,
        point.estimator,
        point.selected,
        ci_lower=float(lo),
        ci_upper=float(hi),
        n_boot=n_boot,
    )
