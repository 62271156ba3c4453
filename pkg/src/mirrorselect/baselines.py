"""P-value-based selection baselines.

Per variable, two composite tests combine the Wald p-values of the outcome
and treatment models: the union criterion uses the minimum p-value (is the
variable relevant to either model?) and the minimal criterion the maximum
(relevant to both?). Composite p-values are then adjusted by the classic
step-up procedures and thresholded at the designated FDR level. A marginal
variant derives the per-model p-values from univariate fits instead of the
joint models.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .estimation import _glm_core
from .mirrors import SelectionResult, _check_q

P_VALUE_SOURCES = ("joint-mle", "crossfit", "marginal")
ADJUSTMENTS = ("bh", "by")


@dataclass(frozen=True)
class PValueSet:
    """Composite per-variable p-values for both selection criteria."""

    p_union: np.ndarray
    p_minimal: np.ndarray
    source: str

    def __post_init__(self):
        pu = np.asarray(self.p_union, dtype=float)
        pm = np.asarray(self.p_minimal, dtype=float)
        if pu.shape != pm.shape or pu.ndim != 1:
            raise ValueError("p_union and p_minimal must be 1-d of equal length")
        for v in (pu, pm):
            if ((v < 0) | (v > 1)).any() or not np.isfinite(v).all():
                raise ValueError("p-values must lie in [0, 1]")
        if self.source not in P_VALUE_SOURCES:
            raise ValueError(f"unknown p-value source {self.source!r}")
        object.__setattr__(self, "p_union", pu)
        object.__setattr__(self, "p_minimal", pm)

    @property
    def p(self):
        return self.p_union.shape[0]


def wald_pvalues(fit):
    """Two-sided normal-approximation p-values from a model fit.

    Coordinates without a defined standard error (crossfit-unselected,
    dropped, or separation-flagged) get p = 1.
    """
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.abs(fit.coef / fit.se)
    p = 2.0 * (1.0 - ndtr(z))
    p[~np.isfinite(z)] = 1.0
    return np.clip(p, 0.0, 1.0)


def uit_iut_pvalues(dual, source=None):
    """Composite p-values from a dual fit.

    The minimal-criterion p-value is the maximum of the two model p-values
    (a valid intersection-union p-value without further assumptions). The
    union-criterion p-value combines the minimum as ``1 - (1 - pmin)^2``,
    exact when the two model statistics are independent.
    """
    p_out = wald_pvalues(dual.outcome)
    p_trt = wald_pvalues(dual.treatment)
    p_min = np.minimum(p_out, p_trt)
    p_max = np.maximum(p_out, p_trt)
    p_union = 1.0 - (1.0 - p_min) ** 2
    if source is None:
        source = "joint-mle" if dual.method == "mle" else "crossfit"
    return PValueSet(p_union=p_union, p_minimal=p_max, source=source)


def bh_adjust(p):
    """Step-up adjusted p-values controlling FDR under independence."""
    return _step_up(np.asarray(p, dtype=float), 1.0)


def by_adjust(p):
    """Step-up adjusted p-values valid under arbitrary dependence.

    Applies the harmonic-sum correction ``1 + 1/2 + ... + 1/m`` before the
    step-up pass.
    """
    p = np.asarray(p, dtype=float)
    c = float(np.sum(1.0 / np.arange(1, p.size + 1))) if p.size else 1.0
    return _step_up(p, c)


def _step_up(p, scale):
    if ((p < 0) | (p > 1)).any():
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    if m == 0:
        return p.copy()
    order = np.argsort(p, kind="stable")
    ranked = p[order] * scale * m / np.arange(1, m + 1)
    adj = np.minimum.accumulate(ranked[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.clip(adj, 0.0, 1.0)
    return out


def qvalue_select(pvalues, q, criterion="union", adjust="bh", source=None):
    """Select variables whose adjusted composite p-value is at most q."""
    _check_q(q)
    if adjust not in ADJUSTMENTS:
        raise ValueError(f"adjust must be one of {ADJUSTMENTS}, got {adjust!r}")
    if criterion not in ("union", "minimal"):
        raise ValueError(f"criterion must be union or minimal, got {criterion!r}")
    raw = pvalues.p_union if criterion == "union" else pvalues.p_minimal
    adjusted = bh_adjust(raw) if adjust == "bh" else by_adjust(raw)
    selected = np.flatnonzero(adjusted <= q)
    cut = float(adjusted[selected].max()) if selected.size else np.inf
    bound = cut if selected.size else 0.0
    tag = f"{adjust}q-{source or pvalues.source}"
    return SelectionResult(selected, cut, bound, q, criterion, tag)


def _univariate_logit_pvalue(xj, resp):
    slopes = xj[:, None]
    try:
        _, coef, se, converged, _ = _glm_core(resp, slopes, "binomial")
    except Exception:
        return 1.0
    if not converged or not np.isfinite(se[0]):
        return 1.0
    z = abs(coef[0] / se[0])
    return float(np.clip(2.0 * (1.0 - ndtr(z)), 0.0, 1.0))


def _univariate_gaussian_pvalue(xj, other, resp):
    slopes = np.column_stack([other, xj])
    try:
        _, coef, se, _, _ = _glm_core(resp, slopes, "gaussian")
    except Exception:
        return 1.0
    if not np.isfinite(se[-1]):
        return 1.0
    z = abs(coef[-1] / se[-1])
    return float(np.clip(2.0 * (1.0 - ndtr(z)), 0.0, 1.0))


def marginal_qvalues(data):
    """Composite p-values from univariate model fits, one covariate at a time.

    For covariate ``j`` the outcome model regresses ``y`` on the treatment
    plus ``x_j`` alone and the treatment model regresses ``a`` on ``x_j``
    alone; the Wald p-values of ``x_j`` in each are combined as in
    ``uit_iut_pvalues``. A coordinate whose fit fails gets p = 1.
    """
    if data.n < 10:
        raise ValueError(f"marginal p-values need n >= 10, got n={data.n}")
    p = data.p
    p_out = np.ones(p)
    p_trt = np.ones(p)
    for j in range(p):
        xj = data.x[:, j]
        if data.family == "gaussian":
            p_out[j] = _univariate_gaussian_pvalue(xj, data.a, data.y)
        else:
            p_out[j] = _univariate_binomial_outcome_pvalue(xj, data.a, data.y)
        p_trt[j] = _univariate_logit_pvalue(xj, data.a)
    p_min = np.minimum(p_out, p_trt)
    p_max = np.maximum(p_out, p_trt)
    return PValueSet(p_union=1.0 - (1.0 - p_min) ** 2, p_minimal=p_max, source="marginal")


def _univariate_binomial_outcome_pvalue(xj, a, resp):
    slopes = np.column_stack([a, xj])
    try:
        _, coef, se, converged, _ = _glm_core(resp, slopes, "binomial")
    except Exception:
        return 1.0
    if not converged or not np.isfinite(se[-1]):
        return 1.0
    z = abs(coef[-1] / se[-1])
    return float(np.clip(2.0 * (1.0 - ndtr(z)), 0.0, 1.0))
