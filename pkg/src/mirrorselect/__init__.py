"""FDR-controlled confounder selection via mirror statistics.

Select covariates relevant to the outcome, the treatment, or both, with a
bound on the expected false-discovery proportion and no p-values: split the
sample, fit both working models on each half, and threshold sign-symmetric
mirror statistics built from the standardized coefficients. Includes
p-value baselines, average-treatment-effect estimators for the selected
set, and a seeded simulation harness.
"""

from .baselines import (
    PValueSet,
    bh_adjust,
    by_adjust,
    marginal_qvalues,
    qvalue_select,
    uit_iut_pvalues,
    wald_pvalues,
)
from .causal import ATEEstimate, aipw_from_nuisances, bootstrap_ci, estimate_ate
from .estimation import (
    Dataset,
    DimensionError,
    DualFit,
    EstimationError,
    ModelFit,
    SingularModelError,
    StandardizedPair,
    fit_crossfit,
    fit_dual,
    fit_glm,
    fit_lasso,
    standardize_pair,
)
from .mirrors import (
    MINIMAL_FORM,
    UNION_FORM,
    InclusionRates,
    MirrorForm,
    MirrorSet,
    SelectionResult,
    SelectorConfig,
    ds_select,
    mds_select,
    original_mirror,
    paired_minimal_select,
    paired_mirrors,
    paired_union_select,
    select_threshold,
    unified_and_mirror,
    unified_or_mirror,
)
from .simulation import (
    MethodSpec,
    ReplicationReport,
    ScenarioSpec,
    Truth,
    generate,
    population_effect,
    run_study,
    score_selection,
)

__version__ = "0.1.0"

__all__ = [
    "ATEEstimate",
    "Dataset",
    "DimensionError",
    "DualFit",
    "EstimationError",
    "InclusionRates",
    "MINIMAL_FORM",
    "MethodSpec",
    "MirrorForm",
    "MirrorSet",
    "ModelFit",
    "PValueSet",
    "ReplicationReport",
    "ScenarioSpec",
    "SelectionResult",
    "SelectorConfig",
    "SingularModelError",
    "StandardizedPair",
    "Truth",
    "UNION_FORM",
    "aipw_from_nuisances",
    "bh_adjust",
    "bootstrap_ci",
    "by_adjust",
    "ds_select",
    "estimate_ate",
    "fit_crossfit",
    "fit_dual",
    "fit_glm",
    "fit_lasso",
    "generate",
    "marginal_qvalues",
    "mds_select",
    "original_mirror",
    "paired_minimal_select",
    "paired_mirrors",
    "paired_union_select",
    "population_effect",
    "qvalue_select",
    "run_study",
    "score_selection",
    "select_threshold",
    "standardize_pair",
    "uit_iut_pvalues",
    "unified_and_mirror",
    "unified_or_mirror",
    "wald_pvalues",
]
