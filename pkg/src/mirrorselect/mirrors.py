"""Mirror statistics and FDR-calibrated confounder selection.

A mirror statistic is sign-symmetric around zero for irrelevant variables
and large-positive for relevant ones, so the count of large negative values
estimates the number of false positives among the large positive ones. This
module builds three flavors from split-sample standardized coefficients:

* single-model mirrors ``sign(t1*t2)*(|t1|+|t2|)`` for one working model;
* paired mirrors, one per working model, thresholded jointly under the
  union ("either model") or minimal ("both models") selection criterion;
* unified mirrors, a single statistic per variable built from the polar
  form of the two-dimensional (treatment, outcome) z-score vectors.

``ds_select`` runs the full split-fit-threshold pipeline once;
``mds_select`` repeats it and aggregates selections through inclusion
rates.
"""

from dataclasses import dataclass

import numpy as np

from ._parallel import parallel_map
from .estimation import fit_dual, standardize_pair

CRITERIA = ("union", "minimal", "single-model")
MIRRORS = ("unified", "paired", "original-outcome", "original-treatment")
BACKENDS = ("mle", "lasso", "crossfit")

CONCORDANCE_FORMS = ("cos-delta", "sign-cos-delta")
INTENSITY_FORMS = (
    "sum-radii",
    "product-radii",
    "sum-max-abs",
    "product-max-abs",
    "sum-min-abs",
    "product-min-abs",
)
AXIS_FORMS = ("sin2-product", "sign-sin2-product")


@dataclass(frozen=True)
class MirrorForm:
    """Functional pieces of a unified mirror statistic.

    ``concordance`` measures agreement of the two split vectors in angle,
    ``intensity`` their joint magnitude, and ``axis`` (minimal criterion
    only) the quadrant-symmetry factor that restores sign symmetry for
    variables relevant to just one model.
    """

    concordance: str = "cos-delta"
    intensity: str = "product-radii"
    axis: str | None = None

    def __post_init__(self):
        if self.concordance not in CONCORDANCE_FORMS:
            raise ValueError(f"unknown concordance form {self.concordance!r}")
        if self.intensity not in INTENSITY_FORMS:
            raise ValueError(f"unknown intensity form {self.intensity!r}")
        if self.axis is not None and self.axis not in AXIS_FORMS:
            raise ValueError(f"unknown axis form {self.axis!r}")
        if self.axis is None and "min-abs" in self.intensity:
            raise ValueError("min-abs intensity is reserved for the minimal criterion")
        if self.axis is not None and "max-abs" in self.intensity:
            raise ValueError("max-abs intensity is reserved for the union criterion")


UNION_FORM = MirrorForm("cos-delta", "product-radii", None)
MINIMAL_FORM = MirrorForm("sign-cos-delta", "product-min-abs", "sign-sin2-product")


@dataclass(frozen=True)
class MirrorSet:
    """Mirror statistics for all p variables: one vector, or a model pair."""

    kind: str  # "single" | "paired"
    criterion: str = "single-model"
    m: np.ndarray | None = None
    m_y: np.ndarray | None = None
    m_a: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "single":
            if self.m is None or self.m_y is not None or self.m_a is not None:
                raise ValueError("single mirror set carries exactly the field m")
            object.__setattr__(self, "m", _clean(self.m))
        elif self.kind == "paired":
            if self.m is not None or self.m_y is None or self.m_a is None:
                raise ValueError("paired mirror set carries exactly the fields m_y, m_a")
            m_y, m_a = _clean(self.m_y), _clean(self.m_a)
            if m_y.shape != m_a.shape:
                raise ValueError("m_y and m_a must have equal length")
            object.__setattr__(self, "m_y", m_y)
            object.__setattr__(self, "m_a", m_a)
        else:
            raise ValueError(f"unknown mirror kind {self.kind!r}")
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}")

    @property
    def p(self):
        return (self.m if self.kind == "single" else self.m_y).shape[0]


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of one FDR-calibrated selection."""

    selected: np.ndarray
    threshold: float
    fdp_bound: float
    q: float
    criterion: str
    method: str

    def __post_init__(self):
        sel = np.asarray(self.selected, dtype=int)
        sel = np.unique(sel)
        if not 0 < self.q < 1:
            raise ValueError(f"q must lie in (0, 1), got {self.q}")
        if self.fdp_bound < 0:
            raise ValueError("fdp_bound must be nonnegative")
        if sel.size and self.fdp_bound > self.q:
            raise ValueError("nonempty selection must satisfy fdp_bound <= q")
        object.__setattr__(self, "selected", sel)

    @property
    def n_selected(self):
        return int(self.selected.size)


@dataclass(frozen=True)
class InclusionRates:
    """Per-variable normalized selection frequencies across repeated splits."""

    rates: np.ndarray
    repeats: int

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if rates.ndim != 1 or (rates < 0).any() or (rates > 1).any():
            raise ValueError("rates must be a 1-d vector in [0, 1]")
        object.__setattr__(self, "rates", rates)


def _clean(v):
    """Finite copy of a mirror vector; unusable coordinates count as 0."""
    v = np.asarray(v, dtype=float).copy()
    v[~np.isfinite(v)] = 0.0
    return v


def _check_q(q):
    if not 0 < q < 1:
        raise ValueError(f"q must lie in (0, 1), got {q}")


def original_mirror(t1, t2):
    """Mirror statistic ``sign(t1*t2) * (|t1| + |t2|)`` for one model.

    ``t1`` and ``t2`` are the standardized coefficients of the same model
    estimated on two disjoint halves; ``sign(0) = 0`` so a coordinate that
    is exactly zero in either half contributes a zero mirror value.
    """
    t1, t2 = _clean(t1), _clean(t2)
    if t1.shape != t2.shape:
        raise ValueError("t1 and t2 must have equal length")
    m = np.sign(t1 * t2) * (np.abs(t1) + np.abs(t2))
    return MirrorSet(kind="single", m=m)


def _grid(*vectors):
    vals = np.abs(np.concatenate(vectors))
    vals = vals[vals > 0]
    return np.unique(vals)


def select_threshold(mirrors, q, criterion="single-model", method="single"):
    """Select variables whose mirror value exceeds a data-driven cutoff.

    The cutoff is the smallest candidate ``t`` (among the distinct nonzero
    absolute mirror values) whose estimated false-discovery ratio
    ``#{m < -t} / (#{m > t} v 1)`` is at most ``q``; selection keeps
    ``{j : m_j > t}`` with strict inequalities throughout. If no candidate
    qualifies the selection is empty with an infinite cutoff.
    """
    _check_q(q)
    m = _clean(mirrors)
    grid = _grid(m)
    if grid.size == 0:
        return SelectionResult(np.empty(0, int), np.inf, 0.0, q, criterion, method)
    sm = np.sort(m)
    n = sm.size
    npos = n - np.searchsorted(sm, grid, side="right")
    nneg = np.searchsorted(sm, -grid, side="left")
    ratio = nneg / np.maximum(npos, 1)
    ok = np.flatnonzero(ratio <= q)
    if ok.size == 0:
        return SelectionResult(np.empty(0, int), np.inf, 0.0, q, criterion, method)
    k = int(ok[0])
    t = float(grid[k])
    return SelectionResult(np.flatnonzero(m > t), t, float(ratio[k]), q, criterion, method)


def paired_union_select(m_y, m_a, q, method="paired"):
    """Joint thresholding of paired mirrors under the union criterion.

    Selects ``{j : m_y[j] > t or m_a[j] > t}`` at the smallest candidate
    ``t`` whose union ratio ``#{m_y < -t or m_a < -t} / (#selected v 1)``
    is at most ``q``. Both mirror vectors must live on a common
    standardized scale for the shared cutoff to be meaningful.
    """
    _check_q(q)
    m_y, m_a = _clean(m_y), _clean(m_a)
    if m_y.shape != m_a.shape:
        raise ValueError("m_y and m_a must have equal length")
    grid = _grid(m_y, m_a)
    best = None
    for t in grid:
        den = np.count_nonzero((m_y > t) | (m_a > t))
        num = np.count_nonzero((m_y < -t) | (m_a < -t))
        ratio = num / max(den, 1)
        if ratio <= q:
            best = (float(t), float(ratio))
            break
    if best is None:
        return SelectionResult(np.empty(0, int), np.inf, 0.0, q, "union", method)
    t, ratio = best
    sel = np.flatnonzero((m_y > t) | (m_a > t))
    return SelectionResult(sel, t, ratio, q, "union", method)


def paired_minimal_select(m_y, m_a, q, method="paired"):
    """Joint thresholding of paired mirrors under the minimal criterion.

    Selects ``{j : m_y[j] > t and m_a[j] > t}``. The false-discovery count
    is estimated from the three discordant quadrants as
    ``#{y>t, a<-t} + #{y<-t, a>t} - #{y<-t, a<-t}``, floored at zero before
    dividing by the selected count.
    """
    _check_q(q)
    m_y, m_a = _clean(m_y), _clean(m_a)
    if m_y.shape != m_a.shape:
        raise ValueError("m_y and m_a must have equal length")
    grid = _grid(m_y, m_a)
    best = None
    for t in grid:
        den = np.count_nonzero((m_y > t) & (m_a > t))
        s1 = np.count_nonzero((m_y > t) & (m_a < -t))
        s2 = np.count_nonzero((m_y < -t) & (m_a > t))
        s3 = np.count_nonzero((m_y < -t) & (m_a < -t))
        ratio = max(s1 + s2 - s3, 0) / max(den, 1)
        if ratio <= q:
            best = (float(t), float(ratio))
            break
    if best is None:
        return SelectionResult(np.empty(0, int), np.inf, 0.0, q, "minimal", method)
    t, ratio = best
    sel = np.flatnonzero((m_y > t) & (m_a > t))
    return SelectionResult(sel, t, ratio, q, "minimal", method)


def paired_mirrors(pair):
    """Per-model mirror statistics from a standardized split pair."""
    y = original_mirror(pair.t1[:, 1], pair.t2[:, 1]).m
    a = original_mirror(pair.t1[:, 0], pair.t2[:, 0]).m
    return MirrorSet(kind="paired", m_y=y, m_a=a)


def _polar_pieces(pair):
    x1, y1 = pair.t1[:, 0], pair.t1[:, 1]
    x2, y2 = pair.t2[:, 0], pair.t2[:, 1]
    r1 = np.hypot(x1, y1)
    r2 = np.hypot(x2, y2)
    dot = x1 * x2 + y1 * y2
    with np.errstate(invalid="ignore", divide="ignore"):
        cosd = np.where((r1 > 0) & (r2 > 0), dot / (r1 * r2), 0.0)
    return x1, y1, x2, y2, r1, r2, cosd


def _intensity(form, x1, y1, x2, y2, r1, r2):
    if form == "sum-radii":
        return r1 + r2
    if form == "product-radii":
        return r1 * r2
    if form == "sum-max-abs":
        return np.maximum(np.abs(x1), np.abs(y1)) + np.maximum(np.abs(x2), np.abs(y2))
    if form == "product-max-abs":
        return np.maximum(np.abs(x1), np.abs(y1)) * np.maximum(np.abs(x2), np.abs(y2))
    if form == "sum-min-abs":
        return np.minimum(np.abs(x1), np.abs(y1)) + np.minimum(np.abs(x2), np.abs(y2))
    if form == "product-min-abs":
        return np.minimum(np.abs(x1), np.abs(y1)) * np.minimum(np.abs(x2), np.abs(y2))
    raise ValueError(f"unknown intensity form {form!r}")


def unified_or_mirror(pair, form=UNION_FORM):
    """Single mirror statistic targeting the union of the two relevance sets.

    The default form is the inner product of the two split vectors:
    concordance ``cos`` of the angle difference times the product of radii.
    Rows at the origin in either split yield a zero mirror value.
    """
    if form.axis is not None:
        raise ValueError("union mirror takes no axis form")
    x1, y1, x2, y2, r1, r2, cosd = _polar_pieces(pair)
    conc = np.sign(cosd) if form.concordance == "sign-cos-delta" else cosd
    m = conc * _intensity(form.intensity, x1, y1, x2, y2, r1, r2)
    m[(r1 == 0) | (r2 == 0)] = 0.0
    return MirrorSet(kind="single", m=m, criterion="union")


def unified_and_mirror(pair, form=MINIMAL_FORM):
    """Single mirror statistic targeting the intersection of the relevance sets.

    Adds a quadrant factor built from ``sin(2 theta)`` of each split so the
    statistic is sign-symmetric when only one model is relevant; intensity
    uses the within-split minimum absolute coordinate. Any coordinate lying
    exactly on an axis gives a zero mirror value.
    """
    if form.axis is None:
        raise ValueError("minimal mirror requires an axis form")
    x1, y1, x2, y2, r1, r2, cosd = _polar_pieces(pair)
    conc = np.sign(cosd) if form.concordance == "sign-cos-delta" else cosd
    with np.errstate(invalid="ignore", divide="ignore"):
        sin2a = np.where(r1 > 0, 2 * x1 * y1 / (r1 * r1), 0.0)
        sin2b = np.where(r2 > 0, 2 * x2 * y2 / (r2 * r2), 0.0)
    axis = sin2a * sin2b
    if form.axis == "sign-sin2-product":
        axis = np.sign(axis)
    m = conc * _intensity(form.intensity, x1, y1, x2, y2, r1, r2) * axis
    m[(r1 == 0) | (r2 == 0)] = 0.0
    return MirrorSet(kind="single", m=m, criterion="minimal")


@dataclass(frozen=True)
class SelectorConfig:
    """Everything a data-splitting selection run needs besides the data."""

    criterion: str = "union"
    mirror: str = "unified"
    backend: str = "mle"
    q: float = 0.1
    form: MirrorForm | None = None

    def __post_init__(self):
        if self.mirror not in MIRRORS:
            raise ValueError(f"unknown mirror {self.mirror!r}")
        single = self.mirror.startswith("original")
        if single:
            if self.criterion != "single-model":
                raise ValueError("original mirrors select for a single model only")
        elif self.criterion not in ("union", "minimal"):
            raise ValueError(f"criterion must be union or minimal, got {self.criterion!r}")
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}")
        _check_q(self.q)
        if self.form is not None and self.mirror != "unified":
            raise ValueError("mirror forms apply to unified mirrors only")

    def resolved_form(self):
        if self.form is not None:
            return self.form
        return UNION_FORM if self.criterion == "union" else MINIMAL_FORM


def split_pair(data, backend, split_seed):
    """One random half-split plus dual fits on each half, standardized."""
    if data.n < 20:
        raise ValueError(f"data splitting needs n >= 20, got n={data.n}")
    rng = np.random.default_rng(split_seed)
    perm = rng.permutation(data.n)
    h1, h2 = perm[: data.n // 2], perm[data.n // 2 :]
    s1, s2 = (int(s) for s in np.random.SeedSequence(split_seed).generate_state(2))
    dual1 = fit_dual(data.subset(h1), backend, seed=s1)
    dual2 = fit_dual(data.subset(h2), backend, seed=s2)
    return standardize_pair(dual1, dual2)


def select_from_pair(pair, config, method="ds"):
    """Apply the configured mirror construction and threshold rule."""
    tag = f"{method}-{config.mirror}"
    if config.mirror == "unified":
        ms = (
            unified_or_mirror(pair, config.resolved_form())
            if config.criterion == "union"
            else unified_and_mirror(pair, config.resolved_form())
        )
        return select_threshold(ms.m, config.q, config.criterion, tag)
    if config.mirror == "paired":
        ms = paired_mirrors(pair)
        if config.criterion == "union":
            return paired_union_select(ms.m_y, ms.m_a, config.q, tag)
        return paired_minimal_select(ms.m_y, ms.m_a, config.q, tag)
    col = 1 if config.mirror == "original-outcome" else 0
    ms = original_mirror(pair.t1[:, col], pair.t2[:, col])
    return select_threshold(ms.m, config.q, "single-model", tag)


def ds_select(data, config, split_seed=0):
    """Single data-splitting selection: split, fit, mirror, threshold.

    Deterministic in ``split_seed``; an empty selection is a valid result.
    """
    pair = split_pair(data, config.backend, split_seed)
    return select_from_pair(pair, config, method="ds")


def mds_cutoff(rates, q):
    """Inclusion-rate cutoff: largest ascending prefix with mass at most q.

    Returns ``(cutoff, dropped_mass)``; the selection keeps rates strictly
    above the cutoff, which is 0 when even the smallest rate exceeds ``q``.
    """
    _check_q(q)
    rates = np.asarray(rates, dtype=float)
    order = np.argsort(rates, kind="stable")
    csum = np.cumsum(rates[order])
    ok = np.flatnonzero(csum <= q)
    if ok.size == 0:
        return 0.0, 0.0
    j = int(ok[-1])
    return float(rates[order][j]), float(csum[j])


def mds_select(data, config, repeats=30, base_seed=0, threads=None):
    """Multiple data splitting: average selections through inclusion rates.

    Runs ``ds_select`` with seeds ``base_seed + 1 .. base_seed + repeats``
    (repeats are independent and may execute concurrently), forms the
    normalized inclusion rate of each variable, and keeps the variables
    whose rate exceeds the largest low-rate prefix with total mass at most
    ``q``. Returns the selection plus the rates.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    seeds = [base_seed + 1 + r for r in range(repeats)]
    runs = parallel_map(lambda s: ds_select(data, config, s), seeds, threads)
    rates = np.zeros(data.p)
    for res in runs:
        if res.n_selected:
            rates[res.selected] += 1.0 / res.n_selected
    rates /= repeats
    cut, dropped = mds_cutoff(rates, config.q)
    selected = np.flatnonzero(rates > cut)
    result = SelectionResult(
        selected, cut, dropped, config.q, config.criterion, f"mds-{config.mirror}"
    )
    return result, InclusionRates(rates=rates, repeats=repeats)
