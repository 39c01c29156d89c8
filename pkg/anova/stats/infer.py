"""Parametric ANOVA, permutation tests (including pCMR), two-sample tests,
normality screening and multiple-testing correction.

Every test returns an InferenceReport holding a term × response grid of
statistics and p-values. Permutation iteration ``b`` always draws from
``rng_substream(RngStream(seed), b)`` and only exceedance counts are
aggregated, so results do not depend on the thread count.
"""

import itertools
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import stats
from statsmodels.stats.multitest import multipletests

from anova.stats.config import config, resolve_n_jobs
from anova.stats.design import DesignSpec, build_coding_matrix
from anova.stats.exceptions import (
    InfeasibleMask,
    InsufficientReplication,
    InvalidConfig,
    InvalidDesign,
    InvalidP,
    TooFewObservations,
    ZeroResidualVariance,
    ZeroVariance,
)
from anova.stats.glm import Factorization, GlmFitter, ResponseMatrix, RESIDUAL, f_ratio
from anova.stats.impute import cell_indicator, cell_mean_fill, cmr, empty_cell_responses
from anova.stats.numerics import RngStream, f_upper_tail, rng_substream, t_two_sided
from anova.stats.profiling import increment_counter, record_warning

logger = logging.getLogger(__name__)

# Permuted statistics within this relative distance of the observed one count as ties.
_TIE_RTOL = 1e-10
_CHUNK = 50
# Reported in place of p = 0 when a statistic is infinite.
P_SENTINEL = float(np.finfo(float).tiny)


class Statistic(str, Enum):
    F_RATIO = "F"
    SS = "SS"


class Scheme(str, Enum):
    RAW = "raw"
    REDUCED = "reduced"
    FULL = "full"


class Correction(str, Enum):
    NONE = "none"
    BONFERRONI = "bonferroni"
    BH = "bh"
    STOREY = "storey"


@dataclass(frozen=True)
class TestConfig:
    """Permutation test settings."""

    statistic: Statistic = Statistic.F_RATIO
    n_permutations: int = config.N_PERMUTATIONS
    scheme: Scheme = Scheme.RAW
    seed: int = config.SEED
    alpha: float = config.ALPHA
    n_jobs: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "statistic", Statistic(self.statistic))
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.n_permutations < config.MIN_PERMUTATIONS:
            raise InvalidConfig(
                f"at least {config.MIN_PERMUTATIONS} permutations are required, got {self.n_permutations}"
            )
        if not 0 < self.alpha < 1:
            raise InvalidConfig(f"alpha must be in (0, 1), got {self.alpha}")
        RngStream(self.seed)

    @property
    def p_floor(self) -> float:
        return 1.0 / (self.n_permutations + 1)


@dataclass(frozen=True, eq=False)
class InferenceReport:
    """Per-(term, response) statistics and p-values plus test metadata.

    ``p_values`` and ``statistics`` are T×M arrays; ``adjusted`` maps a
    correction name to a T×M array. Corrections treat the responses of one
    term as a family.
    """

    terms: Tuple[str, ...]
    response_names: Tuple[str, ...]
    statistics: np.ndarray
    p_values: np.ndarray
    test: str
    n_permutations: int = 0
    seed: Optional[int] = None
    metadata: Dict[str, Any] = field(default_factory=dict)
    adjusted: Dict[str, np.ndarray] = field(default_factory=dict)
    markers: Optional[np.ndarray] = None

    def p_value(self, term: str, response: str) -> float:
        return float(self.p_values[self.terms.index(term), self.response_names.index(response)])

    def term_p_values(self, term: str) -> np.ndarray:
        return self.p_values[self.terms.index(term)]

    @property
    def p_floor(self) -> Optional[float]:
        return 1.0 / (self.n_permutations + 1) if self.n_permutations else None

    def with_correction(self, method, lam: Optional[float] = None) -> "InferenceReport":
        method = Correction(method)
        if method is Correction.NONE:
            return self
        adjusted = np.vstack([adjust_pvalues(row, method, lam) for row in self.p_values])
        return replace(self, adjusted={**self.adjusted, method.value: adjusted})

    def with_metadata(self, **metadata) -> "InferenceReport":
        return replace(self, metadata={**self.metadata, **metadata})

    def to_frame(self, alpha: float = config.ALPHA, method: Optional[str] = None) -> pd.DataFrame:
        """Long layout: one row per (response, term)."""
        method = Correction(method).value if method else None
        rows = []
        for j, response in enumerate(self.response_names):
            for t, term in enumerate(self.terms):
                p_raw = float(self.p_values[t, j])
                p_adj = float(self.adjusted[method][t, j]) if method and method != "none" else p_raw
                rows.append(
                    {
                        "response": response,
                        "term": term,
                        "statistic": float(self.statistics[t, j]),
                        "p_raw": p_raw,
                        "p_adjusted": p_adj,
                        "significant": bool(p_adj < alpha),
                        "marker": "" if self.markers is None else str(self.markers[t, j]),
                    }
                )
        return pd.DataFrame(rows)


def _as_values(X) -> Tuple[np.ndarray, Tuple[str, ...]]:
    if isinstance(X, ResponseMatrix):
        return X.complete_values(), X.response_names
    matrix = ResponseMatrix.from_array(X)
    return matrix.complete_values(), matrix.response_names


def parametric_anova(f: Factorization, strict: bool = False) -> InferenceReport:
    """F = MS_term / MS_residual with p from the upper tail of F(df_term, df_residual)."""
    dofs = f.dofs
    if dofs.residual < 1:
        raise InsufficientReplication("parametric ANOVA needs at least one residual degree of freedom")

    ss_residual = f.ss[RESIDUAL]
    terms = f.coding.terms
    statistics = np.vstack(
        [f_ratio(f.ss[f.design.term_label(t)], dofs.term_dofs[t], ss_residual, dofs.residual) for t in terms]
    )
    p_values = np.vstack(
        [np.atleast_1d(f_upper_tail(statistics[row], dofs.term_dofs[t], dofs.residual)) for row, t in enumerate(terms)]
    )

    zero = ss_residual == 0
    if zero.any():
        names = [f.response_names[j] for j in np.flatnonzero(zero)]
        message = f"zero residual variance for responses {names}"
        if strict:
            raise ZeroResidualVariance(message)
        record_warning(message + "; p reported at the smallest positive float", logger)
        p_values = np.where(np.isposinf(statistics), P_SENTINEL, p_values)
        p_values = np.where(statistics == 0, 1.0, p_values)

    return InferenceReport(
        terms=tuple(f.term_labels),
        response_names=f.response_names,
        statistics=statistics,
        p_values=np.clip(p_values, P_SENTINEL, 1.0),
        test="parametric",
        metadata={"df_residual": dofs.residual},
    )


def _threshold(observed: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        lowered = observed - _TIE_RTOL * np.abs(observed)
    return np.where(np.isfinite(observed), lowered, observed)


def _count_exceedances(
    draw: Callable[[np.random.Generator], Tuple[np.ndarray, int]],
    observed: np.ndarray,
    cfg: TestConfig,
) -> Tuple[np.ndarray, int]:
    """Run B permutations through ``draw`` and count statistics ≥ observed."""
    threshold = _threshold(observed)
    root = RngStream(cfg.seed)

    def run_chunk(indices: range) -> Tuple[np.ndarray, int]:
        counts = np.zeros(observed.shape, dtype=np.int64)
        redraws = 0
        for b in indices:
            permuted, extra = draw(rng_substream(root, b).generator())
            counts += permuted >= threshold
            redraws += extra
        return counts, redraws

    chunks = [range(start, min(start + _CHUNK, cfg.n_permutations)) for start in range(0, cfg.n_permutations, _CHUNK)]
    n_jobs = resolve_n_jobs(cfg.n_jobs)
    if n_jobs == 1 or len(chunks) == 1:
        results = [run_chunk(chunk) for chunk in chunks]
    else:
        results = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(run_chunk)(chunk) for chunk in chunks)

    counts = np.sum([r[0] for r in results], axis=0)
    redraws = int(sum(r[1] for r in results))
    increment_counter("permutations", cfg.n_permutations)
    return counts, redraws


def _permutation_report(
    observed: np.ndarray,
    counts: np.ndarray,
    fitter: GlmFitter,
    names: Tuple[str, ...],
    cfg: TestConfig,
    test: str,
) -> InferenceReport:
    return InferenceReport(
        terms=tuple(fitter.coding.design.term_label(t) for t in fitter.terms),
        response_names=names,
        statistics=observed,
        p_values=(counts + 1.0) / (cfg.n_permutations + 1.0),
        test=test,
        n_permutations=cfg.n_permutations,
        seed=cfg.seed,
        metadata={"statistic": cfg.statistic.value, "scheme": cfg.scheme.value},
    )


def permutation_test(X, design: DesignSpec, cfg: TestConfig = TestConfig()) -> InferenceReport:
    """p = (b + 1)/(B + 1), b counting permuted statistics at least as large as observed.

    Schemes: ``raw`` permutes data rows against the fixed design;
    ``reduced`` permutes the residuals of the model without the tested term
    and adds back that model's fit; ``full`` permutes the full-model
    residuals and computes the statistic on them directly.
    """
    values, names = _as_values(X)
    coding = build_coding_matrix(design)
    fitter = GlmFitter(coding)
    statistic = cfg.statistic.value
    observed = fitter.statistics(values, statistic)
    n = values.shape[0]

    if cfg.scheme is Scheme.RAW:

        def draw(generator):
            return fitter.statistics(values[generator.permutation(n)], statistic), 0

    elif cfg.scheme is Scheme.FULL:
        residuals = values - fitter.solver.fitted(values)

        def draw(generator):
            return fitter.statistics(residuals[generator.permutation(n)], statistic), 0

    else:
        reduced = []
        for term in fitter.terms:
            reduced_fit = GlmFitter(coding.without(term), allow_saturated=True).solver.fitted(values)
            reduced.append((reduced_fit, values - reduced_fit))

        def draw(generator):
            order = generator.permutation(n)
            permuted = np.empty_like(observed)
            for row, (reduced_fit, reduced_residuals) in enumerate(reduced):
                permuted[row] = fitter.statistics(reduced_fit + reduced_residuals[order], statistic)[row]
            return permuted, 0

    counts, _ = _count_exceedances(draw, observed, cfg)
    logger.debug(f"Permutation test ({cfg.scheme.value}, {statistic}) over {cfg.n_permutations} permutations")
    return _permutation_report(observed, counts, fitter, names, cfg, "permutation")


def pcmr_permutation_test(
    X: ResponseMatrix,
    design: DesignSpec,
    cfg: TestConfig = TestConfig(),
    cell_terms=None,
) -> InferenceReport:
    """Permutation test with cell-mean imputation repeated inside every permutation.

    Rows are permuted with their masks against the fixed design and the
    gaps re-filled from the permuted cell means. A permutation that leaves
    a cell without observations for some response gets that response column
    re-permuted from the same stream until every cell is covered. A column
    still infeasible after the redraw limit raises InfeasibleMask.
    """
    if cfg.scheme is not Scheme.RAW:
        raise InvalidConfig("pCMR permutes raw data rows; only the raw scheme is supported")

    completed = cmr(X, design, cell_terms).values
    coding = build_coding_matrix(design)
    fitter = GlmFitter(coding)
    statistic = cfg.statistic.value
    observed = fitter.statistics(completed, statistic)

    values = np.where(X.missing_mask, 0.0, X.values)
    mask = X.missing_mask
    has_missing = bool(mask.any())
    indicator = cell_indicator(design, cell_terms)
    n = values.shape[0]
    limit = config.PCMR_MAX_REDRAWS

    def draw(generator):
        order = generator.permutation(n)
        if not has_missing:
            return fitter.statistics(values[order], statistic), 0
        permuted, permuted_mask = values[order], mask[order]
        attempts = np.zeros(values.shape[1], dtype=np.int64)
        emptied = empty_cell_responses(permuted_mask, indicator)
        while emptied.size:
            attempts[emptied] += 1
            if attempts.max() >= limit:
                name = X.response_names[int(np.argmax(attempts))]
                raise InfeasibleMask(
                    f"{limit} consecutive permutations of response '{name}' left a design cell without observations"
                )
            for j in emptied:
                column_order = generator.permutation(n)
                permuted[:, j] = values[column_order, j]
                permuted_mask[:, j] = mask[column_order, j]
            emptied = empty_cell_responses(permuted_mask, indicator)
        filled = cell_mean_fill(permuted, permuted_mask, indicator)
        return fitter.statistics(filled, statistic), int(attempts.sum())

    counts, redraws = _count_exceedances(draw, observed, cfg)
    if redraws:
        increment_counter("redraws", redraws)
        record_warning(f"pCMR redrew {redraws} response columns that emptied a design cell", logger)
    report = _permutation_report(observed, counts, fitter, X.response_names, cfg, "pcmr")
    return report.with_metadata(redraws=redraws, n_missing=X.n_missing)


class TwoSampleResult(NamedTuple):
    statistic: float
    pvalue: float


def _two_groups(group1, group2) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(group1, dtype=float).ravel()
    b = np.asarray(group2, dtype=float).ravel()
    if a.size < 2 or b.size < 2:
        raise TooFewObservations(f"two-sample tests need at least 2 values per group, got {a.size} and {b.size}")
    return a, b


def t_test(group1, group2, welch: bool = False, strict: bool = False) -> TwoSampleResult:
    """Two-sided two-sample t-test: pooled variance, or Welch's unequal-variance form."""
    a, b = _two_groups(group1, group2)
    n1, n2 = a.size, b.size
    diff = a.mean() - b.mean()
    v1, v2 = a.var(ddof=1), b.var(ddof=1)

    if welch:
        se2 = v1 / n1 + v2 / n2
        df = se2**2 / ((v1 / n1) ** 2 / (n1 - 1) + (v2 / n2) ** 2 / (n2 - 1)) if se2 > 0 else n1 + n2 - 2
    else:
        df = n1 + n2 - 2
        se2 = ((n1 - 1) * v1 + (n2 - 1) * v2) / df * (1.0 / n1 + 1.0 / n2)

    if se2 == 0:
        message = "two-sample t-test with zero pooled variance"
        if strict:
            raise ZeroVariance(message)
        record_warning(message, logger)
        if diff == 0:
            return TwoSampleResult(0.0, 1.0)
        return TwoSampleResult(float(np.copysign(np.inf, diff)), P_SENTINEL)

    t = diff / np.sqrt(se2)
    return TwoSampleResult(float(t), float(max(t_two_sided(t, df), P_SENTINEL)))


def wilcoxon_rank_sum(group1, group2) -> TwoSampleResult:
    """Two-sided Wilcoxon rank-sum test; the statistic is Mann-Whitney U of group1.

    Exact (midrank-aware) enumeration for small samples, otherwise the normal
    approximation with tie and continuity corrections.
    """
    a, b = _two_groups(group1, group2)
    n1, n = a.size, a.size + b.size
    ranks = stats.rankdata(np.concatenate([a, b]), method="average")
    rank_sum = float(ranks[:n1].sum())
    u = rank_sum - n1 * (n1 + 1) / 2.0

    if n > config.WILCOXON_EXACT_MAX_N:
        result = stats.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
        return TwoSampleResult(float(result.statistic), float(min(result.pvalue, 1.0)))

    expected = n1 * (n + 1) / 2.0
    observed_dev = abs(rank_sum - expected)
    sums = np.array([ranks[list(idx)].sum() for idx in itertools.combinations(range(n), n1)])
    extreme = np.abs(sums - expected) >= observed_dev - 1e-9
    return TwoSampleResult(u, float(np.mean(extreme)))


def normality_test(residuals) -> Tuple[float, float]:
    """Anderson-Darling test of normality with estimated mean and variance.

    Returns the small-sample modified statistic A*² and Stephens' p-value.
    """
    x = np.asarray(residuals, dtype=float).ravel()
    n = x.size
    if n < config.NORMALITY_MIN_OBS:
        raise TooFewObservations(f"normality test needs at least {config.NORMALITY_MIN_OBS} values, got {n}")
    if np.ptp(x) == 0:
        raise ZeroVariance("normality test on constant values")

    a2 = float(stats.anderson(x, dist="norm").statistic)
    a_star = a2 * (1.0 + 0.75 / n + 2.25 / n**2)
    if a_star >= 0.6:
        p = np.exp(1.2937 - 5.709 * a_star + 0.0186 * a_star**2)
    elif a_star >= 0.34:
        p = np.exp(0.9177 - 4.279 * a_star - 1.38 * a_star**2)
    elif a_star >= 0.2:
        p = 1.0 - np.exp(-8.318 + 42.796 * a_star - 59.938 * a_star**2)
    else:
        p = 1.0 - np.exp(-13.436 + 101.14 * a_star - 223.73 * a_star**2)
    return a_star, float(np.clip(p, 0.0, 1.0))


def adjust_pvalues(p, method, lam: Optional[float] = None) -> np.ndarray:
    """Bonferroni, Benjamini-Hochberg step-up or Storey q-values (fixed λ).

    Storey's π̂0 counts at least one p-value above λ, so when none exceeds
    λ the q-values are BH scaled by 1/(m(1 − λ)) instead of all zero.
    """
    p = np.asarray(p, dtype=float).ravel()
    if p.size == 0:
        return p
    if np.any(~np.isfinite(p)) or np.any(p <= 0) or np.any(p > 1):
        raise InvalidP("p-values must lie in (0, 1]")

    method = Correction(method)
    if method is Correction.NONE:
        return p.copy()
    if method is Correction.BONFERRONI:
        return multipletests(p, method="bonferroni")[1]
    if method is Correction.BH:
        return multipletests(p, method="fdr_bh")[1]

    lam = config.STOREY_LAMBDA if lam is None else lam
    if not 0 <= lam < 1:
        raise InvalidConfig(f"Storey lambda must be in [0, 1), got {lam}")
    pi0 = min(1.0, max(int(np.sum(p > lam)), 1) / (p.size * (1.0 - lam)))
    # BH on π̂0·p is the step-up min over j ≥ i of π̂0·m·p(j)/j, capped at 1.
    return multipletests(pi0 * p, method="fdr_bh")[1]


def _two_level_factor(design: DesignSpec, name: str) -> int:
    index = design.factor_index(name)
    if design.factors[index].n_levels != 2:
        raise InvalidDesign(
            f"traditional tests compare two groups; factor '{name}' has {design.factors[index].n_levels} levels"
        )
    return index


def _traditional_column(x, groups, gate: bool, alpha: float, welch: bool) -> Tuple[float, float, str]:
    a, b = x[groups == 1], x[groups == 2]
    if a.size < 2 or b.size < 2:
        raise TooFewObservations(f"group sizes {a.size} and {b.size}; at least 2 each are required")
    if gate:
        residuals = np.concatenate([a - a.mean(), b - b.mean()])
        normal = False
        if residuals.size >= config.NORMALITY_MIN_OBS and np.ptp(residuals) > 0:
            normal = normality_test(residuals)[1] >= alpha
        if not normal:
            statistic, p = wilcoxon_rank_sum(a, b)
            return statistic, p, "*"
    statistic, p = t_test(a, b, welch=welch)
    return statistic, p, ""


def traditional_test(
    X: ResponseMatrix,
    design: DesignSpec,
    group: str,
    transform_active: bool = False,
    alpha: float = config.ALPHA,
    welch: bool = False,
    stratify_by: Optional[str] = None,
) -> InferenceReport:
    """Per-response two-group comparison routed by a normality gate.

    Each response uses its observed entries only. The t-test is used when
    the Anderson-Darling test on within-group residuals does not reject at
    ``alpha``, the Wilcoxon rank-sum test otherwise (marked ``*``). When a
    transform is active the gate is skipped and the t-test always applies.
    With ``stratify_by`` the comparison is repeated within each level of
    that factor, terms labelled ``<group>@<level>``.
    """
    group_index = _two_level_factor(design, group)
    if stratify_by is None:
        strata: List[Tuple[str, np.ndarray]] = [(group, np.ones(design.n_obs, dtype=bool))]
    else:
        stratum_index = design.factor_index(stratify_by)
        if stratum_index == group_index:
            raise InvalidDesign("the stratifying factor must differ from the grouping factor")
        factor = design.factors[stratum_index]
        strata = [
            (f"{group}@{factor.label(level)}", design.assignments[:, stratum_index] == level)
            for level in range(1, factor.n_levels + 1)
        ]

    gate = not transform_active
    shape = (len(strata), X.n_responses)
    statistics, p_values = np.empty(shape), np.empty(shape)
    markers = np.full(shape, "", dtype=object)
    for s, (_, in_stratum) in enumerate(strata):
        for j in range(X.n_responses):
            rows = in_stratum & ~X.missing_mask[:, j]
            statistics[s, j], p_values[s, j], markers[s, j] = _traditional_column(
                X.values[rows, j], design.assignments[rows, group_index], gate, alpha, welch
            )

    return InferenceReport(
        terms=tuple(label for label, _ in strata),
        response_names=X.response_names,
        statistics=statistics,
        p_values=np.clip(p_values, P_SENTINEL, 1.0),
        test="traditional",
        metadata={"normality_gate": gate, "welch": welch},
        markers=markers,
    )
