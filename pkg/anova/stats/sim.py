"""Simulation studies: sums-of-squares under imputation, imputation error
curves for permutation p-values, and power curves under transforms.

All experiments are deterministic in (config, seed): every simulation,
replicate or grid point owns an ``rng_substream`` and results are
aggregated in index order, whatever the thread count.
"""

import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import stats

from anova.stats.config import config, resolve_n_jobs
from anova.stats.design import DesignSpec, FactorSpec, build_coding_matrix, parse_formula
from anova.stats.exceptions import InvalidConfig
from anova.stats.glm import ResponseMatrix, available_summary, fit, ss_summary
from anova.stats.impute import cmr, induce_missing, tsr, umr
from anova.stats.infer import TestConfig, pcmr_permutation_test, permutation_test
from anova.stats.numerics import RngStream, rng_substream
from anova.stats.profiling import merge_profile, record_warning, run_isolated
from anova.stats.transform import BOXCOX, NONE, RANK, RAW_RANK, apply_transform

logger = logging.getLogger(__name__)

NORMAL = "normal"
UNIFORM = "uniform"
EXP_CUBED = "exp_cubed"
NORMAL_ONE_OUTLIER = "normal_one_outlier"
DISTRIBUTIONS = (NORMAL, UNIFORM, EXP_CUBED, NORMAL_ONE_OUTLIER)

ADDITIVE = "additive"
INTERACTION = "interaction"
MODELS = {ADDITIVE: "A+B", INTERACTION: "A+B+A*B"}

MCAR_NOTE = "missing entries are generated completely at random (MCAR)"

# Stream ids separating the experiments that share one seed.
_TABLE1, _FIG1, _POWER = 1, 2, 3


@dataclass(frozen=True)
class SimConfig:
    """Balanced simulated design and data-generating settings."""

    factors: Tuple[Tuple[str, int], ...] = (("A", 4), ("B", 3))
    replicates: int = 4
    formula: str = "A+B"
    n_responses: int = 400
    delta: float = 1.0
    residual_distribution: str = NORMAL
    residual_sigma: float = 1.0
    outlier_magnitude: float = 10.0
    seed: int = config.SEED
    n_jobs: Optional[int] = None

    def __post_init__(self):
        if self.delta < 0:
            raise InvalidConfig(f"effect scale must be >= 0, got {self.delta}")
        if self.n_responses < 1:
            raise InvalidConfig(f"need at least one response, got {self.n_responses}")
        if self.replicates < 1:
            raise InvalidConfig(f"need at least one replicate per cell, got {self.replicates}")
        if self.residual_sigma <= 0:
            raise InvalidConfig(f"residual sigma must be positive, got {self.residual_sigma}")
        if self.residual_distribution not in DISTRIBUTIONS:
            raise InvalidConfig(
                f"unknown residual distribution '{self.residual_distribution}', "
                f"expected one of {', '.join(DISTRIBUTIONS)}"
            )
        RngStream(self.seed)

    def design(self, formula: Optional[str] = None) -> DesignSpec:
        return balanced_design(self.factors, self.replicates, formula or self.formula)


def power_config(**overrides) -> SimConfig:
    """Case/control × 3 timepoints, 10 replicates per cell, 14 responses, with interaction."""
    defaults = dict(factors=(("A", 2), ("B", 3)), replicates=10, formula="A+B+A*B", n_responses=14)
    return SimConfig(**{**defaults, **overrides})


def balanced_design(factors: Sequence[Tuple[str, int]], replicates: int, formula: str) -> DesignSpec:
    """Full factorial with ``replicates`` consecutive rows per cell, cells in lexicographic order."""
    specs = tuple(FactorSpec(name, levels) for name, levels in factors)
    cells = list(itertools.product(*[range(1, levels + 1) for _, levels in factors]))
    assignments = np.repeat(np.array(cells, dtype=int), replicates, axis=0)
    return DesignSpec(specs, assignments, tuple(parse_formula(formula, [s.name for s in specs])))


@dataclass(frozen=True, eq=False)
class SimDataset:
    matrix: ResponseMatrix
    design: DesignSpec
    effects: Dict[str, np.ndarray] = field(default_factory=dict)


def _residuals(cfg: SimConfig, generator: np.random.Generator, shape: Tuple[int, int]) -> np.ndarray:
    distribution = cfg.residual_distribution
    if distribution == UNIFORM:
        draws = generator.uniform(-1.0, 1.0, size=shape)
    elif distribution == EXP_CUBED:
        draws = generator.standard_exponential(size=shape) ** 3
    else:
        draws = generator.standard_normal(size=shape)

    draws = (draws - draws.mean(axis=0)) / draws.std(axis=0, ddof=1) * cfg.residual_sigma
    if distribution == NORMAL_ONE_OUTLIER:
        row, col = generator.integers(shape[0]), generator.integers(shape[1])
        draws[row, col] = cfg.outlier_magnitude * cfg.residual_sigma
    return draws


def generate_dataset(
    cfg: SimConfig,
    significant_terms: Sequence[str] = ("A",),
    rng: Optional[RngStream] = None,
    design: Optional[DesignSpec] = None,
) -> SimDataset:
    """Responses = Σ significant term effects + residuals.

    Each significant term gets standard normal per-level (or per-cell)
    offsets for every response, centered to sum to zero over levels and
    scaled by ``delta``.
    """
    design = design or cfg.design()
    generator = (rng or RngStream(cfg.seed)).generator()
    n, m = design.n_obs, cfg.n_responses

    values = np.zeros((n, m))
    effects = {}
    for label in significant_terms:
        term = design.term_by_label(label)
        levels = [design.factors[i].n_levels for i in term]
        offsets = generator.standard_normal(size=(*levels, m))
        for axis in range(len(levels)):
            offsets = offsets - offsets.mean(axis=axis, keepdims=True)
        index = tuple(design.assignments[:, i] - 1 for i in term)
        effect = cfg.delta * offsets[index]
        effects[label] = effect
        values += effect

    values += _residuals(cfg, generator, (n, m))
    names = tuple(f"y{j + 1}" for j in range(m))
    return SimDataset(ResponseMatrix.from_array(values, names), design, effects)


def _parallel(n_jobs: Optional[int], tasks):
    jobs = resolve_n_jobs(n_jobs)
    if jobs == 1:
        captured = [run_isolated(task) for task in tasks]
    else:
        captured = Parallel(n_jobs=jobs, prefer="threads")(delayed(run_isolated)(task) for task in tasks)
    # Task order, so the run profile does not depend on the thread count
    for _, warnings, counts in captured:
        merge_profile(warnings, counts)
    return [result for result, _, _ in captured]


TABLE1_COLUMNS = ("Original", "Available", "UMR", "CMR", "TSR")


def table1_experiment(cfg: SimConfig, n_sims: int = 10, missing_fraction: float = 0.05) -> pd.DataFrame:
    """Average aggregate SS per source (Factor A, Factor B, Residuals, Total) for
    complete data, observed entries only, and three imputations."""
    design = cfg.design()
    if any(len(t) > 1 for t in design.terms):
        raise InvalidConfig("the sums-of-squares comparison uses a main-effects model")
    coding = build_coding_matrix(design)
    significant = [design.term_label(design.terms[0])]
    root = RngStream(cfg.seed, _TABLE1)

    def one_sim(s: int) -> np.ndarray:
        stream = rng_substream(root, s)
        data = generate_dataset(cfg, significant, rng_substream(stream, 0), design)
        masked = induce_missing(data.matrix, missing_fraction, rng_substream(stream, 1), design)
        frames = [
            ss_summary(fit(coding, data.matrix)),
            available_summary(masked, design),
            ss_summary(fit(coding, umr(masked).as_response())),
            ss_summary(fit(coding, cmr(masked, design).as_response())),
            ss_summary(fit(coding, tsr(masked).as_response())),
        ]
        return np.column_stack([frame["ss"].to_numpy() for frame in frames])

    if missing_fraction > 0:
        record_warning(MCAR_NOTE, logger)
    results = _parallel(cfg.n_jobs, [lambda s=s: one_sim(s) for s in range(n_sims)])
    average = np.mean(np.stack(results), axis=0)

    labels = [f"Factor {design.term_label(t)}" for t in design.terms] + ["Residuals", "Total"]
    return pd.DataFrame(average, index=pd.Index(labels, name="source"), columns=list(TABLE1_COLUMNS))


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def check_table1(table: pd.DataFrame, missing_fraction: float) -> List[CheckResult]:
    """Ordering checks on a sums-of-squares table."""
    if missing_fraction == 0:
        same = all(np.allclose(table[c], table["Original"], rtol=1e-9, atol=1e-9) for c in table.columns)
        return [CheckResult("identical columns without missing data", same, f"max deviation checked over {table.shape[1]} columns")]

    total, factor = table.loc["Total"], table.index[0]
    ratio = total["Available"] / total["Original"]
    distances = {method: abs(total[method] - total["Original"]) for method in ("UMR", "CMR", "TSR")}
    closest = min(distances, key=distances.get)
    return [
        CheckResult(
            "available total tracks observed fraction",
            abs(ratio - (1 - missing_fraction)) <= 0.02,
            f"Available/Original = {ratio:.4f}, expected {1 - missing_fraction:.2f} ± 0.02",
        ),
        CheckResult("CMR total closest to original", closest == "CMR", f"closest is {closest}"),
        CheckResult(
            "UMR shrinks the significant factor",
            table.loc[factor, "UMR"] < table.loc[factor, "Available"],
            f"UMR {table.loc[factor, 'UMR']:.6g} vs Available {table.loc[factor, 'Available']:.6g}",
        ),
        CheckResult(
            "CMR inflates the significant factor",
            table.loc[factor, "CMR"] > table.loc[factor, "Available"],
            f"CMR {table.loc[factor, 'CMR']:.6g} vs Available {table.loc[factor, 'Available']:.6g}",
        ),
    ]


FIG1_METHODS = ("UMR", "CMR", "pCMR")
DEFAULT_MISSING_GRID = (0.05, 0.10, 0.15, 0.20, 0.25, 0.30)


def relative_error(p_observed: np.ndarray, p_expected: np.ndarray, floor: float) -> float:
    """Σ (p_obs − p_exp)/p_exp over all entries, p_exp floored at ``floor``; keeps the sign."""
    expected = np.maximum(p_expected, floor)
    return float(np.sum((p_observed - expected) / expected))


def fig1_experiment(
    cfg: SimConfig,
    missing_grid: Sequence[float] = DEFAULT_MISSING_GRID,
    n_replicates: int = 20,
    n_permutations: int = 200,
    models: Sequence[str] = (ADDITIVE, INTERACTION),
) -> pd.DataFrame:
    """Signed relative error of permutation p-values after UMR, CMR and pCMR.

    Columns: model, missing, method, mean_err, sd_err.
    """
    rows = []
    for model_index, model in enumerate(models):
        design = cfg.design(MODELS[model])
        root = rng_substream(RngStream(cfg.seed, _FIG1), model_index)

        def one_replicate(r: int) -> np.ndarray:
            stream = rng_substream(root, r)
            data = generate_dataset(cfg, ("A",), rng_substream(stream, 0), design)
            perm_seed = rng_substream(stream, 1).stream_id
            test_cfg = TestConfig(n_permutations=n_permutations, seed=perm_seed, n_jobs=1)
            expected = permutation_test(data.matrix, design, test_cfg).p_values

            errors = np.zeros((len(missing_grid), len(FIG1_METHODS)))
            for g, fraction in enumerate(missing_grid):
                masked = induce_missing(data.matrix, fraction, rng_substream(stream, 2 + g), design)
                observed = [
                    permutation_test(umr(masked).as_response(), design, test_cfg).p_values,
                    permutation_test(cmr(masked, design).as_response(), design, test_cfg).p_values,
                    pcmr_permutation_test(masked, design, test_cfg).p_values,
                ]
                for k, p_obs in enumerate(observed):
                    errors[g, k] = relative_error(p_obs, expected, test_cfg.p_floor)
            return errors

        results = np.stack(_parallel(cfg.n_jobs, [lambda r=r: one_replicate(r) for r in range(n_replicates)]))
        means = results.mean(axis=0)
        sds = results.std(axis=0, ddof=1) if n_replicates > 1 else np.zeros_like(means)
        for g, fraction in enumerate(missing_grid):
            for k, method in enumerate(FIG1_METHODS):
                rows.append(
                    {"model": model, "missing": fraction, "method": method, "mean_err": means[g, k], "sd_err": sds[g, k]}
                )

    record_warning(MCAR_NOTE, logger)
    return pd.DataFrame(rows)


def check_fig1(frame: pd.DataFrame) -> List[CheckResult]:
    """pCMR within one sd of zero up to 20% missing; CMR negative and decreasing;
    CMR < pCMR < UMR from 20% missing under the interaction model."""
    results = []
    for model, group in frame.groupby("model", sort=False):
        pcmr_rows = group[(group["method"] == "pCMR") & (group["missing"] <= 0.20 + 1e-12)]
        within = bool(np.all(np.abs(pcmr_rows["mean_err"]) <= pcmr_rows["sd_err"]))
        results.append(CheckResult(f"{model}: pCMR error within one sd", within, f"{len(pcmr_rows)} grid points"))

        cmr_rows = group[group["method"] == "CMR"].sort_values("missing")
        negative = bool(np.all(cmr_rows["mean_err"] < 0))
        trend = stats.spearmanr(cmr_rows["missing"], cmr_rows["mean_err"]).statistic if len(cmr_rows) > 2 else -1.0
        results.append(
            CheckResult(
                f"{model}: CMR overoptimistic",
                negative and bool(trend < 0),
                f"all negative: {negative}, Spearman trend {trend:.3f}",
            )
        )

        if model == INTERACTION:
            late = group[group["missing"] >= 0.20 - 1e-12].pivot(index="missing", columns="method", values="mean_err")
            ordered = bool(np.all((late["CMR"] < late["pCMR"]) & (late["pCMR"] < late["UMR"])))
            results.append(CheckResult(f"{model}: CMR < pCMR < UMR from 20% missing", ordered, f"{len(late)} grid points"))
    return results


@dataclass(frozen=True, eq=False)
class PowerCurve:
    distribution: str
    transform: str
    effect_grid: np.ndarray
    power: np.ndarray
    n_replicates: int
    n_permutations: int
    alpha: float


POWER_TRANSFORMS = ("raw", BOXCOX, RANK, RAW_RANK)
DEFAULT_EFFECT_GRID = tuple(np.round(np.arange(8) * 0.2, 10))


def _term_p_values(matrix: ResponseMatrix, design: DesignSpec, term: str, transform: str, test_cfg: TestConfig) -> np.ndarray:
    method = NONE if transform == "raw" else transform
    transformed = apply_transform(matrix, method, shift=True, warn=False).matrix
    p = permutation_test(transformed, design, test_cfg).term_p_values(term)
    if transform == RAW_RANK:
        m = matrix.n_responses
        p = np.minimum(2.0 * np.minimum(p[:m], p[m:]), 1.0)
    return p


def power_curves(
    cfg: SimConfig,
    effect_grid: Sequence[float] = DEFAULT_EFFECT_GRID,
    transforms: Sequence[str] = POWER_TRANSFORMS,
    distributions: Sequence[str] = (NORMAL,),
    n_replicates: int = 300,
    n_permutations: int = 200,
    alpha: float = config.ALPHA,
    term: str = "A",
) -> List[PowerCurve]:
    """Rejection rate of ``term`` per transform and residual distribution.

    Every transform is applied to the same simulated datasets. The raw+rank
    variant combines each response's raw and rank p-values as
    min(2·min(p_raw, p_rank), 1).
    """
    grid = np.asarray(effect_grid, dtype=float)
    if grid.size == 0 or grid[0] != 0 or np.any(np.diff(grid) <= 0):
        raise InvalidConfig("effect grid must start at 0 and increase")
    unknown = set(transforms) - set(POWER_TRANSFORMS)
    if unknown:
        raise InvalidConfig(f"unknown transforms {sorted(unknown)}")

    design = cfg.design()
    if BOXCOX in transforms:
        record_warning("Box-Cox runs shift simulated data with non-positive values by 1 - min", logger)

    curves = []
    for dist_index, distribution in enumerate(distributions):
        dist_cfg = replace(cfg, residual_distribution=distribution)
        root = rng_substream(RngStream(cfg.seed, _POWER), dist_index)

        def one_point(g: int, r: int) -> np.ndarray:
            stream = rng_substream(rng_substream(root, g), r)
            data = generate_dataset(replace(dist_cfg, delta=float(grid[g])), (term,), rng_substream(stream, 0), design)
            test_cfg = TestConfig(n_permutations=n_permutations, seed=rng_substream(stream, 1).stream_id, n_jobs=1)
            return np.array(
                [np.sum(_term_p_values(data.matrix, design, term, t, test_cfg) < alpha) for t in transforms]
            )

        tasks = [lambda g=g, r=r: one_point(g, r) for g in range(grid.size) for r in range(n_replicates)]
        counts = np.stack(_parallel(cfg.n_jobs, tasks)).reshape(grid.size, n_replicates, len(transforms)).sum(axis=1)
        power = counts / float(n_replicates * cfg.n_responses)
        for k, transform in enumerate(transforms):
            curves.append(PowerCurve(distribution, transform, grid, power[:, k], n_replicates, n_permutations, alpha))
        logger.info(f"Power curves for {distribution}: {dict(zip(transforms, power[-1].round(3)))} at delta={grid[-1]}")
    return curves


def power_frame(curves: Sequence[PowerCurve]) -> pd.DataFrame:
    """Long layout: distribution, delta, transform, power."""
    rows = [
        {"distribution": c.distribution, "delta": float(delta), "transform": c.transform, "power": float(power)}
        for c in curves
        for delta, power in zip(c.effect_grid, c.power)
    ]
    return pd.DataFrame(rows)


def check_power(curves: Sequence[PowerCurve], margin: float = 0.03) -> List[CheckResult]:
    """Rank at least as powerful as Box-Cox per distribution; rank robust to a planted outlier."""
    by_key = {(c.distribution, c.transform): c for c in curves}
    results = []
    for distribution in dict.fromkeys(c.distribution for c in curves):
        rank, boxcox = by_key.get((distribution, RANK)), by_key.get((distribution, BOXCOX))
        if rank is not None and boxcox is not None:
            gap = float(np.min(rank.power - boxcox.power))
            results.append(CheckResult(f"{distribution}: rank >= boxcox", gap >= -margin, f"smallest rank - boxcox gap {gap:.3f}"))

    clean, dirty = (NORMAL, RANK), (NORMAL_ONE_OUTLIER, RANK)
    if clean in by_key and dirty in by_key:
        drift = float(np.max(np.abs(by_key[clean].power - by_key[dirty].power)))
        results.append(CheckResult("rank robust to one outlier", drift <= 0.05, f"max |difference| {drift:.3f}"))
        if (NORMAL, "raw") in by_key and (NORMAL_ONE_OUTLIER, "raw") in by_key:
            loss = by_key[(NORMAL, "raw")].power - by_key[(NORMAL_ONE_OUTLIER, "raw")].power
            n_mid = int(np.sum(loss[1:-1] > 0.10))
            results.append(CheckResult("raw degrades with one outlier", n_mid >= 2, f"{n_mid} mid-grid points lose > 0.10"))
    return results
