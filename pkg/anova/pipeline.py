"""Analysis, validation and simulation runs behind the management commands.

Every run writes ``manifest.json`` into its output directory, on success
and on failure.
"""

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from django.conf import settings
from django.utils import timezone

from anova import __version__, plots
from anova.io import (
    check_alignment,
    file_checksum,
    format_p,
    read_data_csv,
    read_design_csv,
    write_csv,
    write_json,
)
from anova.stats import sim
from anova.stats.config import config
from anova.stats.design import DesignSpec, build_coding_matrix, dof_table
from anova.stats.exceptions import FactorLabError, InvalidConfig, NumericalError
from anova.stats.glm import (
    RESIDUAL,
    TOTAL,
    EffectPca,
    Factorization,
    ResponseMatrix,
    available_ss,
    effect_pca,
    fit,
)
from anova.stats.impute import cmr, rmd_split, tsr, umr
from anova.stats.infer import (
    Correction,
    InferenceReport,
    TestConfig,
    normality_test,
    parametric_anova,
    pcmr_permutation_test,
    permutation_test,
    traditional_test,
)
from anova.stats.outlier import OutlierReport, residual_outliers
from anova.stats.profiling import (
    clear_profile,
    get_profile_summary,
    get_warnings,
    log_profile_table,
    profile_stage,
    record_warning,
    start_wall_clock,
)
from anova.stats.transform import NONE, RANK, TRANSFORMS, BoxCoxFit, apply_transform

logger = logging.getLogger(__name__)

RMD, UMR, CMR, TSR, PCMR = "rmd", "umr", "cmr", "tsr", "pcmr"
MISSING_METHODS = (RMD, UMR, CMR, TSR, PCMR)
PARAMETRIC, PERMUTATION, TRADITIONAL = "parametric", "permutation", "traditional"
TESTS = (PARAMETRIC, PERMUTATION, TRADITIONAL)


@dataclass
class PipelineConfig:
    """Everything one analysis run needs; flags map one-to-one onto fields."""

    data_path: Path
    design_path: Path
    formula: Optional[str] = None
    missing: str = PCMR
    transform: str = NONE
    boxcox_shift: bool = False
    test: str = PERMUTATION
    statistic: str = "F"
    n_permutations: int = config.N_PERMUTATIONS
    scheme: str = "raw"
    correction: str = Correction.BH.value
    alpha: float = config.ALPHA
    outlier_alpha: float = config.OUTLIER_ALPHA
    n_components: Optional[int] = None
    remove_outliers: bool = False
    dual_pipeline: bool = False
    asca: bool = False
    group: Optional[str] = None
    stratify_by: Optional[str] = None
    welch: bool = False
    output_dir: Path = Path("output")
    seed: int = config.SEED
    n_jobs: Optional[int] = None
    plots: bool = False

    def validate(self) -> None:
        """Raise InvalidConfig for unknown choices or incompatible combinations."""
        _choose("missing-data method", self.missing, MISSING_METHODS)
        _choose("transform", self.transform, TRANSFORMS)
        _choose("test", self.test, TESTS)
        _choose("correction", self.correction, [c.value for c in Correction])
        if self.missing == PCMR and self.test != PERMUTATION:
            raise InvalidConfig("pcmr re-imputes inside permutations and needs --test permutation")
        if self.missing == RMD and (self.asca or self.remove_outliers):
            raise InvalidConfig("rmd analyses responses one at a time; ASCA and outlier removal need a complete matrix")
        if self.test == TRADITIONAL and not self.group:
            raise InvalidConfig("traditional tests need --group naming a two-level factor")
        if self.stratify_by and not self.group:
            raise InvalidConfig("--stratify-by needs --group for the within-stratum comparison")
        if not 0 < self.outlier_alpha < 1:
            raise InvalidConfig(f"outlier alpha must be in (0, 1), got {self.outlier_alpha}")
        self.test_config()

    def test_config(self) -> TestConfig:
        return TestConfig(
            statistic=self.statistic,
            n_permutations=self.n_permutations,
            scheme=self.scheme,
            seed=self.seed,
            alpha=self.alpha,
            n_jobs=self.n_jobs,
        )

    def as_dict(self) -> Dict[str, Any]:
        return {key: str(value) if isinstance(value, Path) else value for key, value in asdict(self).items()}


def _choose(what: str, value: str, allowed: Sequence[str]) -> None:
    if value not in allowed:
        raise InvalidConfig(f"unknown {what} '{value}', expected one of {', '.join(allowed)}")


@dataclass
class RunManifest:
    """Reproducibility record written next to every run's artifacts."""

    command: str
    config: Dict[str, Any]
    seed: Optional[int] = None
    version: str = __version__
    started_at: str = field(default_factory=lambda: timezone.now().isoformat())
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    status: str = "running"
    exit_code: int = 0
    error: Optional[str] = None
    warnings: List[str] = field(default_factory=list)
    notes: Dict[str, Any] = field(default_factory=dict)
    profile: Dict[str, Any] = field(default_factory=dict)

    def fail(self, exc: Exception) -> None:
        self.status = "error"
        self.exit_code = getattr(exc, "exit_code", 1)
        self.error = f"{type(exc).__name__}: {exc}"

    def close(self, output_dir) -> Path:
        """Collect warnings and timings, then write ``manifest.json``."""
        if self.status == "running":
            self.status = "error"
            self.exit_code = 1
        self.warnings = get_warnings()
        self.profile = get_profile_summary()
        path = write_json(asdict(self), Path(output_dir) / "manifest.json")
        if settings.DEBUG:
            logger.info(log_profile_table())
        return path


@dataclass(frozen=True, eq=False)
class AnalysisOutcome:
    report: InferenceReport
    ss_table: pd.DataFrame
    factorization: Optional[Factorization] = None
    outliers: Optional[OutlierReport] = None
    removed: Tuple[int, ...] = ()
    asca: Dict[str, EffectPca] = field(default_factory=dict)
    observation_ids: Optional[np.ndarray] = None
    boxcox: Dict[str, BoxCoxFit] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class AnalysisResult:
    outcome: AnalysisOutcome
    consistency: Optional[pd.DataFrame]
    manifest: RunManifest
    outputs: List[Path]


def _join_responses(reports: Sequence[InferenceReport]) -> InferenceReport:
    first = reports[0]
    return replace(
        first,
        response_names=tuple(name for r in reports for name in r.response_names),
        statistics=np.hstack([r.statistics for r in reports]),
        p_values=np.hstack([r.p_values for r in reports]),
        adjusted={},
        markers=None,
    )


def _join_terms(reports: Sequence[InferenceReport], labels: Sequence[str]) -> InferenceReport:
    first = reports[0]
    return replace(
        first,
        terms=tuple(labels),
        statistics=np.vstack([r.statistics for r in reports]),
        p_values=np.vstack([r.p_values for r in reports]),
        adjusted={},
        markers=None,
    )


def _rmd_report(matrix: ResponseMatrix, design: DesignSpec, cfg: PipelineConfig) -> InferenceReport:
    """Per-response tests on observed rows only."""
    reports = []
    for j, name in enumerate(matrix.response_names):
        values, sub_design, _ = rmd_split(matrix.values[:, j], design, matrix.missing_mask[:, j])
        column = ResponseMatrix.from_array(values, [name])
        if cfg.test == PARAMETRIC:
            reports.append(parametric_anova(fit(build_coding_matrix(sub_design), column)))
        else:
            reports.append(permutation_test(column, sub_design, cfg.test_config()))
    return _join_responses(reports)


def _one_way_design(design: DesignSpec, rows: np.ndarray, factor_index: int) -> DesignSpec:
    factor = design.factors[factor_index]
    return DesignSpec((factor,), design.assignments[rows][:, [factor_index]], ((0,),))


def _stratified_report(
    matrix: ResponseMatrix,
    completed: Optional[ResponseMatrix],
    design: DesignSpec,
    cfg: PipelineConfig,
) -> InferenceReport:
    """One-way tests of ``group`` repeated within each level of ``stratify_by``."""
    group_index = design.factor_index(cfg.group)
    stratum_index = design.factor_index(cfg.stratify_by)
    if group_index == stratum_index:
        raise InvalidConfig("the stratifying factor must differ from the grouping factor")
    stratum = design.factors[stratum_index]

    reports, labels = [], []
    for level in range(1, stratum.n_levels + 1):
        rows = np.flatnonzero(design.assignments[:, stratum_index] == level)
        sub_design = _one_way_design(design, rows, group_index)
        if completed is None:
            report = _rmd_report(matrix.subset_rows(rows), sub_design, cfg)
        elif cfg.missing == PCMR:
            report = pcmr_permutation_test(matrix.subset_rows(rows), sub_design, cfg.test_config())
        elif cfg.test == PARAMETRIC:
            sub = completed.subset_rows(rows)
            report = parametric_anova(fit(build_coding_matrix(sub_design), sub))
        else:
            report = permutation_test(completed.subset_rows(rows), sub_design, cfg.test_config())
        reports.append(report)
        labels.append(f"{cfg.group}@{stratum.label(level)}")
    return _join_terms(reports, labels)


def _complete(matrix: ResponseMatrix, design: DesignSpec, method: str) -> Optional[ResponseMatrix]:
    if matrix.is_complete:
        return matrix
    if method == RMD:
        return None
    if method == UMR:
        return umr(matrix).as_response()
    if method == TSR:
        return tsr(matrix).as_response()
    # cmr, and the observed-statistic completion of pcmr
    return cmr(matrix, design).as_response()


def ss_frame(
    ss: Dict[str, np.ndarray],
    design: DesignSpec,
    response_names: Sequence[str],
    with_dof: bool = True,
) -> pd.DataFrame:
    """Rows per term, Residuals and Total; aggregate SS and one column per response."""
    labels = [design.term_label(t) for t in design.terms]
    keys = labels + [RESIDUAL, TOTAL]
    sources = labels + ["Residuals", "Total"]
    if with_dof:
        dofs = dof_table(design, allow_saturated=True)
        df = [dofs.term_dofs[t] for t in design.terms] + [dofs.residual, dofs.total]
    else:
        df = [np.nan] * len(keys)
    frame = pd.DataFrame({"source": sources, "df": df, "ss": [float(np.sum(ss[k])) for k in keys]})
    for j, name in enumerate(response_names):
        frame[name] = [float(ss[k][j]) for k in keys]
    return frame


def _analyze_once(
    X: ResponseMatrix,
    design: DesignSpec,
    cfg: PipelineConfig,
    ids: np.ndarray,
    screen: bool = True,
) -> AnalysisOutcome:
    with profile_stage("transform", {"method": cfg.transform}):
        transformed = apply_transform(X, cfg.transform, shift=cfg.boxcox_shift)
        matrix = transformed.matrix

    with profile_stage("impute", {"method": cfg.missing, "missing": matrix.n_missing}):
        completed = _complete(matrix, design, cfg.missing)

    factorization = None
    with profile_stage("factorize"):
        if completed is not None:
            factorization = fit(build_coding_matrix(design), completed)
            table = ss_frame(factorization.ss, design, completed.response_names)
        else:
            table = ss_frame(available_ss(matrix, design), design, matrix.response_names, with_dof=False)

    with profile_stage("inference", {"test": cfg.test}):
        if cfg.test == TRADITIONAL:
            report = traditional_test(
                matrix if completed is None else completed,
                design,
                cfg.group,
                transform_active=cfg.transform != NONE,
                alpha=cfg.alpha,
                welch=cfg.welch,
                stratify_by=cfg.stratify_by,
            )
        elif cfg.stratify_by:
            report = _stratified_report(matrix, completed, design, cfg)
        elif completed is None:
            report = _rmd_report(matrix, design, cfg)
        elif cfg.test == PARAMETRIC:
            report = parametric_anova(factorization)
        elif cfg.missing == PCMR:
            report = pcmr_permutation_test(matrix, design, cfg.test_config())
        else:
            report = permutation_test(completed, design, cfg.test_config())
        report = report.with_correction(cfg.correction).with_metadata(
            missing=cfg.missing, transform=cfg.transform
        )

    outliers = None
    if screen and factorization is not None:
        with profile_stage("outliers"):
            try:
                outliers = residual_outliers(
                    factorization, cfg.outlier_alpha, cfg.n_components, observation_ids=ids
                )
            except NumericalError as exc:
                if cfg.remove_outliers:
                    raise
                record_warning(f"residual outlier screen skipped: {exc}", logger)
    elif screen:
        record_warning("residual outlier screen needs a complete matrix; skipped under rmd", logger)

    asca = {}
    if cfg.asca and factorization is not None:
        with profile_stage("asca"):
            asca = {label: effect_pca(factorization, label) for label in factorization.term_labels}

    return AnalysisOutcome(report, table, factorization, outliers, (), asca, ids, transformed.boxcox)


def analyze_matrix(
    X: ResponseMatrix,
    design: DesignSpec,
    cfg: PipelineConfig,
    observation_ids: Optional[np.ndarray] = None,
) -> AnalysisOutcome:
    """transform → impute → factorize → test → correct → outlier screen.

    With ``remove_outliers`` flagged rows and their design rows are dropped
    and the whole analysis is refitted once.
    """
    ids = np.arange(1, X.n_obs + 1) if observation_ids is None else np.asarray(observation_ids)
    outcome = _analyze_once(X, design, cfg, ids)
    screen = outcome.outliers
    if not cfg.remove_outliers or screen is None or screen.flagged.size == 0:
        return outcome

    keep = np.setdiff1d(np.arange(X.n_obs), screen.flagged)
    removed = tuple(int(i) for i in ids[screen.flagged])
    record_warning(f"removed outlying observations {list(removed)} and refitted", logger)
    refit = _analyze_once(X.subset_rows(keep), design.subset(keep), cfg, ids[keep], screen=False)
    return replace(refit, outliers=screen, removed=removed)


def pvalue_frame(report: InferenceReport, cfg: PipelineConfig) -> pd.DataFrame:
    frame = report.to_frame(cfg.alpha, cfg.correction)
    frame.insert(5, "p_display", [format_p(p, report.p_floor) for p in frame["p_raw"]])
    frame["correction"] = cfg.correction
    return frame


def consistency_frame(raw: InferenceReport, rank: InferenceReport, cfg: PipelineConfig) -> pd.DataFrame:
    """Per (response, term) agreement between the raw-data and rank-transformed pipelines."""
    left = pvalue_frame(raw, cfg)[["response", "term", "p_adjusted", "significant"]]
    right = pvalue_frame(rank, cfg)[["response", "term", "p_adjusted", "significant"]]
    merged = left.merge(right, on=["response", "term"], suffixes=("_raw", "_rank"))
    merged["verdict"] = np.where(merged["significant_raw"] == merged["significant_rank"], "agree", "disagree")
    return merged


def dual_pipeline(
    X: ResponseMatrix,
    design: DesignSpec,
    cfg: PipelineConfig,
    ids: Optional[np.ndarray] = None,
) -> pd.DataFrame:
    """Raw data with outlier removal against rank-transformed data."""
    raw_cfg = replace(cfg, transform=NONE, remove_outliers=cfg.missing != RMD, asca=False, dual_pipeline=False)
    rank_cfg = replace(cfg, transform=RANK, remove_outliers=False, asca=False, dual_pipeline=False)
    raw = analyze_matrix(X, design, raw_cfg, ids)
    rank = analyze_matrix(X, design, rank_cfg, ids)
    frame = consistency_frame(raw.report, rank.report, cfg)
    disagreements = int((frame["verdict"] == "disagree").sum())
    if disagreements:
        logger.info(f"Raw and rank pipelines disagree on {disagreements} response/term pairs")
    return frame


def _safe_name(label: str) -> str:
    return label.replace("*", "x").replace("@", "_at_").replace("/", "_")


def _write_analysis(out: Path, outcome: AnalysisOutcome, consistency, cfg: PipelineConfig) -> List[Path]:
    written = [
        write_csv(pvalue_frame(outcome.report, cfg), out / "pvalues.csv"),
        write_csv(outcome.ss_table, out / "ss_table.csv"),
    ]
    if outcome.outliers is not None:
        written.append(write_csv(outcome.outliers.to_frame(), out / "outliers.csv"))
        if cfg.plots:
            written.append(plots.outlier_scatter(outcome.outliers, out / "outliers.svg"))
    for label, pca in outcome.asca.items():
        name = _safe_name(label)
        written.append(write_csv(pca.scores_frame(outcome.observation_ids), out / f"asca_{name}.csv"))
        written.append(write_csv(pca.loadings_frame(), out / f"asca_{name}_loadings.csv"))
    if consistency is not None:
        written.append(write_csv(consistency, out / "consistency.csv"))
    return written


def _load_inputs(data_path, design_path, formula, manifest: RunManifest) -> Tuple[ResponseMatrix, DesignSpec]:
    with profile_stage("read_inputs"):
        X = read_data_csv(data_path)
        design = read_design_csv(design_path, formula)
        check_alignment(data_path, X.n_obs, design_path, design.n_obs)
        manifest.inputs = {str(data_path): file_checksum(data_path), str(design_path): file_checksum(design_path)}
    return X, design


# Main entry: one analysis run with manifest
def run_analysis(cfg: PipelineConfig) -> AnalysisResult:
    """Run the full analysis and write its artifacts into ``cfg.output_dir``."""
    clear_profile()
    start_wall_clock()
    out = Path(cfg.output_dir)
    manifest = RunManifest("analyze", cfg.as_dict(), seed=cfg.seed)
    logger.info(f"Analysis of {cfg.data_path} against {cfg.design_path} into {out}")

    try:
        cfg.validate()
        X, design = _load_inputs(cfg.data_path, cfg.design_path, cfg.formula, manifest)
        ids = np.arange(1, X.n_obs + 1)

        outcome = analyze_matrix(X, design, cfg, ids)
        consistency = None
        if cfg.dual_pipeline:
            with profile_stage("dual_pipeline"):
                consistency = dual_pipeline(X, design, cfg, ids)

        with profile_stage("write_outputs"):
            outputs = _write_analysis(out, outcome, consistency, cfg)
        manifest.outputs = [p.name for p in outputs]
        manifest.notes = {
            "n_observations": X.n_obs,
            "n_responses": X.n_responses,
            "n_missing": X.n_missing,
            "removed_observations": list(outcome.removed),
            "boxcox_lambda": {name: fit.lmbda for name, fit in outcome.boxcox.items()},
        }
        manifest.status = "ok"
        return AnalysisResult(outcome, consistency, manifest, outputs)
    except FactorLabError as exc:
        manifest.fail(exc)
        raise
    finally:
        manifest.close(out)


@dataclass(frozen=True, eq=False)
class ValidationResult:
    counts: pd.DataFrame
    infeasible: List[Tuple[str, str]]
    normality: pd.DataFrame

    @property
    def cmr_feasible(self) -> bool:
        return not self.infeasible


def validate_inputs(X: ResponseMatrix, design: DesignSpec, alpha: float = config.ALPHA) -> ValidationResult:
    """Observed counts per cell and response, CMR feasibility and a normality screen."""
    cell_ids, combos = design.cells()
    labels = [design.cell_label(combo) for combo in combos]
    observed = ~X.missing_mask
    counts = np.vstack([observed[cell_ids == c].sum(axis=0) for c in range(len(combos))])
    count_frame = pd.DataFrame(counts, columns=list(X.response_names))
    count_frame.insert(0, "cell", labels)

    infeasible = [
        (labels[c], X.response_names[j]) for c, j in zip(*np.nonzero(counts == 0))
    ]
    for cell, response in infeasible:
        logger.warning(f"CMR infeasible: no observed '{response}' in cell ({cell})")

    rows = []
    for j, name in enumerate(X.response_names):
        keep = observed[:, j]
        values = X.values[keep, j]
        cells = cell_ids[keep]
        cell_means = np.bincount(cells, weights=values) / np.maximum(np.bincount(cells), 1)
        residuals = values - cell_means[cells]
        statistic, p = np.nan, np.nan
        if residuals.size >= config.NORMALITY_MIN_OBS and np.ptp(residuals) > 0:
            statistic, p = normality_test(residuals)
        flagged = bool(p < alpha) if np.isfinite(p) else False
        suggestion = ""
        if flagged:
            suggestion = "rank or boxcox" if np.all(values > 0) else "rank"
        rows.append(
            {
                "response": name,
                "n_observed": int(keep.sum()),
                "n_missing": int((~keep).sum()),
                "ad_statistic": statistic,
                "p_normal": p,
                "non_normal": flagged,
                "suggested_transform": suggestion,
            }
        )
    return ValidationResult(count_frame, infeasible, pd.DataFrame(rows))


def run_validation(
    data_path,
    design_path,
    formula: Optional[str] = None,
    output_dir=None,
    alpha: float = config.ALPHA,
) -> ValidationResult:
    """Preflight report for a data/design pair, written to ``output_dir``
    (default $FACTORLAB_OUTPUT_DIR/validate) with its manifest."""
    clear_profile()
    start_wall_clock()
    out = Path(output_dir) if output_dir is not None else settings.FACTORLAB_OUTPUT_DIR / "validate"
    manifest = RunManifest(
        "validate", {"data_path": str(data_path), "design_path": str(design_path), "formula": formula, "alpha": alpha}
    )
    try:
        X, design = _load_inputs(data_path, design_path, formula, manifest)
        with profile_stage("screen"):
            result = validate_inputs(X, design, alpha)
        manifest.outputs = [
            write_csv(result.counts, out / "cell_counts.csv").name,
            write_csv(result.normality, out / "normality.csv").name,
        ]
        manifest.notes = {"cmr_feasible": result.cmr_feasible, "infeasible": result.infeasible}
        manifest.status = "ok"
        return result
    except FactorLabError as exc:
        manifest.fail(exc)
        raise
    finally:
        manifest.close(out)


@dataclass(frozen=True, eq=False)
class SimulationResult:
    frames: Dict[str, pd.DataFrame]
    checks: List[sim.CheckResult]
    outputs: List[Path]
    warnings: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _simulate(kind: str, cfg: sim.SimConfig, params: Dict[str, Any], out: Path, render: bool):
    if kind == "table1":
        table = sim.table1_experiment(cfg, params["n_sims"], params["missing_fraction"])
        outputs = [write_csv(table, out / "table1.csv", index=True)]
        return {"table1": table}, sim.check_table1(table, params["missing_fraction"]), outputs

    if kind == "fig1":
        frame = sim.fig1_experiment(
            cfg, params["missing_grid"], params["n_replicates"], params["n_permutations"], params["models"]
        )
        frames, outputs = {}, []
        for model, rows in frame.groupby("model", sort=False):
            table = rows.drop(columns="model").rename(columns={"missing": "m", "sd_err": "sd"})
            frames[f"fig1_{model}"] = table
            outputs.append(write_csv(table, out / f"fig1_{model}.csv"))
            if render:
                outputs.append(
                    plots.line_plot(table, "m", "mean_err", "method", out / f"fig1_{model}.svg",
                                    title=f"Imputation error ({model} model)", band="sd", ylabel="Err(m)")
                )
        return frames, sim.check_fig1(frame), outputs

    if kind == "power":
        curves = sim.power_curves(
            cfg,
            params["effect_grid"],
            params["transforms"],
            params["distributions"],
            params["n_replicates"],
            params["n_permutations"],
            params["alpha"],
        )
        frame = sim.power_frame(curves)
        frames, outputs = {}, []
        for distribution, rows in frame.groupby("distribution", sort=False):
            table = rows.drop(columns="distribution")
            frames[f"fig2_{distribution}"] = table
            outputs.append(write_csv(table, out / f"fig2_{distribution}.csv"))
            if render:
                outputs.append(
                    plots.line_plot(table, "delta", "power", "transform", out / f"fig2_{distribution}.svg",
                                    title=f"Power ({distribution} residuals)")
                )
        return frames, sim.check_power(curves), outputs

    raise InvalidConfig(f"unknown simulation '{kind}', expected table1, fig1 or power")


def run_simulation(
    kind: str,
    cfg: sim.SimConfig,
    params: Dict[str, Any],
    output_dir,
    render: bool = False,
) -> SimulationResult:
    """One simulation study with its CSV (and optional SVG) artifacts."""
    clear_profile()
    start_wall_clock()
    out = Path(output_dir)
    manifest = RunManifest(f"simulate {kind}", {"sim": asdict(cfg), "params": params}, seed=cfg.seed)
    try:
        with profile_stage(f"simulate_{kind}"):
            frames, checks, outputs = _simulate(kind, cfg, params, out, render)
        manifest.outputs = [p.name for p in outputs]
        manifest.notes = {"checks": [asdict(c) for c in checks]}
        manifest.status = "ok"
        return SimulationResult(frames, checks, outputs, get_warnings())
    except FactorLabError as exc:
        manifest.fail(exc)
        raise
    finally:
        manifest.close(out)
