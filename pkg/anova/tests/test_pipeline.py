"""
Tests for the analysis, validation and simulation runs.

Tests cover:
1. Option validation
2. End-to-end analysis against direct library calls
3. Missing-data routes (rmd, umr, cmr, tsr, pcmr)
4. Stratified tests, outlier removal, dual pipeline and ASCA outputs
5. Manifest on success and failure
6. Input validation (cell counts, normality screen)
7. Simulation runs
"""

import json
from unittest import mock

import numpy as np
from django.test import SimpleTestCase

from anova.io import read_frame
from anova.pipeline import (
    PipelineConfig,
    analyze_matrix,
    dual_pipeline,
    run_analysis,
    run_simulation,
    run_validation,
    ss_frame,
    validate_inputs,
)
from anova.stats.config import config
from anova.stats.design import build_coding_matrix
from anova.stats.exceptions import DataFormatError, InvalidConfig
from anova.stats.glm import TOTAL, ResponseMatrix, fit
from anova.stats.infer import parametric_anova
from anova.stats.profiling import clear_profile, get_warnings
from anova.stats.sim import SimConfig
from anova.tests.helpers import TempDirMixin, balanced_design, random_matrix


def _effect_matrix(design, n_responses=4, seed=0, shift=3.0):
    values = np.array(random_matrix(design.n_obs, n_responses, seed=seed).values)
    values[:, :2] += shift * (design.assignments[:, [0]] - 1)
    return ResponseMatrix.from_array(values)


def _with_gaps(matrix, gaps):
    mask = np.zeros(matrix.values.shape, dtype=bool)
    for row, col in gaps:
        mask[row, col] = True
    return ResponseMatrix.from_array(np.where(mask, np.nan, matrix.values), matrix.response_names, mask)


def _config(**overrides):
    options = dict(data_path="unused.csv", design_path="unused.csv", n_permutations=99, n_jobs=1)
    options.update(overrides)
    return PipelineConfig(**options)


class PipelineConfigTests(SimpleTestCase):
    def test_defaults_validate(self):
        _config().validate()

    def test_incompatible_combinations(self):
        cases = [
            dict(missing="pcmr", test="parametric"),
            dict(missing="rmd", asca=True),
            dict(missing="rmd", remove_outliers=True),
            dict(test="traditional"),
            dict(stratify_by="B"),
            dict(outlier_alpha=0.0),
            dict(transform="logit"),
            dict(correction="holm"),
            dict(n_permutations=50),
        ]
        for overrides in cases:
            with self.subTest(**overrides):
                with self.assertRaises(InvalidConfig):
                    _config(**overrides).validate()


class RunAnalysisTests(TempDirMixin, SimpleTestCase):
    def setUp(self):
        super().setUp()
        self.design = balanced_design((2, 3), replicates=4)
        self.matrix = _effect_matrix(self.design)
        self.data_path, self.design_path = self.write_inputs(self.matrix, self.design)

    def _run(self, **overrides):
        options = dict(data_path=self.data_path, design_path=self.design_path, output_dir=self.tmp / "out")
        return run_analysis(_config(**{**options, **overrides}))

    def test_parametric_matches_library_calls(self):
        """The run reproduces parametric_anova + BH on the same inputs."""
        result = self._run(missing="cmr", test="parametric")
        expected = parametric_anova(fit(build_coding_matrix(self.design), self.matrix)).with_correction("bh")
        np.testing.assert_allclose(result.outcome.report.p_values, expected.p_values, rtol=1e-12)
        np.testing.assert_allclose(result.outcome.report.adjusted["bh"], expected.adjusted["bh"], rtol=1e-12)

        pvalues = read_frame(self.tmp / "out" / "pvalues.csv")
        self.assertEqual(len(pvalues), 2 * 4)
        self.assertIn("p_display", pvalues.columns)
        self.assertTrue(all(pvalues["correction"] == "bh"))

    def test_writes_artifacts_and_manifest(self):
        result = self._run()
        names = {p.name for p in result.outputs}
        self.assertTrue({"pvalues.csv", "ss_table.csv", "outliers.csv"} <= names)
        manifest = json.loads((self.tmp / "out" / "manifest.json").read_text())
        self.assertEqual(manifest["status"], "ok")
        self.assertEqual(manifest["command"], "analyze")
        self.assertEqual(len(manifest["inputs"]), 2)
        self.assertIn("inference", [s["name"] for s in manifest["profile"]["stages"]])

    def test_permutation_p_values_are_floored(self):
        result = self._run(missing="cmr")
        self.assertTrue(np.all(result.outcome.report.p_values >= 0.01))
        self.assertLess(result.outcome.report.p_value("A", "y1"), 0.05)

    def test_manifest_written_on_failure(self):
        with self.assertRaises(DataFormatError):
            self._run(data_path=self.tmp / "absent.csv")
        manifest = json.loads((self.tmp / "out" / "manifest.json").read_text())
        self.assertEqual(manifest["status"], "error")
        self.assertEqual(manifest["exit_code"], 2)
        self.assertIn("DataFormatError", manifest["error"])

    def test_asca_outputs(self):
        result = self._run(missing="cmr", asca=True)
        names = {p.name for p in result.outputs}
        self.assertTrue({"asca_A.csv", "asca_A_loadings.csv", "asca_B.csv", "asca_B_loadings.csv"} <= names)

    def test_boxcox_lambdas_in_manifest(self):
        shifted = ResponseMatrix.from_array(np.exp(self.matrix.values / 3.0))
        data_path, design_path = self.write_inputs(shifted, self.design, stem="positive")
        result = self._run(data_path=data_path, design_path=design_path, transform="boxcox", missing="cmr")
        self.assertEqual(set(result.manifest.notes["boxcox_lambda"]), {"y1", "y2", "y3", "y4"})


class MissingDataRouteTests(SimpleTestCase):
    def setUp(self):
        self.design = balanced_design((2, 3), replicates=4)
        self.matrix = _with_gaps(_effect_matrix(self.design), [(0, 0), (5, 1), (13, 3)])

    def test_every_route_reports_every_pair(self):
        for missing, test in [("umr", "permutation"), ("cmr", "parametric"), ("tsr", "permutation"), ("pcmr", "permutation")]:
            with self.subTest(missing=missing):
                outcome = analyze_matrix(self.matrix, self.design, _config(missing=missing, test=test))
                self.assertEqual(outcome.report.p_values.shape, (2, 4))
                self.assertEqual(outcome.report.metadata["missing"], missing)
                self.assertIsNotNone(outcome.factorization)

    def test_rmd_skips_the_outlier_screen(self):
        clear_profile()
        outcome = analyze_matrix(self.matrix, self.design, _config(missing="rmd", test="parametric"))
        self.assertIsNone(outcome.outliers)
        self.assertIsNone(outcome.factorization)
        self.assertEqual(outcome.report.p_values.shape, (2, 4))
        self.assertTrue(np.isnan(outcome.ss_table["df"]).all())
        self.assertTrue(any("skipped under rmd" in w for w in get_warnings()))

    def test_ss_table_layout(self):
        outcome = analyze_matrix(self.matrix, self.design, _config(missing="cmr", test="parametric"))
        table = outcome.ss_table
        self.assertEqual(list(table["source"]), ["A", "B", "Residuals", "Total"])
        self.assertEqual(list(table["df"]), [1, 2, 20, 23])
        np.testing.assert_allclose(table["ss"], table[["y1", "y2", "y3", "y4"]].sum(axis=1))


class AnalysisVariantTests(SimpleTestCase):
    def setUp(self):
        self.design = balanced_design((2, 3), replicates=6)
        self.matrix = _effect_matrix(self.design, n_responses=5, seed=3)

    def test_stratified_labels(self):
        cfg = _config(missing="cmr", test="parametric", group="A", stratify_by="B")
        report = analyze_matrix(self.matrix, self.design, cfg).report
        self.assertEqual(report.terms, ("A@1", "A@2", "A@3"))
        self.assertEqual(report.p_values.shape, (3, 5))

    def test_same_factor_cannot_stratify_itself(self):
        with self.assertRaises(InvalidConfig):
            analyze_matrix(self.matrix, self.design, _config(missing="cmr", group="A", stratify_by="A"))

    def test_remove_outliers_refits_without_flagged_rows(self):
        values = np.array(self.matrix.values)
        values[7, 4] += 25.0
        matrix = ResponseMatrix.from_array(values)
        outcome = analyze_matrix(matrix, self.design, _config(missing="cmr", test="parametric", remove_outliers=True))
        self.assertIn(8, outcome.removed)
        self.assertEqual(outcome.factorization.residuals.shape[0], 36 - len(outcome.removed))
        self.assertNotIn(8, outcome.observation_ids)

    def test_dual_pipeline_verdicts(self):
        frame = dual_pipeline(self.matrix, self.design, _config(missing="cmr", test="parametric"))
        self.assertEqual(len(frame), 2 * 5)
        self.assertTrue(set(frame["verdict"]) <= {"agree", "disagree"})
        self.assertIn("p_adjusted_rank", frame.columns)

    def test_dual_pipeline_disagrees_on_planted_outlier(self):
        values = np.array(random_matrix(self.design.n_obs, 3, seed=3).values)
        values[:, 0] += 2.0 * (self.design.assignments[:, 0] == 2)
        # One extreme value in the lower group hides the shift from the raw test only
        values[4, 0] += 60.0
        matrix = ResponseMatrix.from_array(values)
        frame = dual_pipeline(matrix, self.design, _config(missing="rmd", test="parametric")).set_index(["response", "term"])
        row = frame.loc[("y1", "A")]
        self.assertEqual(row["verdict"], "disagree")
        self.assertFalse(row["significant_raw"])
        self.assertTrue(row["significant_rank"])

    def test_ss_frame_without_dof(self):
        f = fit(build_coding_matrix(self.design), self.matrix)
        frame = ss_frame(f.ss, self.design, self.matrix.response_names, with_dof=False)
        self.assertTrue(np.isnan(frame["df"]).all())
        self.assertAlmostEqual(frame["ss"].iloc[-1], float(f.ss[TOTAL].sum()), places=10)


class ValidationTests(TempDirMixin, SimpleTestCase):
    def test_infeasible_cell_is_named(self):
        design = balanced_design((2,), replicates=3)
        matrix = _with_gaps(random_matrix(6, 2, seed=1), [(0, 1), (1, 1), (2, 1)])
        result = validate_inputs(matrix, design)
        self.assertFalse(result.cmr_feasible)
        self.assertEqual(result.infeasible, [("A=1", "y2")])
        self.assertEqual(list(result.counts["y2"]), [0, 3])

    def test_non_normal_column_is_flagged(self):
        design = balanced_design((2,), replicates=40)
        generator = np.random.default_rng(5)
        values = np.column_stack([generator.standard_normal(80), generator.standard_exponential(80) ** 3])
        result = validate_inputs(ResponseMatrix.from_array(values, ["normal", "skewed"]), design)
        flags = result.normality.set_index("response")
        self.assertTrue(flags.loc["skewed", "non_normal"])
        self.assertEqual(flags.loc["skewed", "suggested_transform"], "rank or boxcox")

    def test_run_always_writes_reports_and_manifest(self):
        design = balanced_design((2, 2), replicates=3)
        data_path, design_path = self.write_inputs(random_matrix(12, 3), design)
        with self.settings(FACTORLAB_OUTPUT_DIR=self.tmp / "default"):
            run_validation(data_path, design_path)
        self.assertTrue((self.tmp / "default" / "validate" / "manifest.json").exists())
        run_validation(data_path, design_path, output_dir=self.tmp / "report")
        self.assertTrue((self.tmp / "report" / "cell_counts.csv").exists())
        self.assertTrue((self.tmp / "report" / "manifest.json").exists())


class SimulationRunTests(TempDirMixin, SimpleTestCase):
    def test_table1_run(self):
        cfg = SimConfig(n_responses=10, n_jobs=1)
        result = run_simulation("table1", cfg, {"n_sims": 2, "missing_fraction": 0.0}, self.tmp)
        self.assertTrue(result.passed)
        self.assertEqual([p.name for p in result.outputs], ["table1.csv"])
        manifest = json.loads((self.tmp / "manifest.json").read_text())
        self.assertEqual(manifest["command"], "simulate table1")

    def test_worker_warnings_do_not_depend_on_thread_count(self):
        params = {"n_sims": 4, "missing_fraction": 0.05}
        runs = {}
        with mock.patch.object(config, "TSR_MAX_ITER", 1):
            for n_jobs in (1, 2):
                out = self.tmp / f"threads{n_jobs}"
                run_simulation("table1", SimConfig(n_responses=20, n_jobs=n_jobs), params, out)
                runs[n_jobs] = json.loads((out / "manifest.json").read_text())
        self.assertEqual(runs[1]["warnings"], runs[2]["warnings"])
        self.assertEqual(sum("TSR did not converge" in w for w in runs[2]["warnings"]), 4)
        self.assertEqual(runs[1]["profile"]["counters"]["imputations"], runs[2]["profile"]["counters"]["imputations"])

    def test_unknown_study(self):
        with self.assertRaises(InvalidConfig):
            run_simulation("fig9", SimConfig(n_responses=2), {}, self.tmp)
