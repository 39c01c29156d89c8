"""
Tests for the GLM factorization.

Tests cover:
1. Response matrix validation
2. Sums-of-squares additivity and residual orthogonality on random balanced designs
3. F-ratio edge cases
4. Available-data factorization
5. Effect PCA (ASCA)
"""

import numpy as np
from django.test import SimpleTestCase

from anova.stats.design import build_coding_matrix
from anova.stats.exceptions import EmptyColumn, InvalidDesign, MissingDataPresent
from anova.stats.glm import (
    RESIDUAL,
    TOTAL,
    GlmFitter,
    ResponseMatrix,
    available_ss,
    effect_pca,
    f_ratio,
    fit,
    ss_summary,
)
from anova.stats.profiling import clear_profile, get_warnings
from anova.tests.helpers import balanced_design, one_way_example, random_matrix


class ResponseMatrixTests(SimpleTestCase):
    def test_default_names_and_mask(self):
        matrix = ResponseMatrix.from_array([[1.0, np.nan], [2.0, 3.0]])
        self.assertEqual(matrix.response_names, ("y1", "y2"))
        self.assertEqual(matrix.n_missing, 1)
        self.assertFalse(matrix.is_complete)

    def test_fully_missing_column_rejected(self):
        with self.assertRaises(EmptyColumn):
            ResponseMatrix.from_array([[1.0, np.nan], [2.0, np.nan]])

    def test_infinite_value_rejected(self):
        with self.assertRaises(InvalidDesign):
            ResponseMatrix.from_array([[1.0], [np.inf]])

    def test_complete_values_refuses_missing(self):
        with self.assertRaises(MissingDataPresent):
            ResponseMatrix.from_array([[1.0], [np.nan], [2.0]]).complete_values()

    def test_values_are_read_only(self):
        matrix = ResponseMatrix.from_array([[1.0], [2.0]])
        with self.assertRaises(ValueError):
            matrix.values[0, 0] = 5.0


class FactorizationTests(SimpleTestCase):
    def test_one_way_sums_of_squares(self):
        design, matrix = one_way_example()
        f = fit(build_coding_matrix(design), matrix)
        self.assertAlmostEqual(float(f.ss["A"][0]), 84.0, places=10)
        self.assertAlmostEqual(float(f.ss[RESIDUAL][0]), 68.0, places=10)
        self.assertAlmostEqual(float(f.ss[TOTAL][0]), 152.0, places=10)
        self.assertAlmostEqual(float(f.mu[0]), 8.0, places=12)

    def test_additivity_and_orthogonality_on_random_designs(self):
        """SS_total = Σ SS_term + SS_residual and CᵀE = 0 for balanced designs."""
        generator = np.random.default_rng(11)
        for trial in range(100):
            n_factors = int(generator.integers(2, 5))
            levels = tuple(int(v) for v in generator.integers(2, 5, size=n_factors))
            replicates = int(generator.integers(2, 6))
            formula = "+".join(chr(ord("A") + i) for i in range(n_factors)) + "+A*B"
            design = balanced_design(levels, replicates, formula)
            X = random_matrix(design.n_obs, int(generator.integers(1, 21)), seed=trial)
            coding = build_coding_matrix(design)
            f = fit(coding, X)

            parts = f.ss[RESIDUAL] + sum(f.ss[label] for label in f.term_labels)
            np.testing.assert_allclose(parts, f.ss[TOTAL], rtol=1e-8)
            scale = np.abs(X.values).max() * design.n_obs
            np.testing.assert_allclose(coding.matrix.T @ f.residuals, 0.0, atol=1e-8 * scale)
            np.testing.assert_allclose(f.reconstruct(), X.values, atol=1e-10)

    def test_constant_response_gives_exact_zeros(self):
        design = balanced_design((2, 3), replicates=2)
        f = fit(build_coding_matrix(design), ResponseMatrix.from_array(np.full((12, 1), 7.5)))
        for key in ["A", "B", RESIDUAL, TOTAL]:
            self.assertEqual(float(f.ss[key][0]), 0.0)

    def test_saturated_fit_warns(self):
        clear_profile()
        design = balanced_design((2, 2), replicates=1, formula="A+B+A*B")
        fit(build_coding_matrix(design), random_matrix(4, 2))
        self.assertTrue(any("saturated" in w for w in get_warnings()))

    def test_row_mismatch_rejected(self):
        design = balanced_design((2, 2), replicates=2)
        with self.assertRaises(InvalidDesign):
            fit(build_coding_matrix(design), random_matrix(7, 1))

    def test_summary_frame(self):
        design, matrix = one_way_example()
        summary = ss_summary(fit(build_coding_matrix(design), matrix))
        self.assertEqual(list(summary.index), ["A", "Residuals", "Total"])
        self.assertAlmostEqual(summary.loc["Total", "ss"], 152.0, places=10)


class FRatioTests(SimpleTestCase):
    def test_regular_ratio(self):
        self.assertAlmostEqual(float(f_ratio(84.0, 2, 68.0, 15)), 630.0 / 68.0, places=12)

    def test_zero_term_is_zero(self):
        self.assertEqual(float(f_ratio(0.0, 2, 0.0, 15)), 0.0)

    def test_zero_residual_is_infinite(self):
        self.assertTrue(np.isposinf(f_ratio(3.0, 2, 0.0, 15)))

    def test_fitter_matches_fit(self):
        design = balanced_design((3, 2), replicates=3, formula="A+B+A*B")
        X = random_matrix(design.n_obs, 4, seed=5)
        coding = build_coding_matrix(design)
        f = fit(coding, X)
        term_ss, residual_ss = GlmFitter(coding).term_ss(X.values)
        np.testing.assert_allclose(term_ss, np.vstack([f.ss[label] for label in f.term_labels]))
        np.testing.assert_allclose(residual_ss, f.ss[RESIDUAL])


class AvailableDataTests(SimpleTestCase):
    def test_complete_data_matches_full_fit(self):
        design = balanced_design((3, 2), replicates=3)
        X = random_matrix(design.n_obs, 3, seed=8)
        full = fit(build_coding_matrix(design), X)
        available = available_ss(X, design)
        for key in ["A", "B", RESIDUAL, TOTAL]:
            np.testing.assert_allclose(available[key], full.ss[key], rtol=1e-10)

    def test_missing_entries_only_touch_their_column(self):
        design = balanced_design((3, 2), replicates=3)
        X = random_matrix(design.n_obs, 2, seed=9)
        mask = np.zeros(X.values.shape, dtype=bool)
        mask[0, 1] = True
        available = available_ss(ResponseMatrix(X.values, mask, X.response_names), design)
        full = fit(build_coding_matrix(design), X)
        self.assertAlmostEqual(float(available[TOTAL][0]), float(full.ss[TOTAL][0]), places=10)
        self.assertLess(float(available[TOTAL][1]), float(full.ss[TOTAL][1]) + 1e-12)


class EffectPcaTests(SimpleTestCase):
    def setUp(self):
        self.design = balanced_design((3, 2), replicates=4)
        self.f = fit(build_coding_matrix(self.design), random_matrix(self.design.n_obs, 5, seed=3))

    def test_components_capped_by_term_dof(self):
        pca = effect_pca(self.f, "B", n_components=3)
        self.assertEqual(pca.loadings.shape, (5, 1))
        self.assertAlmostEqual(float(pca.explained[0]), 1.0, places=10)

    def test_scores_project_the_effect(self):
        pca = effect_pca(self.f, "A")
        effect = self.f.effects[(0,)]
        np.testing.assert_allclose(pca.scores, effect @ pca.loadings)
        np.testing.assert_allclose(pca.residual_scores, (effect + self.f.residuals) @ pca.loadings)
        np.testing.assert_allclose(pca.loadings.T @ pca.loadings, np.eye(2), atol=1e-10)

    def test_frames(self):
        pca = effect_pca(self.f, "A")
        scores = pca.scores_frame()
        self.assertEqual(list(scores.columns), ["observation_id", "PC1", "PC2", "PC1_with_residuals", "PC2_with_residuals"])
        self.assertEqual(scores["observation_id"].iloc[0], 1)
        self.assertEqual(list(pca.loadings_frame()["response"]), ["y1", "y2", "y3", "y4", "y5"])

    def test_unknown_term(self):
        with self.assertRaises(InvalidDesign):
            effect_pca(self.f, "C")
