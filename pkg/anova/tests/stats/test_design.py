"""
Tests for designs, formulas, sum coding and degrees of freedom.
"""

import numpy as np
import pandas as pd
from django.test import SimpleTestCase

from anova.stats.design import (
    DesignSpec,
    FactorSpec,
    build_coding_matrix,
    dof_table,
    parse_formula,
    sum_code_factor,
)
from anova.stats.exceptions import InsufficientReplication, InvalidDesign, InvalidLevel, RankDeficient
from anova.tests.helpers import balanced_design


class FormulaTests(SimpleTestCase):
    names = ["A", "B", "C"]

    def test_main_effects_and_interaction(self):
        self.assertEqual(parse_formula("A+B+A*B", self.names), [(0,), (1,), (0, 1)])

    def test_whitespace_is_ignored(self):
        self.assertEqual(parse_formula(" A + C * A ", self.names), [(0,), (0, 2)])

    def test_unknown_factor_rejected(self):
        with self.assertRaises(InvalidDesign):
            parse_formula("A+D", self.names)

    def test_three_way_interaction_rejected(self):
        with self.assertRaises(InvalidDesign):
            parse_formula("A*B*C", self.names)

    def test_repeated_term_rejected(self):
        with self.assertRaises(InvalidDesign):
            parse_formula("A+B+B*A+A*B", self.names)

    def test_empty_formula_rejected(self):
        with self.assertRaises(InvalidDesign):
            parse_formula("  ", self.names)


class DesignSpecTests(SimpleTestCase):
    def test_level_outside_range(self):
        with self.assertRaises(InvalidLevel):
            DesignSpec((FactorSpec("A", 2),), np.array([[1], [3]]), ((0,),))

    def test_factor_needs_two_levels(self):
        with self.assertRaises(InvalidDesign):
            FactorSpec("A", 1)

    def test_interaction_needs_both_main_effects(self):
        with self.assertRaises(InvalidDesign):
            DesignSpec((FactorSpec("A", 2), FactorSpec("B", 2)), np.array([[1, 1], [2, 2]]), ((0,), (0, 1)))

    def test_from_frame_maps_labels_in_first_appearance_order(self):
        frame = pd.DataFrame({"group": ["case", "control", "case", "control"], "time": ["T2", "T1", "T1", "T2"]})
        design = DesignSpec.from_frame(frame, "group+time")
        self.assertEqual(design.factors[0].labels, ("case", "control"))
        self.assertEqual(design.factors[1].labels, ("T2", "T1"))
        np.testing.assert_array_equal(design.assignments, [[1, 1], [2, 2], [1, 2], [2, 1]])

    def test_from_frame_defaults_to_main_effects(self):
        frame = pd.DataFrame({"A": ["a", "b"], "B": ["x", "y"]})
        self.assertEqual(DesignSpec.from_frame(frame).terms, ((0,), (1,)))

    def test_cells_and_labels(self):
        design = balanced_design((2, 3), replicates=2)
        cell_ids, combos = design.cells()
        self.assertEqual(len(combos), 6)
        self.assertEqual(np.bincount(cell_ids).tolist(), [2] * 6)
        self.assertEqual(design.cell_label(combos[0]), "A=1, B=1")

    def test_subset_keeps_factors_and_terms(self):
        design = balanced_design((2, 2), replicates=3, formula="A+B+A*B")
        sub = design.subset(np.arange(6))
        self.assertEqual(sub.n_obs, 6)
        self.assertEqual(sub.terms, design.terms)


class CodingTests(SimpleTestCase):
    def test_sum_coding_last_level_is_minus_one(self):
        coded = sum_code_factor(FactorSpec("A", 3), np.array([1, 2, 3]))
        np.testing.assert_array_equal(coded, [[1, 0], [0, 1], [-1, -1]])

    def test_columns_sum_to_zero_in_balanced_design(self):
        coding = build_coding_matrix(balanced_design((3, 2), replicates=2, formula="A+B+A*B"))
        np.testing.assert_allclose(coding.matrix[:, 1:].sum(axis=0), 0.0)
        self.assertEqual(coding.matrix.shape, (12, 6))

    def test_term_blocks_follow_declared_order(self):
        design = balanced_design((3, 2), replicates=2, formula="A+B+A*B")
        coding = build_coding_matrix(design)
        self.assertEqual(coding.term_columns[(0,)], slice(1, 3))
        self.assertEqual(coding.term_columns[(1,)], slice(3, 4))
        self.assertEqual(coding.term_columns[(0, 1)], slice(4, 6))

    def test_interaction_block_is_product_of_parents(self):
        design = balanced_design((3, 2), replicates=1, formula="A+B+A*B")
        matrix = build_coding_matrix(design).matrix
        np.testing.assert_array_equal(matrix[:, 4], matrix[:, 1] * matrix[:, 3])
        np.testing.assert_array_equal(matrix[:, 5], matrix[:, 2] * matrix[:, 3])

    def test_without_drops_one_term(self):
        coding = build_coding_matrix(balanced_design((3, 2), replicates=2))
        reduced = coding.without((0,))
        self.assertEqual(reduced.matrix.shape, (12, 2))
        self.assertEqual(reduced.terms, [(1,)])

    def test_empty_interaction_cell_is_rank_deficient(self):
        design = balanced_design((2, 2), replicates=2, formula="A+B+A*B")
        keep = np.flatnonzero(~((design.assignments[:, 0] == 2) & (design.assignments[:, 1] == 2)))
        with self.assertRaises(RankDeficient):
            build_coding_matrix(design.subset(keep))


class DofTableTests(SimpleTestCase):
    def test_degrees_of_freedom(self):
        dofs = dof_table(balanced_design((4, 3), replicates=4, formula="A+B+A*B"))
        self.assertEqual(dofs.term_dofs, {(0,): 3, (1,): 2, (0, 1): 6})
        self.assertEqual(dofs.total, 47)
        self.assertEqual(dofs.residual, 36)
        self.assertEqual(dofs.model, 11)

    def test_saturated_model(self):
        design = balanced_design((2, 2), replicates=1, formula="A+B+A*B")
        with self.assertRaises(InsufficientReplication):
            dof_table(design)
        self.assertTrue(dof_table(design, allow_saturated=True).saturated)
