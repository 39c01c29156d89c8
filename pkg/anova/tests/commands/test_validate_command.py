"""
Tests for the validate management command.
"""

import json
from io import StringIO

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from anova.stats.glm import ResponseMatrix
from anova.tests.helpers import TempDirMixin, balanced_design, random_matrix


class ValidateCommandTests(TempDirMixin, SimpleTestCase):
    def setUp(self):
        super().setUp()
        self.design = balanced_design((2, 2), replicates=3)
        self.matrix = random_matrix(self.design.n_obs, 2, seed=4)

    def run_command(self, data_path, design_path, **options):
        stdout = StringIO()
        with self.settings(FACTORLAB_OUTPUT_DIR=self.tmp / "default"):
            call_command("validate", data=str(data_path), design=str(design_path), stdout=stdout, **options)
        return stdout.getvalue()

    def test_complete_data(self):
        output = self.run_command(*self.write_inputs(self.matrix, self.design))
        self.assertIn("=== OBSERVED VALUES PER CELL ===", output)
        self.assertIn("24 observed, 0 missing entries", output)
        self.assertIn("CMR feasible", output)

    def test_infeasible_cell_is_listed(self):
        mask = np.zeros(self.matrix.values.shape, dtype=bool)
        mask[:3, 1] = True
        gappy = ResponseMatrix.from_array(np.where(mask, np.nan, self.matrix.values), mask=mask)
        output = self.run_command(*self.write_inputs(gappy, self.design))
        self.assertIn("CMR infeasible for:", output)
        self.assertIn("  - (A=1, B=1) response 'y2'", output)

    def test_writes_reports_with_out(self):
        self.run_command(*self.write_inputs(self.matrix, self.design), out=str(self.tmp / "report"))
        self.assertTrue((self.tmp / "report" / "normality.csv").exists())

    def test_missing_file(self):
        with self.assertRaises(CommandError) as raised:
            self.run_command(self.tmp / "absent.csv", self.tmp / "absent_design.csv")
        self.assertEqual(raised.exception.returncode, 2)

    def test_default_output_dir_gets_reports_and_manifest(self):
        self.run_command(*self.write_inputs(self.matrix, self.design))
        report = self.tmp / "default" / "validate"
        self.assertTrue((report / "cell_counts.csv").exists())
        self.assertEqual(json.loads((report / "manifest.json").read_text())["status"], "ok")

    def test_failed_run_still_writes_manifest(self):
        with self.assertRaises(CommandError):
            self.run_command(self.tmp / "absent.csv", self.tmp / "absent_design.csv")
        manifest = json.loads((self.tmp / "default" / "validate" / "manifest.json").read_text())
        self.assertEqual(manifest["status"], "error")
        self.assertEqual(manifest["exit_code"], 2)
