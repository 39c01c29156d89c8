"""
Tests for CSV ingestion and report writing.

Tests cover:
1. Data CSV parsing, missing tokens and line-numbered errors
2. Design CSV parsing and row alignment
3. Number and p-value formatting
4. Atomic writes
"""

import json

import numpy as np
import pandas as pd
from django.test import SimpleTestCase

from anova.io import (
    atomic_write_text,
    check_alignment,
    file_checksum,
    format_number,
    format_p,
    read_data_csv,
    read_design_csv,
    read_frame,
    write_csv,
    write_json,
)
from anova.stats.exceptions import DataFormatError, InputError
from anova.tests.helpers import TempDirMixin


class ReadDataTests(TempDirMixin, SimpleTestCase):
    def _write(self, text, name="data.csv"):
        path = self.tmp / name
        path.write_text(text)
        return path

    def test_empty_and_na_are_missing(self):
        matrix = read_data_csv(self._write("g1,g2\n1.5,NA\n,2\n3,na\n"))
        self.assertEqual(matrix.response_names, ("g1", "g2"))
        np.testing.assert_array_equal(matrix.missing_mask, [[False, True], [True, False], [False, True]])
        self.assertEqual(matrix.values[0, 0], 1.5)

    def test_unparsable_value_names_line_and_column(self):
        path = self._write("g1,g2\n1,2\n3,abc\n")
        with self.assertRaises(DataFormatError) as raised:
            read_data_csv(path)
        self.assertIn("line 3", str(raised.exception))
        self.assertIn("'g2'", str(raised.exception))
        self.assertIn("'abc'", str(raised.exception))

    def test_non_finite_value(self):
        with self.assertRaises(DataFormatError) as raised:
            read_data_csv(self._write("g1\n1\ninf\n"))
        self.assertIn("non-finite", str(raised.exception))

    def test_fully_missing_column(self):
        with self.assertRaises(DataFormatError) as raised:
            read_data_csv(self._write("g1,g2\n1,NA\n2,\n"))
        self.assertIn("'g2'", str(raised.exception))

    def test_header_problems(self):
        with self.assertRaises(DataFormatError):
            read_data_csv(self._write("g1,g1\n1,2\n"))
        with self.assertRaises(DataFormatError):
            read_data_csv(self._write("g1\n"))

    def test_missing_file(self):
        with self.assertRaises(DataFormatError):
            read_data_csv(self.tmp / "absent.csv")

    def test_format_errors_are_input_errors(self):
        self.assertEqual(DataFormatError.exit_code, 2)
        self.assertTrue(issubclass(DataFormatError, InputError))


class ReadDesignTests(TempDirMixin, SimpleTestCase):
    def test_labels_in_first_appearance_order(self):
        path = self.tmp / "design.csv"
        path.write_text("group,time\ncase,T2\ncontrol,T1\ncase,T1\ncontrol,T2\n")
        design = read_design_csv(path, "group+time+group*time")
        self.assertEqual(design.factors[0].labels, ("case", "control"))
        self.assertEqual(design.factors[1].labels, ("T2", "T1"))
        np.testing.assert_array_equal(design.assignments[:, 0], [1, 2, 1, 2])
        self.assertEqual(len(design.terms), 3)

    def test_blank_label(self):
        path = self.tmp / "design.csv"
        path.write_text("group,time\ncase,T1\n,T2\n")
        with self.assertRaises(DataFormatError) as raised:
            read_design_csv(path)
        self.assertIn("line 3", str(raised.exception))

    def test_alignment_names_both_files(self):
        with self.assertRaises(DataFormatError) as raised:
            check_alignment("data.csv", 10, "design.csv", 9)
        message = str(raised.exception)
        self.assertIn("data.csv has 10", message)
        self.assertIn("design.csv has 9", message)
        check_alignment("data.csv", 9, "design.csv", 9)


class FormattingTests(SimpleTestCase):
    def test_twelve_significant_digits(self):
        self.assertEqual(format_number(1 / 3), "0.333333333333")
        self.assertEqual(format_number(float("nan")), "NA")
        self.assertEqual(format_number(float("inf")), "Inf")

    def test_p_floor(self):
        self.assertEqual(format_p(0.001, floor=0.001), "<0.001")
        self.assertEqual(format_p(0.25, floor=0.001), "0.25")
        self.assertEqual(format_p(0.001), "0.001")


class WriteTests(TempDirMixin, SimpleTestCase):
    def test_atomic_write_creates_parents_and_leaves_no_temp(self):
        path = atomic_write_text(self.tmp / "nested" / "out.txt", "hello\n")
        self.assertEqual(path.read_text(), "hello\n")
        self.assertEqual([p.name for p in path.parent.iterdir()], ["out.txt"])

    def test_csv_keeps_twelve_digits_and_missing(self):
        frame = pd.DataFrame({"term": ["A", "B"], "p": [1 / 7, np.nan]})
        path = write_csv(frame, self.tmp / "p.csv")
        self.assertIn("0.142857142857", path.read_text())
        back = read_frame(path)
        self.assertAlmostEqual(back["p"][0], 1 / 7, places=12)
        self.assertTrue(np.isnan(back["p"][1]))

    def test_json_handles_numpy_values(self):
        path = write_json({"seed": np.int64(3), "lambdas": np.array([0.5, 1.0]), "path": self.tmp}, self.tmp / "m.json")
        payload = json.loads(path.read_text())
        self.assertEqual(payload["seed"], 3)
        self.assertEqual(payload["lambdas"], [0.5, 1.0])

    def test_checksum_changes_with_content(self):
        path = self.tmp / "a.txt"
        path.write_text("one")
        first = file_checksum(path)
        path.write_text("two")
        self.assertNotEqual(first, file_checksum(path))
        self.assertEqual(len(first), 64)
