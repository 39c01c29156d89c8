"""Shared builders for balanced designs, response matrices and CSV fixtures."""

import shutil
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd

from anova.stats.design import DesignSpec, FactorSpec, parse_formula
from anova.stats.glm import ResponseMatrix
from anova.stats.numerics import RngStream


def balanced_design(levels=(2, 3), replicates=2, formula=None, names=None):
    """Fully crossed design, replicates innermost; terms default to main effects."""
    names = list(names or [chr(ord("A") + i) for i in range(len(levels))])
    grids = np.meshgrid(*[np.arange(1, n + 1) for n in levels], indexing="ij")
    cells = np.column_stack([g.ravel() for g in grids])
    assignments = np.repeat(cells, replicates, axis=0)
    factors = tuple(FactorSpec(name, n) for name, n in zip(names, levels))
    terms = parse_formula(formula, names) if formula else [(i,) for i in range(len(names))]
    return DesignSpec(factors, assignments, tuple(terms))


def random_matrix(n_obs, n_responses, seed=0, loc=0.0):
    generator = RngStream(seed, 99).generator()
    return ResponseMatrix.from_array(loc + generator.standard_normal((n_obs, n_responses)))


def one_way_example():
    """Three groups of six: means 5, 9, 10, SS_between 84, SS_within 68 (F = 630/68 on 2 and 15 df)."""
    groups = [(6, 8, 4, 5, 3, 4), (8, 12, 9, 11, 6, 8), (13, 9, 11, 8, 7, 12)]
    design = DesignSpec((FactorSpec("A", 3),), np.repeat([1, 2, 3], 6).reshape(-1, 1), ((0,),))
    values = np.array([v for group in groups for v in group], dtype=float)
    return design, ResponseMatrix.from_array(values, ["y"])


def design_frame(design: DesignSpec) -> pd.DataFrame:
    return pd.DataFrame(
        {
            factor.name: [factor.label(level) for level in design.assignments[:, j]]
            for j, factor in enumerate(design.factors)
        }
    )


class TempDirMixin:
    """A fresh temporary directory per test, removed afterwards."""

    def setUp(self):
        super().setUp()
        self.tmp = Path(tempfile.mkdtemp(prefix="factorlab-test-"))

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)
        super().tearDown()

    def write_inputs(self, matrix: ResponseMatrix, design: DesignSpec, stem="study"):
        """Write data/design CSVs (missing entries as NA) and return their paths."""
        data_path = self.tmp / f"{stem}_data.csv"
        design_path = self.tmp / f"{stem}_design.csv"
        frame = matrix.to_frame()
        frame.to_csv(data_path, index=False, na_rep="NA", float_format="%.17g")
        design_frame(design).to_csv(design_path, index=False)
        return data_path, design_path
