"""Experimental designs, sum-coded model matrices and degree-of-freedom accounting."""

import logging
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from anova.stats.exceptions import InsufficientReplication, InvalidDesign, InvalidLevel
from anova.stats.numerics import LeastSquaresSolver

logger = logging.getLogger(__name__)

# A model term is a sorted tuple of factor indices: (i,) main effect, (i, j) interaction.
Term = Tuple[int, ...]


@dataclass(frozen=True)
class FactorSpec:
    """A categorical factor with ``n_levels`` levels (optionally labelled)."""

    name: str
    n_levels: int
    labels: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.n_levels < 2:
            raise InvalidDesign(f"factor '{self.name}' needs at least 2 levels, got {self.n_levels}")
        if self.labels and len(self.labels) != self.n_levels:
            raise InvalidDesign(
                f"factor '{self.name}' has {self.n_levels} levels but {len(self.labels)} labels"
            )

    @property
    def dof(self) -> int:
        return self.n_levels - 1

    def label(self, level: int) -> str:
        """Label of a 1-based level index."""
        return self.labels[level - 1] if self.labels else str(level)


@dataclass(frozen=True, eq=False)
class DesignSpec:
    """Factors, per-observation level assignments (1-based) and model terms."""

    factors: Tuple[FactorSpec, ...]
    assignments: np.ndarray
    terms: Tuple[Term, ...]

    def __post_init__(self):
        factors = tuple(self.factors)
        object.__setattr__(self, "factors", factors)

        names = [f.name for f in factors]
        if len(set(names)) != len(names):
            raise InvalidDesign(f"factor names must be unique, got {names}")

        assignments = np.asarray(self.assignments)
        if assignments.ndim == 1:
            assignments = assignments.reshape(-1, 1)
        if assignments.ndim != 2 or assignments.shape[1] != len(factors):
            raise InvalidDesign(
                f"assignments must be N x {len(factors)}, got shape {assignments.shape}"
            )
        if not np.issubdtype(assignments.dtype, np.integer):
            if not np.all(np.equal(np.mod(assignments, 1), 0)):
                raise InvalidLevel("level assignments must be integers")
        assignments = assignments.astype(int)
        for j, factor in enumerate(factors):
            column = assignments[:, j]
            bad = np.flatnonzero((column < 1) | (column > factor.n_levels))
            if bad.size:
                raise InvalidLevel(
                    f"factor '{factor.name}' row {int(bad[0]) + 1}: level {int(column[bad[0]])} "
                    f"outside 1..{factor.n_levels}"
                )
        assignments.setflags(write=False)
        object.__setattr__(self, "assignments", assignments)

        terms = tuple(tuple(sorted(set(t))) for t in self.terms)
        object.__setattr__(self, "terms", terms)
        self._validate_terms()

    def _validate_terms(self):
        if not self.terms:
            raise InvalidDesign("a model needs at least one term")
        if len(set(self.terms)) != len(self.terms):
            raise InvalidDesign("model terms must not repeat")
        mains = {t[0] for t in self.terms if len(t) == 1}
        for term in self.terms:
            if len(term) == 0:
                raise InvalidDesign("empty model term")
            if len(term) > 2:
                raise InvalidDesign(
                    f"term '{self.term_label(term)}': only main effects and two-way "
                    "interactions are supported"
                )
            for index in term:
                if not 0 <= index < len(self.factors):
                    raise InvalidDesign(f"term refers to unknown factor index {index}")
            if len(term) == 2 and not set(term) <= mains:
                raise InvalidDesign(
                    f"interaction '{self.term_label(term)}' needs both main effects in the model"
                )

    @property
    def n_obs(self) -> int:
        return self.assignments.shape[0]

    @property
    def factor_names(self) -> List[str]:
        return [f.name for f in self.factors]

    def term_label(self, term: Term) -> str:
        return "*".join(self.factors[i].name for i in term)

    def term_dof(self, term: Term) -> int:
        return int(np.prod([self.factors[i].dof for i in term]))

    def term_by_label(self, label: str) -> Term:
        for term in self.terms:
            if self.term_label(term) == label:
                return term
        raise InvalidDesign(f"unknown term '{label}'")

    def factor_index(self, name: str) -> int:
        try:
            return self.factor_names.index(name)
        except ValueError:
            raise InvalidDesign(f"unknown factor '{name}'") from None

    def subset(self, rows) -> "DesignSpec":
        """The design restricted to ``rows`` (index array or boolean mask)."""
        return DesignSpec(self.factors, self.assignments[np.asarray(rows)], self.terms)

    def with_terms(self, terms: Sequence[Term]) -> "DesignSpec":
        return DesignSpec(self.factors, self.assignments, tuple(terms))

    def cells(self, factor_indices: Optional[Sequence[int]] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Cell id per row and the level combination of each cell.

        Cells are the distinct level combinations of ``factor_indices``
        (default: every factor), numbered in sorted order.
        """
        if factor_indices is None:
            factor_indices = range(len(self.factors))
        factor_indices = list(factor_indices)
        if not factor_indices:
            return np.zeros(self.n_obs, dtype=int), np.empty((1, 0), dtype=int)
        columns = self.assignments[:, factor_indices]
        combos, cell_ids = np.unique(columns, axis=0, return_inverse=True)
        return cell_ids.ravel(), combos

    def cell_label(self, combo: Sequence[int], factor_indices: Optional[Sequence[int]] = None) -> str:
        if factor_indices is None:
            factor_indices = range(len(self.factors))
        return ", ".join(
            f"{self.factors[i].name}={self.factors[i].label(int(level))}"
            for i, level in zip(factor_indices, combo)
        )

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, formula: Optional[str] = None) -> "DesignSpec":
        """Build a design from a table of level labels (one column per factor).

        Labels map to level indices in first-appearance order.
        """
        factors = []
        columns = []
        for name in frame.columns:
            labels = frame[name].astype(str).str.strip()
            order = list(dict.fromkeys(labels))
            index = {label: i + 1 for i, label in enumerate(order)}
            factors.append(FactorSpec(str(name), len(order), tuple(order)))
            columns.append(labels.map(index).to_numpy())
        assignments = np.column_stack(columns) if columns else np.empty((0, 0), dtype=int)
        names = [f.name for f in factors]
        terms = parse_formula(formula, names) if formula else [(i,) for i in range(len(names))]
        return cls(tuple(factors), assignments, tuple(terms))


_NAME = r"[^\s+*]+"


def parse_formula(formula: str, factor_names: Sequence[str]) -> List[Term]:
    """Parse ``"A+B+A*B"``: terms joined by '+', a two-way interaction written 'X*Y'."""
    compact = re.sub(r"\s+", "", formula or "")
    if not compact:
        raise InvalidDesign("empty model formula")
    terms = []
    for chunk in compact.split("+"):
        if not chunk:
            raise InvalidDesign(f"malformed formula '{formula}'")
        names = chunk.split("*")
        if len(names) > 2:
            raise InvalidDesign(
                f"term '{chunk}': only two-way interactions are supported"
            )
        indices = []
        for name in names:
            if not re.fullmatch(_NAME, name) or name not in factor_names:
                raise InvalidDesign(f"unknown factor '{name}' in formula '{formula}'")
            indices.append(list(factor_names).index(name))
        if len(set(indices)) != len(indices):
            raise InvalidDesign(f"term '{chunk}' repeats a factor")
        term = tuple(sorted(indices))
        if term in terms:
            raise InvalidDesign(f"term '{chunk}' appears twice")
        terms.append(term)
    return terms


def sum_code_factor(factor: FactorSpec, levels) -> np.ndarray:
    """N×(L−1) sum coding: level ℓ < L → e_ℓ, level L → all −1."""
    levels = np.asarray(levels)
    if np.any((levels < 1) | (levels > factor.n_levels)):
        bad = levels[(levels < 1) | (levels > factor.n_levels)][0]
        raise InvalidLevel(f"factor '{factor.name}': level {bad} outside 1..{factor.n_levels}")
    basis = np.vstack([np.eye(factor.dof), -np.ones((1, factor.dof))])
    return basis[levels.astype(int) - 1]


@dataclass(frozen=True, eq=False)
class CodingMatrix:
    """Sum-coded model matrix with the column range of each term; intercept at column 0."""

    matrix: np.ndarray
    term_columns: Dict[Term, slice]
    design: DesignSpec = field(repr=False)

    @property
    def terms(self) -> List[Term]:
        return list(self.term_columns)

    def without(self, term: Term) -> "CodingMatrix":
        """The coding matrix of the reduced model that drops ``term``."""
        keep = [0]
        columns = {}
        for other, span in self.term_columns.items():
            if other == term:
                continue
            start = len(keep)
            keep.extend(range(span.start, span.stop))
            columns[other] = slice(start, len(keep))
        return CodingMatrix(self.matrix[:, keep], columns, self.design)


def build_coding_matrix(design: DesignSpec, check_rank: bool = True) -> CodingMatrix:
    """Intercept, then each term's block in declared order.

    Interaction blocks hold the element-wise products of the parents' columns,
    ordered lexicographically over (first parent column, second parent column).
    """
    main_blocks = {
        i: sum_code_factor(f, design.assignments[:, i]) for i, f in enumerate(design.factors)
    }
    blocks = [np.ones((design.n_obs, 1))]
    term_columns = {}
    position = 1
    for term in design.terms:
        if len(term) == 1:
            block = main_blocks[term[0]]
        else:
            first, second = main_blocks[term[0]], main_blocks[term[1]]
            block = np.einsum("ni,nj->nij", first, second).reshape(design.n_obs, -1)
        term_columns[term] = slice(position, position + block.shape[1])
        position += block.shape[1]
        blocks.append(block)

    matrix = np.hstack(blocks)
    matrix.setflags(write=False)
    coding = CodingMatrix(matrix, term_columns, design)
    if check_rank:
        # Raises RankDeficient for inestimable terms (e.g. empty interaction cells).
        LeastSquaresSolver(matrix)
    return coding


@dataclass(frozen=True)
class DofTable:
    """Degrees of freedom per term, for the residual and in total."""

    term_dofs: Dict[Term, int]
    residual: int
    total: int

    @property
    def model(self) -> int:
        return sum(self.term_dofs.values())

    @property
    def saturated(self) -> bool:
        return self.residual < 1


def dof_table(design: DesignSpec, allow_saturated: bool = False) -> DofTable:
    """Factor DoF = L−1, interaction DoF = product of parents, residual = (N−1) − Σ terms."""
    term_dofs = {term: design.term_dof(term) for term in design.terms}
    total = design.n_obs - 1
    residual = total - sum(term_dofs.values())
    if residual < 0 or (residual < 1 and not allow_saturated):
        raise InsufficientReplication(
            f"model with {sum(term_dofs.values())} term DoF leaves {residual} residual DoF "
            f"for N={design.n_obs}"
        )
    return DofTable(term_dofs, residual, total)
