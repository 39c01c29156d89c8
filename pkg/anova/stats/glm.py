"""GLM factorization of a response matrix into mean, term effects and residuals."""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from anova.stats.design import CodingMatrix, DesignSpec, DofTable, Term, build_coding_matrix, dof_table
from anova.stats.exceptions import EmptyColumn, InvalidDesign, MissingDataPresent
from anova.stats.numerics import LeastSquaresSolver, sym_eig
from anova.stats.profiling import increment_counter, record_warning

logger = logging.getLogger(__name__)

TOTAL = "total_centered"
RESIDUAL = "residual"

# Sums of squares below this fraction of the column energy are rounding noise.
_SS_FLUSH = 1e-24


@dataclass(frozen=True, eq=False)
class ResponseMatrix:
    """N×M responses; missing entries are NaN in ``values`` and True in ``missing_mask``."""

    values: np.ndarray
    missing_mask: np.ndarray
    response_names: Tuple[str, ...]

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        mask = np.array(self.missing_mask, dtype=bool).reshape(values.shape)
        values[mask] = np.nan
        if not np.all(np.isfinite(values[~mask])):
            raise InvalidDesign("observed response entries must be finite")

        names = tuple(str(n) for n in self.response_names)
        if len(names) != values.shape[1]:
            raise InvalidDesign(
                f"{values.shape[1]} response columns but {len(names)} response names"
            )
        empty = np.flatnonzero(mask.all(axis=0))
        if empty.size:
            raise EmptyColumn(f"response '{names[empty[0]]}' has no observed values")

        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing_mask", mask)
        object.__setattr__(self, "response_names", names)

    @classmethod
    def from_array(cls, values, names: Optional[Sequence[str]] = None, mask=None) -> "ResponseMatrix":
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if mask is None:
            mask = np.isnan(values)
        if names is None:
            names = [f"y{j + 1}" for j in range(values.shape[1])]
        return cls(values, mask, tuple(names))

    @property
    def n_obs(self) -> int:
        return self.values.shape[0]

    @property
    def n_responses(self) -> int:
        return self.values.shape[1]

    @property
    def is_complete(self) -> bool:
        return not self.missing_mask.any()

    @property
    def n_missing(self) -> int:
        return int(self.missing_mask.sum())

    def complete_values(self) -> np.ndarray:
        """The values array, refusing incomplete data."""
        if not self.is_complete:
            raise MissingDataPresent(
                f"{self.n_missing} missing entries present; impute or remove them first"
            )
        return self.values

    def with_values(self, values, names: Optional[Sequence[str]] = None) -> "ResponseMatrix":
        """Same mask and names, new values (missing positions are re-blanked)."""
        return ResponseMatrix(values, self.missing_mask, tuple(names or self.response_names))

    def subset_rows(self, rows) -> "ResponseMatrix":
        rows = np.asarray(rows)
        return ResponseMatrix(self.values[rows], self.missing_mask[rows], self.response_names)

    def select(self, columns: Sequence[int]) -> "ResponseMatrix":
        columns = list(columns)
        return ResponseMatrix(
            self.values[:, columns],
            self.missing_mask[:, columns],
            tuple(self.response_names[j] for j in columns),
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, columns=list(self.response_names))


@dataclass(frozen=True, eq=False)
class Factorization:
    """Mean, per-term effect matrices, residuals and sums of squares of a GLM fit."""

    mu: np.ndarray
    theta: np.ndarray
    effects: Dict[Term, np.ndarray]
    residuals: np.ndarray
    ss: Dict[str, np.ndarray]
    dofs: DofTable
    coding: CodingMatrix = field(repr=False)
    response_names: Tuple[str, ...] = ()

    @property
    def design(self) -> DesignSpec:
        return self.coding.design

    @property
    def term_labels(self) -> List[str]:
        return [self.design.term_label(t) for t in self.coding.terms]

    def reconstruct(self) -> np.ndarray:
        """1·muᵀ + Σ effects + residuals."""
        total = np.tile(self.mu, (self.residuals.shape[0], 1)) + self.residuals
        for effect in self.effects.values():
            total = total + effect
        return total


def _flush(ss: np.ndarray, energy: np.ndarray) -> np.ndarray:
    return np.where(ss <= _SS_FLUSH * energy, 0.0, ss)


def fit(coding: CodingMatrix, X) -> Factorization:
    """Least-squares factorization X = C·Θ + E of complete responses."""
    if not isinstance(X, ResponseMatrix):
        X = ResponseMatrix.from_array(X)
    values = X.complete_values()
    if values.shape[0] != coding.matrix.shape[0]:
        raise InvalidDesign(
            f"design has {coding.matrix.shape[0]} rows but responses have {values.shape[0]}"
        )

    dofs = dof_table(coding.design, allow_saturated=True)
    if dofs.saturated:
        record_warning(
            "saturated model: zero residual DoF, factorization only (no inference)", logger
        )

    solver = LeastSquaresSolver(coding.matrix)
    theta = solver.solve(values)
    fitted = coding.matrix @ theta
    residuals = values - fitted
    increment_counter("fits")

    energy = np.sum(values**2, axis=0)
    effects = {}
    ss = {TOTAL: _flush(np.sum((values - values.mean(axis=0)) ** 2, axis=0), energy)}
    for term, span in coding.term_columns.items():
        effect = coding.matrix[:, span] @ theta[span]
        effects[term] = effect
        ss[coding.design.term_label(term)] = _flush(np.sum(effect**2, axis=0), energy)
    ss[RESIDUAL] = _flush(np.sum(residuals**2, axis=0), energy)

    return Factorization(
        mu=theta[0].copy(),
        theta=theta,
        effects=effects,
        residuals=residuals,
        ss=ss,
        dofs=dofs,
        coding=coding,
        response_names=X.response_names,
    )


def _summary_frame(ss: Dict[str, np.ndarray], term_labels: Sequence[str]) -> pd.DataFrame:
    rows = [(label, float(np.sum(ss[label]))) for label in term_labels]
    rows.append(("Residuals", float(np.sum(ss[RESIDUAL]))))
    rows.append(("Total", float(np.sum(ss[TOTAL]))))
    return pd.DataFrame(rows, columns=["source", "ss"]).set_index("source")


def ss_summary(f: Factorization) -> pd.DataFrame:
    """Sums of squares aggregated over responses: one row per term, Residuals, Total."""
    return _summary_frame(f.ss, f.term_labels)


class GlmFitter:
    """Cached QR of a coding matrix, for repeated term statistics on permuted data."""

    def __init__(self, coding: CodingMatrix, allow_saturated: bool = False):
        self.coding = coding
        self.solver = LeastSquaresSolver(coding.matrix)
        self.dofs = dof_table(coding.design, allow_saturated=allow_saturated)
        self.terms = coding.terms
        self.term_dofs = np.array([self.dofs.term_dofs[t] for t in self.terms], dtype=float)

    def term_ss(self, Y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(T×M term sums of squares, M residual sums of squares) for complete Y."""
        theta = self.solver.solve(Y)
        matrix = self.coding.matrix
        energy = np.sum(Y**2, axis=0)
        term_ss = np.empty((len(self.terms), Y.shape[1]))
        for row, term in enumerate(self.terms):
            span = self.coding.term_columns[term]
            term_ss[row] = np.sum((matrix[:, span] @ theta[span]) ** 2, axis=0)
        residual_ss = np.sum((Y - matrix @ theta) ** 2, axis=0)
        return _flush(term_ss, energy), _flush(residual_ss, energy)

    def statistics(self, Y: np.ndarray, statistic: str = "F") -> np.ndarray:
        """T×M array of per-term statistics: F-ratios or raw sums of squares."""
        term_ss, residual_ss = self.term_ss(Y)
        if statistic == "SS":
            return term_ss
        return f_ratio(term_ss, self.term_dofs[:, None], residual_ss, self.dofs.residual)


def f_ratio(ss_term, df_term, ss_residual, df_residual) -> np.ndarray:
    """(SS_term/df_term)/(SS_resid/df_resid); 0 when SS_term is 0, inf when only SS_resid is 0."""
    ss_term = np.asarray(ss_term, dtype=float)
    ss_residual = np.broadcast_to(np.asarray(ss_residual, dtype=float), ss_term.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (ss_term / df_term) / (ss_residual / df_residual)
    ratio = np.where(ss_term == 0, 0.0, ratio)
    return np.where((ss_term > 0) & (ss_residual == 0), np.inf, ratio)


def available_ss(X: ResponseMatrix, design: DesignSpec) -> Dict[str, np.ndarray]:
    """Per-response sums of squares using observed entries only.

    Each response is factorized on its own observed rows, so missing entries
    contribute nothing and every mean is computed from observed data.
    """
    labels = [design.term_label(t) for t in design.terms]
    ss = {key: np.zeros(X.n_responses) for key in [TOTAL, RESIDUAL, *labels]}
    for j in range(X.n_responses):
        rows = np.flatnonzero(~X.missing_mask[:, j])
        sub_design = design.subset(rows)
        coding = build_coding_matrix(sub_design)
        column = ResponseMatrix.from_array(X.values[rows, j], [X.response_names[j]])
        sub_fit = fit(coding, column)
        for key in ss:
            ss[key][j] = sub_fit.ss[key][0]
    return ss


def available_summary(X: ResponseMatrix, design: DesignSpec) -> pd.DataFrame:
    """ss_summary layout for the observed-entries-only factorization."""
    return _summary_frame(available_ss(X, design), [design.term_label(t) for t in design.terms])


@dataclass(frozen=True, eq=False)
class EffectPca:
    """PCA of one term's effect matrix (the component step of ASCA)."""

    term: str
    loadings: np.ndarray
    scores: np.ndarray
    residual_scores: np.ndarray
    explained: np.ndarray
    response_names: Tuple[str, ...]

    def scores_frame(self, observation_ids: Optional[Sequence] = None) -> pd.DataFrame:
        k = self.scores.shape[1]
        frame = pd.DataFrame(
            np.hstack([self.scores, self.residual_scores]),
            columns=[f"PC{a + 1}" for a in range(k)] + [f"PC{a + 1}_with_residuals" for a in range(k)],
        )
        frame.insert(0, "observation_id", observation_ids if observation_ids is not None else np.arange(1, len(frame) + 1))
        return frame

    def loadings_frame(self) -> pd.DataFrame:
        k = self.loadings.shape[1]
        frame = pd.DataFrame(self.loadings, columns=[f"PC{a + 1}" for a in range(k)])
        frame.insert(0, "response", list(self.response_names))
        return frame


def effect_pca(f: Factorization, term_label: str, n_components: int = 2) -> EffectPca:
    """Loadings and scores of a term's effect matrix, plus residual-augmented scores."""
    term = f.design.term_by_label(term_label)
    effect = f.effects[term]
    k = max(1, min(n_components, f.design.term_dof(term), effect.shape[1]))

    eigenvalues, eigenvectors = sym_eig(effect.T @ effect)
    eigenvalues = np.clip(eigenvalues, 0.0, None)
    total = eigenvalues.sum()
    explained = eigenvalues[:k] / total if total > 0 else np.zeros(k)
    loadings = eigenvectors[:, :k]

    return EffectPca(
        term=term_label,
        loadings=loadings,
        scores=effect @ loadings,
        residual_scores=(effect + f.residuals) @ loadings,
        explained=explained,
        response_names=f.response_names,
    )
