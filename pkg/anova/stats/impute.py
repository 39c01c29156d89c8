"""Missing-data handling: masking for simulations, mean replacement (UMR/CMR),
trimmed score regression (TSR) and case removal (RMD)."""

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np

from anova.stats.config import config
from anova.stats.design import DesignSpec, Term
from anova.stats.exceptions import (
    DegenerateGroup,
    EmptyCell,
    EmptyColumn,
    InfeasibleFraction,
    InvalidConfig,
    NonConvergence,
)
from anova.stats.glm import ResponseMatrix
from anova.stats.numerics import RngStream
from anova.stats.profiling import increment_counter, record_warning

logger = logging.getLogger(__name__)

UMR = "UMR"
CMR = "CMR"
TSR = "TSR"


@dataclass(frozen=True, eq=False)
class ImputedMatrix:
    """A completed response matrix that remembers which entries were filled in."""

    values: np.ndarray
    provenance_mask: np.ndarray
    method: str
    response_names: Tuple[str, ...]
    converged: bool = True
    iterations: int = 0

    @property
    def n_imputed(self) -> int:
        return int(self.provenance_mask.sum())

    def as_response(self) -> ResponseMatrix:
        """The completion as a ResponseMatrix with no missing entries."""
        return ResponseMatrix(self.values, np.zeros_like(self.provenance_mask), self.response_names)


def _target_count(fraction: float, size: int) -> int:
    # Round half up, independent of Python's banker's rounding.
    return int(np.floor(fraction * size + 0.5))


def induce_missing(
    X: ResponseMatrix,
    fraction: float,
    rng: RngStream,
    design: Optional[DesignSpec] = None,
) -> ResponseMatrix:
    """Mask exactly round(fraction·N·M) entries completely at random.

    Every (cell, response) pair keeps at least one observed value, cells
    being the full level combinations of ``design`` (the whole column when
    no design is given).
    """
    values = X.complete_values()
    if not 0.0 <= fraction < 1.0:
        raise InfeasibleFraction(f"missing fraction must lie in [0, 1), got {fraction}")
    n, m = values.shape
    count = _target_count(fraction, n * m)
    if count == 0:
        return X

    if design is None:
        cell_ids = np.zeros(n, dtype=int)
    else:
        cell_ids, _ = design.cells()
    cell_sizes = np.bincount(cell_ids)
    capacity = int(np.sum(cell_sizes - 1)) * m
    if count > capacity:
        raise InfeasibleFraction(
            f"cannot mask {count} of {n * m} entries while keeping one observed value "
            f"per cell and response (at most {capacity} can be masked)"
        )

    generator = rng.generator()
    remaining = np.tile(cell_sizes[:, None], (1, m))
    mask = np.zeros((n, m), dtype=bool)
    masked = 0
    for flat in generator.permutation(n * m):
        row, col = divmod(int(flat), m)
        cell = cell_ids[row]
        if remaining[cell, col] > 1:
            mask[row, col] = True
            remaining[cell, col] -= 1
            masked += 1
            if masked == count:
                break

    logger.debug(f"Masked {masked} of {n * m} entries (fraction {fraction})")
    return ResponseMatrix(values, mask, X.response_names)


def umr(X: ResponseMatrix) -> ImputedMatrix:
    """Unconditional mean replacement: each gap gets its column's observed mean."""
    observed = ~X.missing_mask
    counts = observed.sum(axis=0)
    if np.any(counts == 0):
        raise EmptyColumn(f"response '{X.response_names[int(np.argmin(counts))]}' has no observed values")
    means = np.where(observed, X.values, 0.0).sum(axis=0) / counts
    values = np.where(X.missing_mask, means, X.values)
    increment_counter("imputations")
    return ImputedMatrix(values, X.missing_mask.copy(), UMR, X.response_names)


def _cell_factors(design: DesignSpec, cell_terms: Optional[Iterable[Term]]) -> list:
    if cell_terms is None:
        return list(range(len(design.factors)))
    return sorted({index for term in cell_terms for index in term})


def cell_mean_fill(values: np.ndarray, mask: np.ndarray, indicator: np.ndarray) -> np.ndarray:
    """Fill masked entries with the observed mean of their cell.

    ``indicator`` is the N×K one-hot cell membership matrix. Raises EmptyCell
    (carrying the cell and response index) when a gap falls in a cell with
    no observed value for that response.
    """
    observed = (~mask).astype(float)
    counts = indicator.T @ observed
    sums = indicator.T @ np.where(mask, 0.0, values)
    needed = (indicator.T @ mask.astype(float)) > 0
    empty = needed & (counts == 0)
    if empty.any():
        cell, response = (int(i) for i in np.argwhere(empty)[0])
        raise EmptyCell(
            f"cell {cell} has no observed value for response {response}", cell=cell, response=response
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1.0), 0.0)
    return np.where(mask, indicator @ means, values)


def empty_cell_responses(mask: np.ndarray, indicator: np.ndarray) -> np.ndarray:
    """Indices of responses with a gap in some cell that has no observed value."""
    counts = indicator.T @ (~mask).astype(float)
    needed = (indicator.T @ mask.astype(float)) > 0
    return np.flatnonzero((needed & (counts == 0)).any(axis=0))


def cell_indicator(design: DesignSpec, cell_terms: Optional[Iterable[Term]] = None) -> np.ndarray:
    """One-hot N×K cell membership for the factors appearing in ``cell_terms``."""
    cell_ids, combos = design.cells(_cell_factors(design, cell_terms))
    return np.eye(len(combos))[cell_ids]


def cmr(
    X: ResponseMatrix,
    design: DesignSpec,
    cell_terms: Optional[Iterable[Term]] = None,
) -> ImputedMatrix:
    """Conditional mean replacement: each gap gets the observed mean of its design cell."""
    factors = _cell_factors(design, cell_terms)
    cell_ids, combos = design.cells(factors)
    indicator = np.eye(len(combos))[cell_ids]
    try:
        values = cell_mean_fill(X.values, X.missing_mask, indicator)
    except EmptyCell as exc:
        label = design.cell_label(combos[exc.cell], factors)
        raise EmptyCell(
            f"no observed value in cell ({label}) for response '{X.response_names[exc.response]}'",
            cell=label,
            response=X.response_names[exc.response],
        ) from None
    increment_counter("imputations")
    return ImputedMatrix(values, X.missing_mask.copy(), CMR, X.response_names)


def tsr(
    X: ResponseMatrix,
    n_components: Optional[int] = None,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    strict: bool = False,
) -> ImputedMatrix:
    """Iterative PCA imputation by trimmed score regression.

    Starts from UMR; each sweep autoscales the current completion, fits a
    PCA model and predicts every row's missing part from its observed part
    through the trimmed scores. Stops when no imputed entry moves by more
    than ``tol``. With ``n_components=0`` this is UMR.
    """
    n_components = config.TSR_COMPONENTS if n_components is None else n_components
    tol = config.TSR_TOL if tol is None else tol
    max_iter = config.TSR_MAX_ITER if max_iter is None else max_iter

    n, m = X.values.shape
    counts = (~X.missing_mask).sum(axis=0)
    if np.any(counts < 2):
        name = X.response_names[int(np.argmin(counts))]
        raise EmptyColumn(f"TSR needs at least 2 observed values per response; '{name}' has {int(counts.min())}")
    if n_components < 0 or (n_components > 0 and n_components >= m):
        raise InvalidConfig(f"TSR needs 1 <= n_components < M={m}, got {n_components}")

    start = umr(X)
    if n_components == 0 or X.is_complete:
        return ImputedMatrix(start.values, start.provenance_mask, TSR, X.response_names)

    mask = X.missing_mask
    incomplete_rows = np.flatnonzero(mask.any(axis=1))
    current = start.values.copy()
    converged = False
    iteration = 0

    for iteration in range(1, max_iter + 1):
        means = current.mean(axis=0)
        sds = current.std(axis=0, ddof=1)
        sds[sds == 0] = 1.0
        scaled = (current - means) / sds

        _, _, vt = np.linalg.svd(scaled, full_matrices=False)
        loadings = vt[:n_components].T

        updated = current.copy()
        for row in incomplete_rows:
            missing = mask[row]
            observed = ~missing
            p_obs = loadings[observed]
            trimmed = scaled[:, observed] @ p_obs
            gram = trimmed.T @ trimmed
            coef = np.linalg.lstsq(gram, p_obs.T @ scaled[row, observed], rcond=None)[0]
            prediction = scaled[:, missing].T @ (trimmed @ coef)
            updated[row, missing] = prediction * sds[missing] + means[missing]

        change = float(np.max(np.abs(updated[mask] - current[mask])))
        current = updated
        if change < tol:
            converged = True
            break

    increment_counter("imputations")
    if not converged:
        message = f"TSR did not converge in {max_iter} iterations"
        if strict:
            raise NonConvergence(message)
        record_warning(message, logger)
    else:
        logger.debug(f"TSR converged after {iteration} iterations")
    return ImputedMatrix(current, mask.copy(), TSR, X.response_names, converged, iteration)


def rmd_split(
    x,
    design: DesignSpec,
    mask=None,
    group_factors: Optional[Iterable[int]] = None,
) -> Tuple[np.ndarray, DesignSpec, np.ndarray]:
    """Drop the missing entries of one response column together with their design rows.

    Returns (observed values, filtered design, kept row indices). Every level
    of each factor in ``group_factors`` (default: all factors) must keep at
    least two observations.
    """
    x = np.asarray(x, dtype=float).ravel()
    mask = np.isnan(x) if mask is None else np.asarray(mask, dtype=bool).ravel()
    rows = np.flatnonzero(~mask)

    factors = list(range(len(design.factors))) if group_factors is None else list(group_factors)
    for index in factors:
        factor = design.factors[index]
        kept = np.bincount(design.assignments[rows, index], minlength=factor.n_levels + 1)[1:]
        short = np.flatnonzero(kept < 2)
        if short.size:
            level = int(short[0])
            raise DegenerateGroup(
                f"group {factor.name}={factor.label(level + 1)} has {kept[level]} observed values, need at least 2"
            )
    return x[rows], design.subset(rows), rows
