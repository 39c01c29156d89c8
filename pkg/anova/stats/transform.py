"""Variance-stabilizing and rank transforms, autoscaling and raw+rank augmentation."""

import logging
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np
from scipy import optimize, special, stats

from anova.stats.config import config
from anova.stats.exceptions import (
    DegenerateInput,
    InvalidConfig,
    NonPositiveInput,
    TooFewObservations,
    ZeroVariance,
)
from anova.stats.glm import ResponseMatrix
from anova.stats.profiling import record_warning

logger = logging.getLogger(__name__)

NONE = "none"
BOXCOX = "boxcox"
RANK = "rank"
RAW_RANK = "raw+rank"
TRANSFORMS = (NONE, BOXCOX, RANK, RAW_RANK)


@dataclass(frozen=True)
class BoxCoxFit:
    lmbda: float
    log_likelihood: float
    shift_applied: float = 0.0


def boxcox_apply(x, lmbda: float, shift: float = 0.0) -> np.ndarray:
    """(x^λ − 1)/λ, or ln x at λ = 0, after adding ``shift``."""
    x = np.asarray(x, dtype=float) + shift
    if np.any(x <= 0):
        raise NonPositiveInput(
            f"Box-Cox needs strictly positive values, minimum is {float(np.min(x)):.6g}"
        )
    return special.boxcox(x, lmbda)


def _profile_llf(x: np.ndarray, lambdas: np.ndarray) -> np.ndarray:
    n = x.size
    transformed = special.boxcox(x[None, :], lambdas[:, None])
    variances = transformed.var(axis=1)
    with np.errstate(divide="ignore"):
        return -0.5 * n * np.log(variances) + (lambdas - 1.0) * np.sum(np.log(x))


def boxcox_estimate(x, shift: bool = False) -> BoxCoxFit:
    """Maximum profile-likelihood λ: grid search then golden-section refinement.

    With ``shift=True`` data with a non-positive minimum is moved by
    1 − min(x) first; otherwise such data is rejected.
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size < config.BOXCOX_MIN_OBS:
        raise TooFewObservations(
            f"Box-Cox estimation needs at least {config.BOXCOX_MIN_OBS} values, got {x.size}"
        )
    offset = 0.0
    if np.min(x) <= 0:
        if not shift:
            raise NonPositiveInput(
                f"Box-Cox needs strictly positive values, minimum is {float(np.min(x)):.6g}"
            )
        offset = 1.0 - float(np.min(x))
        logger.debug(f"Box-Cox shift of {offset:.6g} applied to non-positive data")
        x = x + offset
    if np.ptp(x) == 0:
        raise ZeroVariance("Box-Cox estimation on constant data")

    step = config.BOXCOX_GRID_STEP
    grid = np.round(np.arange(config.BOXCOX_GRID_MIN, config.BOXCOX_GRID_MAX + step / 2, step), 10)
    llf = _profile_llf(x, grid)
    best = int(np.nanargmax(llf))
    lmbda, best_llf = float(grid[best]), float(llf[best])

    if 0 < best < grid.size - 1:
        bracket = (grid[best - 1], grid[best], grid[best + 1])
        try:
            result = optimize.minimize_scalar(
                lambda lam: -stats.boxcox_llf(lam, x),
                bracket=bracket,
                method="golden",
                options={"xtol": config.BOXCOX_REFINE_TOL},
            )
            refined_llf = -float(result.fun)
            if np.isfinite(refined_llf) and refined_llf >= best_llf:
                lmbda, best_llf = float(result.x), refined_llf
        except ValueError:
            # Flat neighbourhood: golden section cannot bracket, keep the grid optimum.
            pass

    return BoxCoxFit(lmbda=lmbda, log_likelihood=best_llf, shift_applied=offset)


def rank_transform(x, mask=None, strict: bool = False) -> np.ndarray:
    """Midranks 1..n of the observed entries; masked entries stay NaN."""
    x = np.asarray(x, dtype=float).ravel()
    mask = np.isnan(x) if mask is None else np.asarray(mask, dtype=bool).ravel()
    observed = x[~mask]
    if observed.size < 2:
        raise TooFewObservations(f"rank transform needs at least 2 observed values, got {observed.size}")

    ranks = np.full(x.shape, np.nan)
    ranks[~mask] = stats.rankdata(observed, method="average")
    if np.all(observed == observed[0]):
        message = "rank transform of a column whose observed values are all equal"
        if strict:
            raise DegenerateInput(message)
        record_warning(message, logger)
    return ranks


def autoscale(X) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Center each column and scale it to unit sample sd (n − 1 denominator)."""
    values = X.complete_values() if isinstance(X, ResponseMatrix) else np.asarray(X, dtype=float)
    if values.ndim == 1:
        values = values.reshape(-1, 1)
    means = values.mean(axis=0)
    sds = values.std(axis=0, ddof=1)
    flat = sds <= np.finfo(float).eps * np.maximum(np.abs(means), 1.0)
    if np.any(flat):
        raise ZeroVariance(f"column {int(np.argmax(flat))} has zero variance")
    return (values - means) / sds, means, sds


def _rank_columns(X: ResponseMatrix) -> np.ndarray:
    return np.column_stack(
        [rank_transform(X.values[:, j], X.missing_mask[:, j]) for j in range(X.n_responses)]
    )


def append_rank(X: ResponseMatrix) -> ResponseMatrix:
    """[raw | ranks], the rank columns suffixed ``_rank``."""
    values = np.hstack([X.values, _rank_columns(X)])
    mask = np.hstack([X.missing_mask, X.missing_mask])
    names = list(X.response_names) + [f"{name}_rank" for name in X.response_names]
    return ResponseMatrix(values, mask, tuple(names))


@dataclass(frozen=True, eq=False)
class TransformResult:
    matrix: ResponseMatrix
    method: str
    boxcox: Dict[str, BoxCoxFit] = field(default_factory=dict)


def apply_transform(X: ResponseMatrix, method: str, shift: bool = False, warn: bool = True) -> TransformResult:
    """Transform observed entries column by column; masked entries stay missing.

    Box-Cox uses one λ per response. Shifted responses are reported in one
    run warning unless ``warn`` is False.
    """
    if method == NONE:
        return TransformResult(X, method)
    if method == RANK:
        return TransformResult(X.with_values(_rank_columns(X)), method)
    if method == RAW_RANK:
        return TransformResult(append_rank(X), method)
    if method != BOXCOX:
        raise InvalidConfig(f"unknown transform '{method}', expected one of {', '.join(TRANSFORMS)}")

    values = np.array(X.values)
    fits = {}
    for j, name in enumerate(X.response_names):
        observed = ~X.missing_mask[:, j]
        fit = boxcox_estimate(values[observed, j], shift=shift)
        values[observed, j] = boxcox_apply(values[observed, j], fit.lmbda, fit.shift_applied)
        fits[name] = fit
        logger.debug(f"Box-Cox {name}: lambda={fit.lmbda:.4f} shift={fit.shift_applied:.4g}")
    shifted = [name for name, fit in fits.items() if fit.shift_applied]
    if shifted and warn:
        record_warning(f"Box-Cox shift applied to non-positive responses {shifted}", logger)
    return TransformResult(X.with_values(values), method, fits)
