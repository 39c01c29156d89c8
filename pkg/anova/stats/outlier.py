"""Residual outlier diagnostics: PCA model, D (Hotelling T²) and Q (SPE)
statistics, control limits and flagging."""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from anova.stats.config import config
from anova.stats.exceptions import DegenerateQ, InvalidConfig, RankTooLow, TooFewObservations, ZeroVariance
from anova.stats.glm import Factorization
from anova.stats.numerics import sym_eig
from anova.stats.profiling import record_warning
from anova.stats.transform import autoscale

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PcaModel:
    n_components: int
    loadings: np.ndarray
    score_variances: np.ndarray
    column_means: np.ndarray
    column_sds: np.ndarray
    explained: np.ndarray
    n_obs: int

    def scale(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.column_means) / self.column_sds

    def scores(self, X) -> np.ndarray:
        return self.scale(X) @ self.loadings


def fit_pca(
    X,
    n_components: Optional[int] = None,
    variance_fraction: Optional[float] = None,
) -> PcaModel:
    """PCA of the autoscaled columns of X.

    Without ``n_components`` the smallest k reaching ``variance_fraction``
    (default 70%) of the total variance is used.
    """
    scaled, means, sds = autoscale(X)
    n, m = scaled.shape
    eigenvalues, eigenvectors = sym_eig(scaled.T @ scaled / (n - 1))
    eigenvalues = np.clip(eigenvalues, 0.0, None)
    rank = int(np.sum(eigenvalues > config.RANK_TOL * eigenvalues[0]))
    explained = eigenvalues / eigenvalues.sum()

    if n_components is None:
        fraction = config.VARIANCE_FRACTION if variance_fraction is None else variance_fraction
        if not 0 < fraction <= 1:
            raise InvalidConfig(f"variance fraction must be in (0, 1], got {fraction}")
        n_components = int(np.searchsorted(np.cumsum(explained), fraction - 1e-12) + 1)
        n_components = min(n_components, rank)
    if n_components < 1 or n_components >= n:
        raise RankTooLow(f"PCA needs 1 <= k < N={n}, got k={n_components}")
    if n_components > rank:
        raise RankTooLow(f"data of numerical rank {rank} cannot support {n_components} components")

    return PcaModel(
        n_components=n_components,
        loadings=eigenvectors[:, :n_components],
        score_variances=eigenvalues[:n_components],
        column_means=means,
        column_sds=sds,
        explained=explained[:n_components],
        n_obs=n,
    )


def d_statistic(model: PcaModel, X) -> np.ndarray:
    """Hotelling T² of each row within the PCA subspace."""
    scores = model.scores(X)
    return np.sum(scores**2 / model.score_variances, axis=1)


def q_statistic(model: PcaModel, X) -> np.ndarray:
    """Squared prediction error of each row's rank-k reconstruction."""
    scaled = model.scale(X)
    residual = scaled - (scaled @ model.loadings) @ model.loadings.T
    return np.sum(residual**2, axis=1)


def control_limits(model: PcaModel, d_values, q_values, alpha: float, strict: bool = False):
    """(D_limit, Q_limit) at significance ``alpha``.

    D uses the F-based Hotelling limit; Q uses Box's scaled chi-squared
    approximation matched to the mean and variance of the training Q.
    """
    if not 0 < alpha < 1:
        raise InvalidConfig(f"alpha must be in (0, 1), got {alpha}")
    n, k = model.n_obs, model.n_components
    if n <= k + 1:
        raise TooFewObservations(f"control limits need N > k + 1, got N={n}, k={k}")

    d_limit = k * (n - 1) * (n + 1) / (n * (n - k)) * stats.f.ppf(1 - alpha, k, n - k)

    q_values = np.asarray(q_values, dtype=float)
    mean, var = float(q_values.mean()), float(q_values.var(ddof=1))
    if var <= np.finfo(float).eps * max(mean**2, np.finfo(float).tiny) or mean <= 0:
        message = "training Q statistics have zero variance; Q limit set to max Q"
        if strict:
            raise DegenerateQ(message)
        record_warning(message, logger)
        return float(d_limit), float(q_values.max())

    g, h = var / (2.0 * mean), 2.0 * mean**2 / var
    return float(d_limit), float(g * stats.chi2.ppf(1 - alpha, h))


@dataclass(frozen=True, eq=False)
class OutlierReport:
    d: np.ndarray
    q: np.ndarray
    d_limit: float
    q_limit: float
    flagged: np.ndarray
    observation_ids: np.ndarray
    n_components: int
    alpha: float

    def to_frame(self) -> pd.DataFrame:
        is_flagged = np.zeros(self.d.size, dtype=bool)
        is_flagged[self.flagged] = True
        return pd.DataFrame(
            {
                "observation_id": self.observation_ids,
                "D": self.d,
                "Q": self.q,
                "D_limit": self.d_limit,
                "Q_limit": self.q_limit,
                "flagged": is_flagged,
            }
        )


def flag_outliers(
    model: PcaModel,
    X,
    alpha: Optional[float] = None,
    observation_ids: Optional[Sequence] = None,
) -> OutlierReport:
    """Rows of X whose D or Q exceeds its control limit."""
    alpha = config.OUTLIER_ALPHA if alpha is None else alpha
    d_values, q_values = d_statistic(model, X), q_statistic(model, X)
    d_limit, q_limit = control_limits(model, d_values, q_values, alpha)
    flagged = np.flatnonzero((d_values > d_limit) | (q_values > q_limit))
    ids = np.arange(1, d_values.size + 1) if observation_ids is None else np.asarray(observation_ids)
    if flagged.size:
        logger.info(f"Flagged {flagged.size} outlying observations: {list(ids[flagged])}")
    return OutlierReport(d_values, q_values, d_limit, q_limit, flagged, ids, model.n_components, alpha)


def residual_outliers(
    f: Factorization,
    alpha: Optional[float] = None,
    n_components: Optional[int] = None,
    variance_fraction: Optional[float] = None,
    observation_ids: Optional[Sequence] = None,
) -> OutlierReport:
    """Outlier screen on the autoscaled GLM residuals of a factorization."""
    residuals = f.residuals
    sds = residuals.std(axis=0, ddof=1)
    scale = np.maximum(np.abs(f.mu), 1.0)
    usable = sds > 1e-12 * scale
    if not usable.any():
        raise ZeroVariance("every residual column has zero variance")
    if not usable.all():
        dropped = [f.response_names[j] for j in np.flatnonzero(~usable)]
        record_warning(f"residual outlier screen skips zero-variance responses {dropped}", logger)
    model = fit_pca(residuals[:, usable], n_components, variance_fraction)
    return flag_outliers(model, residuals[:, usable], alpha, observation_ids)
