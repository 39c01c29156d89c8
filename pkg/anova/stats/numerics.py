"""Shared numerical kernels: least squares, symmetric eigendecomposition,
special functions and splittable random streams.

Matrices are plain 2-D ``numpy.ndarray`` values of dtype float64.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import linalg as sla
from scipy import special

from anova.stats.config import config
from anova.stats.exceptions import DomainError, NotSymmetric, RankDeficient

logger = logging.getLogger(__name__)

_UINT64_MASK = (1 << 64) - 1


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float array (1-D input becomes a column)."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


class LeastSquaresSolver:
    """QR factorization of a full-column-rank design, reusable across right-hand sides.

    The rank check uses singular values: anything below ``RANK_TOL`` times the
    largest singular value counts as zero.
    """

    def __init__(self, A):
        A = as_matrix(A, "A")
        n, k = A.shape
        if n < k:
            raise RankDeficient(f"least squares needs N >= k, got N={n}, k={k}")

        singular_values = np.linalg.svd(A, compute_uv=False)
        rank = int(np.sum(singular_values > config.RANK_TOL * singular_values[0]))
        if singular_values[0] == 0 or rank < k:
            raise RankDeficient(f"design has numerical rank {rank} < {k} columns")

        self.A = A
        self.q, self.r = np.linalg.qr(A, mode="reduced")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.A.shape

    def solve(self, B) -> np.ndarray:
        """Return argmin ||B - A·Θ||_F for B of shape (N,) or (N, M)."""
        B = np.asarray(B, dtype=float)
        return sla.solve_triangular(self.r, self.q.T @ B, lower=False)

    def fitted(self, B) -> np.ndarray:
        """Orthogonal projection of B onto the column space of A."""
        B = np.asarray(B, dtype=float)
        return self.q @ (self.q.T @ B)


def solve_least_squares(A, B) -> np.ndarray:
    """Least-squares coefficients Θ (k×M) for A (N×k) and B (N×M)."""
    B = np.asarray(B, dtype=float)
    squeeze = B.ndim == 1
    theta = LeastSquaresSolver(A).solve(B.reshape(B.shape[0], -1))
    return theta.ravel() if squeeze else theta


def sym_eig(S) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and orthonormal eigenvectors of a symmetric matrix.

    Each eigenvector is sign-normalised so that its largest-magnitude entry
    is positive, which makes the output deterministic.
    """
    S = as_matrix(S, "S")
    if S.shape[0] != S.shape[1]:
        raise NotSymmetric(f"matrix must be square, got shape {S.shape}")
    scale = max(1.0, float(np.max(np.abs(S))))
    if np.max(np.abs(S - S.T)) > config.SYMMETRY_TOL * scale:
        raise NotSymmetric("matrix is not symmetric within tolerance")

    eigenvalues, eigenvectors = np.linalg.eigh((S + S.T) / 2.0)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = eigenvalues[order]
    eigenvectors = eigenvectors[:, order]

    pivots = np.argmax(np.abs(eigenvectors), axis=0)
    signs = np.sign(eigenvectors[pivots, np.arange(eigenvectors.shape[1])])
    signs[signs == 0] = 1.0
    return eigenvalues, eigenvectors * signs


def reg_incomplete_beta(x, a: float, b: float):
    """Regularized incomplete beta function I_x(a, b)."""
    x_arr = np.asarray(x, dtype=float)
    if not (np.isfinite(a) and np.isfinite(b)) or a <= 0 or b <= 0:
        raise DomainError(f"incomplete beta needs a > 0 and b > 0, got a={a}, b={b}")
    if np.any(~np.isfinite(x_arr)) or np.any(x_arr < 0) or np.any(x_arr > 1):
        raise DomainError("incomplete beta needs 0 <= x <= 1")
    result = special.betainc(a, b, x_arr)
    return float(result) if np.ndim(result) == 0 else result


def std_normal_cdf(z):
    """Standard normal CDF Φ(z)."""
    result = special.ndtr(np.asarray(z, dtype=float))
    return float(result) if np.ndim(result) == 0 else result


def f_upper_tail(f_value, df_num: float, df_den: float):
    """P(F > f) for F(df_num, df_den), through the incomplete beta function."""
    f_arr = np.asarray(f_value, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = df_den / (df_den + df_num * f_arr)
    x = np.where(np.isposinf(f_arr), 0.0, np.clip(x, 0.0, 1.0))
    return reg_incomplete_beta(x, df_den / 2.0, df_num / 2.0)


def t_two_sided(t_value, df: float):
    """Two-sided P(|T| >= |t|) for Student's t with df degrees of freedom."""
    t_arr = np.asarray(t_value, dtype=float)
    x = df / (df + t_arr**2)
    return reg_incomplete_beta(np.clip(x, 0.0, 1.0), df / 2.0, 0.5)


@dataclass(frozen=True)
class RngStream:
    """A position in a tree of independent random streams.

    Identical (seed, stream_id) pairs always yield identical sequences.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= self.seed <= _UINT64_MASK:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if not 0 <= self.stream_id <= _UINT64_MASK:
            raise ValueError(f"stream_id must be an unsigned 64-bit integer, got {self.stream_id}")

    def generator(self) -> np.random.Generator:
        """A fresh counter-based generator positioned at the start of this stream."""
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(sequence))


def rng_substream(parent: RngStream, index: int) -> RngStream:
    """Child stream number ``index`` of ``parent``; a pure function of both."""
    if index < 0:
        raise ValueError(f"substream index must be >= 0, got {index}")
    mixer = np.random.SeedSequence(entropy=[parent.seed, parent.stream_id, int(index)])
    stream_id = int(mixer.generate_state(1, dtype=np.uint64)[0])
    return RngStream(seed=parent.seed, stream_id=stream_id)
