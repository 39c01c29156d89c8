"""Tunable defaults for the analysis library, overridable from the environment."""

import os
from typing import List, Tuple


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        return default


def _env_float(name: str, default: float) -> float:
    raw = os.environ.get(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return float(raw)
    except ValueError:
        return default


class StatsConfig:
    """Defaults for inference, imputation and diagnostics. All values are tunable."""

    # Permutation testing
    N_PERMUTATIONS: int = _env_int("FACTORLAB_PERMUTATIONS", 999)
    MIN_PERMUTATIONS: int = 99
    SEED: int = _env_int("FACTORLAB_SEED", 0)
    ALPHA: float = _env_float("FACTORLAB_ALPHA", 0.05)
    PCMR_MAX_REDRAWS: int = 100

    # Thread count for permutation / replicate loops (0 = all cores)
    N_JOBS: int = _env_int("FACTORLAB_THREADS", 0)

    # Multiple-testing correction
    STOREY_LAMBDA: float = 0.5

    # Trimmed score regression
    TSR_COMPONENTS: int = 2
    TSR_TOL: float = 1e-6
    TSR_MAX_ITER: int = 500

    # Box-Cox profile likelihood search
    BOXCOX_GRID_MIN: float = -3.0
    BOXCOX_GRID_MAX: float = 3.0
    BOXCOX_GRID_STEP: float = 0.01
    BOXCOX_REFINE_TOL: float = 1e-4
    BOXCOX_MIN_OBS: int = 10

    # Residual outlier diagnostics
    OUTLIER_ALPHA: float = _env_float("FACTORLAB_OUTLIER_ALPHA", 0.01)
    VARIANCE_FRACTION: float = 0.70

    # Numerical tolerances
    RANK_TOL: float = 1e-10
    SYMMETRY_TOL: float = 1e-12

    # Normality gate
    NORMALITY_MIN_OBS: int = 8
    WILCOXON_EXACT_MAX_N: int = 12

    # Output formatting
    SIGNIFICANT_DIGITS: int = 12


# Global config instance (can be modified for testing)
config = StatsConfig()


def validate_config() -> Tuple[bool, List[str]]:
    """Return (is_valid, errors) for the configured defaults."""
    errors = []

    if config.N_PERMUTATIONS < config.MIN_PERMUTATIONS:
        errors.append(
            f"FACTORLAB_PERMUTATIONS must be >= {config.MIN_PERMUTATIONS}, "
            f"got {config.N_PERMUTATIONS}"
        )

    if not 0 < config.ALPHA < 1:
        errors.append(f"FACTORLAB_ALPHA must be in (0, 1), got {config.ALPHA}")

    if not 0 < config.OUTLIER_ALPHA < 1:
        errors.append(
            f"FACTORLAB_OUTLIER_ALPHA must be in (0, 1), got {config.OUTLIER_ALPHA}"
        )

    if config.SEED < 0 or config.SEED >= 2**64:
        errors.append(f"FACTORLAB_SEED must be an unsigned 64-bit integer, got {config.SEED}")

    if config.N_JOBS < 0:
        errors.append(f"FACTORLAB_THREADS must be >= 0, got {config.N_JOBS}")

    return len(errors) == 0, errors


def resolve_n_jobs(n_jobs: int | None = None) -> int:
    """Map a thread count (None/0 = configured default / all cores) to a joblib n_jobs."""
    value = config.N_JOBS if n_jobs is None else n_jobs
    return -1 if value == 0 else value
