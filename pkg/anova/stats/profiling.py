"""Per-run stage timings, operation counters and collected warnings.

State is thread-local: a run owns the profile of the thread that started
it. Work fanned out to joblib threads goes through run_isolated and
merge_profile so its warnings and counters land in the caller's profile.
"""

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from threading import local
from typing import Any, Callable, Dict, List, Optional, Tuple, TypeVar

logger = logging.getLogger(__name__)

COUNTERS = ("permutations", "redraws", "imputations", "fits", "warnings")

_state = local()

T = TypeVar("T")


@dataclass
class StageRecord:
    name: str
    metadata: Dict[str, Any] = field(default_factory=dict)
    duration_ms: float = 0.0
    # Counter increments made while the stage was open
    counts: Dict[str, int] = field(default_factory=dict)


@dataclass
class RunProfile:
    stages: List[StageRecord] = field(default_factory=list)
    counts: Dict[str, int] = field(default_factory=lambda: dict.fromkeys(COUNTERS, 0))
    warnings: List[str] = field(default_factory=list)
    wall_start: Optional[float] = None


def _profile() -> RunProfile:
    if not hasattr(_state, "profile"):
        _state.profile = RunProfile()
    return _state.profile


def clear_profile() -> None:
    """Start an empty profile on this thread."""
    _state.profile = RunProfile()


def start_wall_clock() -> None:
    _profile().wall_start = time.perf_counter()


def get_wall_clock_ms() -> float:
    start = _profile().wall_start
    return 0.0 if start is None else (time.perf_counter() - start) * 1000


def increment_counter(name: str, amount: int = 1) -> None:
    """Add to one of COUNTERS; other names are ignored."""
    counts = _profile().counts
    if name in counts:
        counts[name] += amount


def record_warning(message: str, log: Optional[logging.Logger] = None) -> None:
    """Log a run warning and keep it for the run manifest."""
    (log or logger).warning(message)
    _profile().warnings.append(message)
    increment_counter("warnings")


def get_warnings() -> List[str]:
    return list(_profile().warnings)


def run_isolated(task: Callable[[], T]) -> Tuple[T, List[str], Dict[str, int]]:
    """Run ``task`` against a fresh profile on this thread.

    Returns the task's result with the warnings and counter totals it
    recorded; the thread's previous profile is restored afterwards.
    """
    outer = getattr(_state, "profile", None)
    _state.profile = inner = RunProfile()
    try:
        result = task()
    finally:
        if outer is None:
            del _state.profile
        else:
            _state.profile = outer
    return result, inner.warnings, inner.counts


def merge_profile(warnings: List[str], counts: Dict[str, int]) -> None:
    """Fold warnings and counts captured by run_isolated into this thread's profile."""
    profile = _profile()
    profile.warnings.extend(warnings)
    for name, amount in counts.items():
        if name in profile.counts:
            profile.counts[name] += amount


@contextmanager
def profile_stage(name: str, metadata: Optional[Dict] = None):
    """Time a pipeline stage; the record is kept even when the body raises."""
    profile = _profile()
    record = StageRecord(name, dict(metadata or {}))
    before = dict(profile.counts)
    start = time.perf_counter()
    try:
        yield record
    finally:
        record.duration_ms = (time.perf_counter() - start) * 1000
        record.counts = {k: v - before[k] for k, v in profile.counts.items() if v != before[k]}
        profile.stages.append(record)
        logger.debug(f"[PROFILE] {name}: {record.duration_ms:.1f}ms {record.metadata or ''}".rstrip())


def get_profile_summary() -> Dict[str, Any]:
    """JSON-ready summary: stages in run order, totals and counters."""
    profile = _profile()
    total = sum(s.duration_ms for s in profile.stages)
    slowest = max(profile.stages, key=lambda s: s.duration_ms).name if profile.stages else None
    return {
        "stages": [
            {"name": s.name, "duration_ms": round(s.duration_ms, 1), "metadata": s.metadata, "counts": s.counts}
            for s in profile.stages
        ],
        "total_ms": round(total, 1),
        "wall_ms": round(get_wall_clock_ms(), 1),
        "slowest": slowest,
        "counters": dict(profile.counts),
    }


def log_profile_table() -> str:
    """Stage timings and counters as a fixed-width text table."""
    summary = get_profile_summary()
    if not summary["stages"]:
        return "No profiling data collected."

    rule = "-" * 70
    total = summary["total_ms"]
    lines = ["", "=" * 70, "RUN PROFILE", "=" * 70, f"{'Stage':<35} {'Duration (ms)':>15} {'%':>8}", rule]
    for stage in summary["stages"]:
        share = stage["duration_ms"] / total * 100 if total > 0 else 0.0
        flag = " <<<" if stage["name"] == summary["slowest"] else ""
        lines.append(f"{stage['name']:<35} {stage['duration_ms']:>15.1f} {share:>7.1f}%{flag}")
    lines += [rule, f"{'TOTAL (stages)':<35} {total:>15.1f}", f"{'WALL CLOCK':<35} {summary['wall_ms']:>15.1f}", ""]
    lines += [f"  {name.capitalize() + ':':<15} {count}" for name, count in summary["counters"].items()]
    return "\n".join(lines + [""])
