"""CSV ingestion with line-numbered diagnostics, and atomic report writing."""

import hashlib
import json
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Optional

import numpy as np
import pandas as pd

from anova.stats.config import config
from anova.stats.design import DesignSpec
from anova.stats.exceptions import DataFormatError
from anova.stats.glm import ResponseMatrix

logger = logging.getLogger(__name__)

MISSING_TOKENS = {"", "na"}
# Line 1 of every input file is the header.
_FIRST_DATA_LINE = 2


def _read_table(path) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise DataFormatError(f"{path}: file not found")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataFormatError(f"{path}: cannot parse CSV ({exc})") from None

    names = [str(c).strip() for c in frame.columns]
    if not names or any(n == "" or n.startswith("Unnamed:") for n in names):
        raise DataFormatError(f"{path}: line 1: every column needs a header name")
    if len(set(names)) != len(names):
        raise DataFormatError(f"{path}: line 1: duplicate column names")
    if frame.empty:
        raise DataFormatError(f"{path}: no data rows")
    frame.columns = names
    return frame


def read_data_csv(path) -> ResponseMatrix:
    """Responses from a CSV: header = response names, empty or NA = missing."""
    frame = _read_table(path)
    values = np.empty(frame.shape)
    mask = np.zeros(frame.shape, dtype=bool)
    for j, name in enumerate(frame.columns):
        for i, raw in enumerate(frame[name]):
            token = raw.strip()
            if token.lower() in MISSING_TOKENS:
                mask[i, j] = True
                values[i, j] = np.nan
                continue
            try:
                number = float(token)
            except ValueError:
                raise DataFormatError(
                    f"{path}: line {i + _FIRST_DATA_LINE}, column '{name}': cannot parse '{token}' as a number"
                ) from None
            if not math.isfinite(number):
                raise DataFormatError(
                    f"{path}: line {i + _FIRST_DATA_LINE}, column '{name}': non-finite value '{token}'"
                )
            values[i, j] = number

    empty = np.flatnonzero(mask.all(axis=0))
    if empty.size:
        raise DataFormatError(f"{path}: column '{frame.columns[empty[0]]}' has no observed values")
    logger.debug(f"Read {frame.shape[0]}x{frame.shape[1]} responses from {path} ({int(mask.sum())} missing)")
    return ResponseMatrix(values, mask, tuple(frame.columns))


def read_design_csv(path, formula: Optional[str] = None) -> DesignSpec:
    """Design from a CSV of level labels, one column per factor."""
    frame = _read_table(path)
    for name in frame.columns:
        blank = np.flatnonzero(frame[name].str.strip() == "")
        if blank.size:
            raise DataFormatError(
                f"{path}: line {int(blank[0]) + _FIRST_DATA_LINE}, column '{name}': empty level label"
            )
    return DesignSpec.from_frame(frame, formula)


def check_alignment(data_path, n_data: int, design_path, n_design: int) -> None:
    if n_data != n_design:
        raise DataFormatError(
            f"row count mismatch: {data_path} has {n_data} observations, {design_path} has {n_design}"
        )


def file_checksum(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def format_number(value: float, digits: int = config.SIGNIFICANT_DIGITS) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "NA"
    if math.isinf(value):
        return "Inf" if value > 0 else "-Inf"
    return f"{value:.{digits}g}"


def format_p(p: float, floor: Optional[float] = None) -> str:
    """p with 12 significant digits, or "<floor" at the permutation floor 1/(B+1)."""
    if floor is not None and p <= floor * (1 + 1e-12):
        return f"<{format_number(floor)}"
    return format_number(p)


def atomic_write_text(path, text: str) -> Path:
    """Write through a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    handle, temp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(handle, "w", encoding="utf-8", newline="") as out:
            out.write(text)
        os.replace(temp, path)
    except BaseException:
        if os.path.exists(temp):
            os.unlink(temp)
        raise
    return path


def write_csv(frame: pd.DataFrame, path, index: bool = False) -> Path:
    text = frame.to_csv(index=index, float_format=f"%.{config.SIGNIFICANT_DIGITS}g", na_rep="NA", lineterminator="\n")
    return atomic_write_text(path, text)


def _json_default(value: Any):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    if hasattr(value, "value"):
        return value.value
    raise TypeError(f"cannot serialise {type(value).__name__}")


def write_json(payload: Any, path) -> Path:
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def read_frame(path) -> pd.DataFrame:
    """Read back a CSV written by ``write_csv``."""
    return pd.read_csv(path, keep_default_na=False, na_values=["NA"])
