"""SVG renderings of outlier screens and simulation curves."""

import io
import logging
from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from anova.io import atomic_write_text  # noqa: E402
from anova.stats.outlier import OutlierReport  # noqa: E402

logger = logging.getLogger(__name__)

# Fixed metadata keeps repeated renderings byte-identical.
_SVG_METADATA = {"Date": None, "Creator": None}


def _save(fig, path):
    buffer = io.StringIO()
    plt.rcParams["svg.hashsalt"] = "factorlab"
    fig.savefig(buffer, format="svg", metadata=_SVG_METADATA)
    plt.close(fig)
    logger.debug(f"Wrote plot {path}")
    return atomic_write_text(path, buffer.getvalue())


def outlier_scatter(report: OutlierReport, path, title: str = "Residual outlier screen"):
    """D against Q, with both control limits and flagged observations labelled."""
    fig, ax = plt.subplots(figsize=(6, 5))
    frame = report.to_frame()
    normal = frame[~frame["flagged"]]
    flagged = frame[frame["flagged"]]
    ax.scatter(normal["D"], normal["Q"], s=16, color="tab:blue", label="observations")
    ax.scatter(flagged["D"], flagged["Q"], s=24, color="tab:red", label="flagged")
    for _, row in flagged.iterrows():
        ax.annotate(str(row["observation_id"]), (row["D"], row["Q"]), fontsize=8)
    ax.axvline(report.d_limit, color="gray", linestyle="--", linewidth=1)
    ax.axhline(report.q_limit, color="gray", linestyle="--", linewidth=1)
    ax.set_xlabel("D statistic")
    ax.set_ylabel("Q statistic")
    ax.set_title(title)
    ax.legend(loc="upper left", fontsize=8)
    return _save(fig, path)


def line_plot(
    frame: pd.DataFrame,
    x: str,
    y: str,
    group: str,
    path,
    title: str = "",
    band: Optional[str] = None,
    ylabel: Optional[str] = None,
):
    """One line per ``group`` value; ``band`` names a column of ± widths to shade."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, rows in frame.groupby(group, sort=False):
        rows = rows.sort_values(x)
        ax.plot(rows[x], rows[y], marker="o", markersize=3, label=str(name))
        if band is not None:
            ax.fill_between(rows[x], rows[y] - rows[band], rows[y] + rows[band], alpha=0.15)
    ax.set_xlabel(x)
    ax.set_ylabel(ylabel or y)
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    return _save(fig, path)
