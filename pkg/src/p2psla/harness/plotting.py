"""Bar charts of aggregate metrics, one PNG per metric.

Uses the object-oriented Figure API with the Agg canvas, so no global pyplot
state is touched and no display is needed. PNG metadata is stripped to keep
reruns byte-identical.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Dict, List, Sequence, Union

import matplotlib
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

FIGURE_DIR = "figures"

# (metric column, axis label)
FIGURE_METRICS = (
    ("detection_ratio", "detection ratio"),
    ("mean_detection_lag", "mean detection lag [rounds]"),
    ("covered_destinations_per_device_per_round", "destinations with a result per device-round"),
    ("false_virtual_detections", "false virtual detections per run"),
    ("messages_total", "overlay messages per run"),
)

_STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _bar_figure(names: Sequence[str], means: Sequence[float], sds: Sequence[float], ylabel: str, title: str) -> Figure:
    fig = Figure(figsize=(4.2, 3.0), dpi=120)
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(1, 1, 1)
    xs = list(range(len(names)))
    heights = [0.0 if math.isnan(m) else m for m in means]
    errs = [0.0 if math.isnan(s) else s for s in sds]
    ax.bar(xs, heights, yerr=errs, capsize=3, color="0.55", edgecolor="0.2", linewidth=0.6)
    ax.set_xticks(xs)
    ax.set_xticklabels(names)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    return fig


def render_figures(aggregate: Sequence[Dict[str, object]], out_dir: Union[str, Path], title: str = "") -> List[Path]:
    """Write one bar chart per metric in FIGURE_METRICS; returns the written paths."""
    if not aggregate:
        return []
    fig_dir = Path(out_dir) / FIGURE_DIR
    fig_dir.mkdir(parents=True, exist_ok=True)
    names = [str(row["strategy"]) for row in aggregate]
    written = []
    with matplotlib.rc_context(_STYLE):
        for metric, label in FIGURE_METRICS:
            means = [float(row[f"{metric}_mean"]) for row in aggregate]
            sds = [float(row[f"{metric}_sd"]) for row in aggregate]
            fig = _bar_figure(names, means, sds, label, title)
            path = fig_dir / f"{metric}.png"
            fig.savefig(path, format="png", metadata={"Software": None})
            written.append(path)
    return written
