"""Render the comparison report as a figure next to the delimited output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import CONFIG_DISPLAY_NAMES, EvaluationReport


def render_report_figure(report: EvaluationReport, path: str | Path, dpi: int = 150) -> Path:
    """Write a grouped bar chart of the report metrics to an image file.

    Recall percentages share the left axis; the 1-10 satisfaction mean (when
    present) is drawn as markers on a twin axis.
    """
    path = Path(path)
    configs = report.ordered_configs()
    labels = [CONFIG_DISPLAY_NAMES[c] for c in configs]
    fact = [report.rows[c].fact_recall_pct for c in configs]
    precise = [report.rows[c].precise_data_recall_pct for c in configs]
    satisfaction = [report.rows[c].user_satisfaction_mean for c in configs]

    x = np.arange(len(configs))
    width = 0.35
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.bar(x - width / 2, fact, width, label="Fact Recall (%)", color="#4878cf")
    ax.bar(x + width / 2, precise, width, label="Precise Data Recall (%)", color="#6acc65")
    ax.set_ylabel("Recall (%)")
    ax.set_ylim(0, 105)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=12, ha="right", fontsize=9)

    if any(s is not None for s in satisfaction):
        ax2 = ax.twinx()
        xs = [i for i, s in enumerate(satisfaction) if s is not None]
        ys = [s for s in satisfaction if s is not None]
        ax2.plot(xs, ys, "o--", color="#d65f5f", label="User Satisfaction (1-10)")
        ax2.set_ylabel("Satisfaction (1-10)")
        ax2.set_ylim(0, 10.5)
        handles1, labels1 = ax.get_legend_handles_labels()
        handles2, labels2 = ax2.get_legend_handles_labels()
        ax.legend(handles1 + handles2, labels1 + labels2, loc="upper left", fontsize=8)
    else:
        ax.legend(loc="upper left", fontsize=8)

    ax.set_title("Response generation comparison")
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
    return path
