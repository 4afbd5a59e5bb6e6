"""Figure rendering for the report-producing commands.

Every command that writes delimited output also renders a matplotlib figure
next to it: training emits loss curves, synthesis emits objective traces,
evaluation emits the ROC curve and the genuine/impostor score distributions.
All rendering uses the Agg backend and writes PNG files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import RocReport, ScoreSet
from .synthesis import SynthesisTrace


def save_loss_curves(path: str, histories: dict[str, list[float]]) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for region_id, history in histories.items():
        ax.plot(np.arange(1, len(history) + 1), history, label=region_id)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean squared error")
    ax.set_yscale("log")
    ax.set_title("cross-spectrum mapping training loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_trace_figure(path: str, traces: dict[str, SynthesisTrace]) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for image_id, trace in traces.items():
        if len(trace.objective):
            ax.plot(np.arange(len(trace.objective)), trace.objective,
                    label=image_id, linewidth=0.9)
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective J")
    ax.set_yscale("log")
    ax.set_title("synthesis objective traces")
    if traces:
        ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_roc_figure(path: str, reports: dict[str, RocReport]) -> None:
    fig, ax = plt.subplots(figsize=(5, 5))
    for label, report in reports.items():
        ax.plot(report.fpr, report.tpr,
                label=f"{label} (AUC {report.auc:.3f}, EER {report.eer:.3f})")
    ax.plot([0, 1], [0, 1], linestyle=":", color="gray", linewidth=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title("verification ROC")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.legend(fontsize=8, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_score_histogram(path: str, scores: ScoreSet, title: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    bins = np.linspace(-1.0, 1.0, 41)
    ax.hist(scores.genuine, bins=bins, alpha=0.6, label="genuine", density=True)
    ax.hist(scores.impostor, bins=bins, alpha=0.6, label="impostor", density=True)
    ax.set_xlabel("cosine similarity")
    ax.set_ylabel("density")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
