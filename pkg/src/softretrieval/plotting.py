"""Report figures rendered next to the evaluation document."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import EvaluationReport  # noqa: E402

# fixed metadata keeps PNG bytes reproducible across runs
_PNG_META = {"Software": None}


def _save(fig, path: str) -> str:
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_difficulty(report: EvaluationReport, path: str) -> str:
    levels = [lv.difficulty for lv in report.levels]
    fig, (ax_iou, ax_frac) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_iou.bar(levels, [lv.average_iou for lv in report.levels], color="#4c72b0")
    ax_iou.set_ylabel("average IoU")
    ax_frac.bar(levels, [lv.fraction_iou_ge_04 for lv in report.levels], color="#dd8452")
    ax_frac.set_ylabel("fraction of frames with IoU >= 0.4")
    for ax in (ax_iou, ax_frac):
        ax.set_ylim(0, 1)
        ax.set_xlabel("difficulty")
    fig.tight_layout()
    return _save(fig, path)


def plot_sequence_tpr(report: EvaluationReport, path: str) -> str:
    names = [s.sequence_id for s in report.sequences]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.5 * len(names) + 2), 3.5))
    ax.bar(range(len(names)), [s.tpr_percent for s in report.sequences], color="#55a868")
    ax.set_xticks(range(len(names)), names, rotation=60, ha="right")
    ax.set_ylim(0, 100)
    ax.set_ylabel(f"TPR (%) at IoU >= {report.theta:g}")
    fig.tight_layout()
    return _save(fig, path)


def plot_iou_traces(report: EvaluationReport, path: str) -> str:
    fig, ax = plt.subplots(figsize=(8, 3.5))
    for s in report.sequences:
        frames = sorted(s.frame_ious)
        ax.plot(frames, [s.frame_ious[f] for f in frames], lw=1, label=s.sequence_id)
    ax.axhline(0.4, color="grey", ls="--", lw=0.8)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("frame")
    ax.set_ylabel("IoU")
    if len(report.sequences) <= 10:
        ax.legend(fontsize=7, loc="lower left")
    fig.tight_layout()
    return _save(fig, path)


def write_report_figures(report: EvaluationReport, out_dir: str | os.PathLike) -> list[str]:
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    return [
        plot_difficulty(report, os.path.join(out_dir, "difficulty.png")),
        plot_sequence_tpr(report, os.path.join(out_dir, "sequence_tpr.png")),
        plot_iou_traces(report, os.path.join(out_dir, "iou_per_frame.png")),
    ]
