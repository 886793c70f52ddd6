"""
Visualization Module
Loss curves from the metrics log and per-task metric bars, rendered to PNG
with matplotlib's non-interactive backend.
"""

import logging
import re
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")
from matplotlib.figure import Figure  # noqa: E402

from mgmkit.heartofitall.errors import ArgumentError  # noqa: E402

logger = logging.getLogger(__name__)

_METRIC_LINE = re.compile(r"^step (\d+) loss (\S+) task (\S+)$")


def parse_metrics_log(path: Union[str, Path]) -> Dict[str, Tuple[List[int], List[float]]]:
    """task -> (steps, losses) from a metrics log; other lines are skipped."""
    curves: Dict[str, Tuple[List[int], List[float]]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        m = _METRIC_LINE.match(line.strip())
        if not m:
            continue
        steps, losses = curves.setdefault(m.group(3), ([], []))
        steps.append(int(m.group(1)))
        losses.append(float(m.group(2)))
    return curves


def plot_loss_curve(log_path: Union[str, Path], png: Union[str, Path], title: str = "Training loss") -> Figure:
    curves = parse_metrics_log(log_path)
    if not curves:
        raise ArgumentError(f"{log_path}: no metric lines to plot")
    fig = Figure(figsize=(8, 5))
    ax = fig.add_subplot(111)
    for task, (steps, losses) in sorted(curves.items()):
        ax.plot(steps, losses, label=task, linewidth=1.0)
    ax.set_title(title, fontsize=14, fontweight='bold')
    ax.set_xlabel('Step')
    ax.set_ylabel('Masked cross-entropy')
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(png, dpi=120)
    logger.info("wrote loss curve %s", png)
    return fig


def plot_task_metrics(results: Sequence, png: Union[str, Path]) -> Figure:
    """Bar charts of symbol error rate and speaker similarity per task (TaskEvaluation objects)."""
    if not results:
        raise ArgumentError("no evaluation results to plot")
    fig = Figure(figsize=(10, 5))
    tasks = [r.task for r in results]

    ax1 = fig.add_subplot(121)
    errors = [r.symbol_error_rate for r in results]
    bars1 = ax1.bar(tasks, errors, color='orange')
    ax1.set_title('Symbol error rate', fontweight='bold')
    ax1.grid(axis='y', alpha=0.3)
    for bar, v in zip(bars1, errors):
        ax1.text(bar.get_x() + bar.get_width() / 2, bar.get_height(), f'{v:.3f}', ha='center', va='bottom', fontsize=8)

    ax2 = fig.add_subplot(122)
    sims = [r.speaker_similarity for r in results]
    bars2 = ax2.bar(tasks, sims, color='green')
    ax2.set_title('Speaker similarity', fontweight='bold')
    ax2.set_ylim(min(0.0, min(sims)), 1.0)
    ax2.grid(axis='y', alpha=0.3)
    for bar, v in zip(bars2, sims):
        ax2.text(bar.get_x() + bar.get_width() / 2, bar.get_height(), f'{v:.3f}', ha='center', va='bottom', fontsize=8)

    fig.suptitle('Per-task evaluation', fontsize=14, fontweight='bold')
    fig.tight_layout(rect=[0, 0, 1, 0.95])
    fig.savefig(png, dpi=120)
    logger.info("wrote metric bars %s", png)
    return fig
