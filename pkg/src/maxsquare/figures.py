"""Matplotlib rendering for the report paths.

Every CSV the CLI emits gets a companion PNG: the gradient-magnitude curves,
the per-class diagnostic scatter panels, the confidence-split bars, and the
training loss curves.  CSVs remain the machine-readable contract; the figures
are for eyeballs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def render_curves(grid, entropy, maxsquare, scaled, gamma, path) -> None:
    """Gradient magnitude versus confidence for the three binary losses."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(grid, entropy, label="entropy", color="tab:red")
    ax.plot(grid, maxsquare, label="maximum squares", color="tab:blue")
    ax.plot(grid, scaled, label=f"scaled entropy ($\\gamma$={gamma:g})",
            color="tab:green", linestyle="--")
    ax.set_xlabel("predicted probability p")
    ax.set_ylabel("|d loss / d p|")
    ax.set_title("Gradient magnitude of the binary target losses")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def _scatter_defined(ax, xs, ys, xlabel, ylabel, logx=False):
    pts = [(x, y, c) for c, (x, y) in enumerate(zip(xs, ys))
           if x is not None and y is not None]
    if pts:
        px, py, labels = zip(*pts)
        ax.scatter(px, py, color="tab:blue")
        for x, y, c in pts:
            ax.annotate(str(c), (x, y), textcoords="offset points",
                        xytext=(4, 4), fontsize=8)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)


def render_report(report, path, accuracies=None) -> None:
    """Per-class diagnostics: confidence vs IoU and frequency vs IoU.

    ``accuracies`` optionally adds a confidence-split bar panel with
    (overall, top, bottom) accuracy.
    """
    panels = 3 if accuracies else 2
    fig, axes = plt.subplots(1, panels, figsize=(4.6 * panels, 4.0))
    _scatter_defined(
        axes[0], report.mean_max_prob, report.iou,
        "mean max probability", "IoU",
    )
    freq = [f if f and f > 0 else None for f in report.frequency]
    _scatter_defined(axes[1], freq, report.iou, "class frequency", "IoU", logx=True)
    if accuracies:
        names = list(accuracies)
        values = [accuracies[k] for k in names]
        axes[2].bar(names, values, color=["tab:gray", "tab:green", "tab:orange"][:len(names)])
        axes[2].set_ylim(0.0, 1.0)
        axes[2].set_ylabel("accuracy")
        axes[2].grid(alpha=0.3, axis="y")
    fig.suptitle("Per-class adaptation diagnostics")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_loss_log(log, path) -> None:
    """Total, source-CE, and target loss components over iterations."""
    its = [row.iteration for row in log]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(its, [r.loss_total for r in log], label="total", color="tab:blue")
    ax.plot(its, [r.loss_ce for r in log], label="source CE", color="tab:orange")
    ax.plot(its, [r.loss_target for r in log], label="target loss", color="tab:green")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
