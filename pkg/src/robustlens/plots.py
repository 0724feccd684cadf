"""SVG figures: confidence panels (left) and separability panels (right)."""

from __future__ import annotations

import matplotlib

matplotlib.use("svg")
import matplotlib.pyplot as plt
import numpy as np

from .analysis import ConfidenceSummary, SeparabilityCurve


def confidence_axis(ax, summary: ConfidenceSummary, label: str | None = None):
    sev = [e.severity for e in summary.entries]
    means = [e.mean for e in summary.entries]
    stds = [e.std for e in summary.entries]
    ax.errorbar(sev, means, yerr=stds, marker="o", capsize=3, label=label)
    ax.axhline(0.0, color="gray", lw=0.8, ls="--")
    for e in summary.entries:
        ax.annotate(
            f"{e.prob_positive:.2f}",
            (e.severity, ax.get_ylim()[1]),
            ha="center",
            fontsize=7,
            annotation_clip=False,
        )
    ax.set_xlabel("filter severity index")
    ax.set_ylabel("filter effect (posterior)")


def separability_axis(ax, curve: SeparabilityCurve):
    data = [curve.ks[s] for s in range(curve.n_severities)]
    ax.boxplot(data, positions=list(range(curve.n_severities)), widths=0.6)
    for s in range(1, curve.n_severities):
        p = curve.p_values[s]
        if not np.isnan(p):
            ax.annotate(f"{p:.2g}", (s, ax.get_ylim()[1]), ha="center", fontsize=7, annotation_clip=False)
    ax.set_xlabel("filter severity index")
    ax.set_ylabel("KS separability")


def subgroup_figure(
    summary: ConfidenceSummary, curve: SeparabilityCurve | None, title: str, path: str
) -> None:
    ncols = 2 if curve is not None else 1
    fig, axes = plt.subplots(1, ncols, figsize=(5 * ncols, 3.5))
    axes = np.atleast_1d(axes)
    confidence_axis(axes[0], summary)
    if curve is not None:
        separability_axis(axes[1], curve)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def pooled_vs_subgroup_figure(
    pooled: ConfidenceSummary, by_subgroup: dict[int, ConfidenceSummary], path: str
) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    confidence_axis(ax, pooled, label="pooled")
    for g, cs in sorted(by_subgroup.items()):
        sev = [e.severity for e in cs.entries]
        ax.errorbar(sev, [e.mean for e in cs.entries], yerr=[e.std for e in cs.entries],
                    marker="s", capsize=3, label=f"subgroup {g}")
    ax.legend()
    fig.suptitle("pooled vs subgroup filter effects")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
