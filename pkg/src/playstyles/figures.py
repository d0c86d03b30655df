"""Figure rendering for the report outputs.

Each function draws one of the plot-ready report datasets to an image
file next to its CSV.  Rendering is a convenience layer on top of the
delimited outputs, which remain the canonical artifacts.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .analyze import ClusterReport, PlayerProfile, SizeDistribution, StabilityRecord

KIND_COLORS = {
    "intercept": "purple",
    "rank": "red",
    "role": "green",
    "game_type": "cyan",
    "map": "blue",
}


def plot_cluster_sizes(dist: SizeDistribution, path):
    """Bar chart of cluster sizes (largest first)."""
    fig, ax = plt.subplots(figsize=(7, 4))
    if dist.sizes:
        ax.bar(range(1, len(dist.sizes) + 1), dist.sizes, color="steelblue")
    ax.set_xlabel("cluster (descending size)")
    ax.set_ylabel("players")
    ax.set_title(f"{dist.cluster_count} clusters of at least "
                 f"{dist.sizes[-1] if dist.sizes else 0} players")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_cluster_coefficients(reports: list[ClusterReport], path):
    """Per-cluster coefficient bars, colored by covariate kind."""
    if not reports:
        return
    fig, axes = plt.subplots(len(reports), 1,
                             figsize=(9, 2.4 * len(reports)), sharex=True)
    if len(reports) == 1:
        axes = [axes]
    for ax, report in zip(axes, reports):
        values = [v for _, _, v in report.coefficients]
        colors = [KIND_COLORS[k] for k, _, _ in report.coefficients]
        ax.bar(range(len(values)), values, color=colors)
        ax.axhline(0.0, color="black", linewidth=0.5)
        ax.set_ylabel(f"cluster {report.cluster_id}\n"
                      f"n={report.size} ({report.pattern})", fontsize=8)
    axes[-1].set_xlabel("coefficient index")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_profiles(profiles: list[PlayerProfile], path):
    """Quartile summaries per category for a handful of players."""
    if not profiles:
        return
    fig, axes = plt.subplots(len(profiles), 1,
                             figsize=(10, 2.6 * len(profiles)), sharex=False)
    if len(profiles) == 1:
        axes = [axes]
    for ax, profile in zip(axes, profiles):
        cats = profile.categories
        xs = range(len(cats))
        for x, c in zip(xs, cats):
            color = KIND_COLORS.get(c.kind, "gray") if c.kind != "overall" else "red"
            ax.vlines(x, c.q1, c.q3, color=color, linewidth=5, alpha=0.6)
            ax.plot(x, c.median, "o", color=color, markersize=3)
            if c.significant:
                ax.plot(x, c.q3, "*", color="black", markersize=7)
        ax.set_xticks(list(xs))
        ax.set_xticklabels([c.name for c in cats], rotation=90, fontsize=6)
        ax.set_ylabel(profile.player_id, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_visit_distribution(records: list[StabilityRecord], path):
    """Histogram of the number of distinct clusters visited per player."""
    counts: dict[int, int] = {}
    for r in records:
        counts[r.clusters_visited] = counts.get(r.clusters_visited, 0) + 1
    fig, ax = plt.subplots(figsize=(6, 4))
    if counts:
        ks = sorted(counts)
        ax.bar(ks, [counts[k] for k in ks], color="darkorange")
    ax.set_xlabel("clusters visited")
    ax.set_ylabel("players")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
