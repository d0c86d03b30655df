"""Reports over a finished sampler run: model fit, clusters, stability.

Everything here is read-only over the trace, the fitted models, and the
encoded rows.  Outputs are delimited plot-ready files plus JSON; figure
rendering lives in :mod:`playstyles.figures`.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .dpcluster import PartitionState, SamplerTrace
from .ingest import CovariateVocabulary, DesignRow
from .regress import GlobalFit, HoldoutSplit, PlayerStyle, predict, responses, rmse

logger = logging.getLogger(__name__)

COEFFICIENT_DISPLAY_EPS = 1e-12


@dataclass
class ClusterReport:
    """One cluster's labeled mean vector, sized and ranked for reporting."""

    cluster_id: int
    size: int
    share: float
    coefficients: list[tuple[str, str, float]]
    top: list[tuple[str, str, float]]
    pattern: str


@dataclass
class SizeDistribution:
    sizes: list[int]
    cluster_count: int
    histogram: list[tuple[int, int]]
    top_m: int
    top_share: float
    n_players: int


@dataclass
class StabilityRecord:
    player_id: str
    clusters_visited: int
    max_residency_fraction: float
    max_pair_transitions: int
    stable: bool
    hybrid: bool
    label: str


@dataclass
class CategorySummary:
    kind: str
    name: str
    count: int
    mean: float
    q1: float
    median: float
    q3: float
    significant: bool | None


@dataclass
class PlayerProfile:
    player_id: str
    categories: list[CategorySummary]
    absent: list[tuple[str, str]]


def evaluate_models(
    split: HoldoutSplit,
    global_fit: GlobalFit,
    styles: dict[str, PlayerStyle],
    map_state: PartitionState,
) -> dict[str, float]:
    """Holdout RMSE of three predictors plus the coefficient-reduction ratio.

    The predictors are (a) the train-set mean response as a constant,
    (b) the global fit plus each player's own offsets, and (c) the global
    fit plus the player's cluster mean from the MAP partition.
    """
    if not split.test:
        raise ValueError("empty test set")
    if not split.train:
        raise ValueError("empty training set")

    actuals = responses(split.test)
    train_mean = float(np.mean(responses(split.train)))
    alpha = global_fit.alpha

    preds_ols = []
    preds_clustered = []
    for row in split.test:
        style = styles.get(row.player_id)
        if style is None:
            raise ValueError(f"no fitted style for player {row.player_id}")
        cid = map_state.assignment.get(row.player_id)
        if cid is None:
            raise ValueError(f"player {row.player_id} missing from MAP partition")
        preds_ols.append(predict(alpha + style.beta, row))
        preds_clustered.append(predict(alpha + map_state.clusters[cid].mean, row))

    return {
        "rmse_global_mean": rmse([train_mean] * len(split.test), actuals),
        "rmse_ols": rmse(preds_ols, actuals),
        "rmse_clustered": rmse(preds_clustered, actuals),
        "unique_coeff_ratio": map_state.n_clusters / map_state.n_players,
    }


def cluster_size_distribution(map_state: PartitionState, min_size: int = 2,
                              top_m: int = 30) -> SizeDistribution:
    """Descending sizes of clusters holding at least ``min_size`` players."""
    sizes = sorted((c.size for c in map_state.clusters.values()
                    if c.size >= min_size), reverse=True)
    hist: dict[int, int] = {}
    for s in sizes:
        hist[s] = hist.get(s, 0) + 1
    all_sizes = sorted((c.size for c in map_state.clusters.values()), reverse=True)
    top_players = sum(all_sizes[:top_m])
    n = map_state.n_players
    return SizeDistribution(
        sizes=sizes,
        cluster_count=len(sizes),
        histogram=sorted(hist.items(), reverse=True),
        top_m=top_m,
        top_share=top_players / n if n else 0.0,
        n_players=n,
    )


def _pattern_label(coefficients: list[tuple[str, str, float]]) -> str:
    dominant = max(coefficients, key=lambda c: abs(c[2]))
    if abs(dominant[2]) < COEFFICIENT_DISPLAY_EPS:
        return "neutral"
    return {
        "intercept": "all-star",
        "rank": "rank-driven",
        "role": "role-specialist",
        "game_type": "game-specialist",
        "map": "map-specialist",
    }[dominant[0]]


def top_cluster_reports(map_state: PartitionState, vocab: CovariateVocabulary,
                        m: int = 4, top_n: int = 10) -> list[ClusterReport]:
    """Labeled coefficient reports for the ``m`` largest clusters."""
    if m > map_state.n_clusters:
        logger.warning("asked for %d cluster reports but only %d clusters exist",
                       m, map_state.n_clusters)
    order = sorted(map_state.clusters.values(), key=lambda c: (-c.size, c.id))
    columns = vocab.columns()
    n = map_state.n_players
    reports = []
    for cluster in order[:m]:
        coefficients = [(kind, name, float(v))
                        for (kind, name), v in zip(columns, cluster.mean)]
        ranked = sorted(coefficients, key=lambda c: -abs(c[2]))
        top = [c for c in ranked[:top_n] if abs(c[2]) >= COEFFICIENT_DISPLAY_EPS]
        reports.append(ClusterReport(
            cluster_id=cluster.id,
            size=cluster.size,
            share=cluster.size / n if n else 0.0,
            coefficients=coefficients,
            top=top,
            pattern=_pattern_label(coefficients),
        ))
    return reports


def classify_stability(trace: SamplerTrace,
                       burn_in: int | None = None) -> list[StabilityRecord]:
    """Per-player residency and transition analysis over post-burn-in sweeps.

    Stable: one cluster holds the player for over half the recorded
    post-burn-in iterations.  Hybrid: some unordered cluster pair sees at
    least 4 back-and-forth changes.  Both flags are kept; the single
    label gives hybrid precedence over stable.
    """
    if burn_in is None:
        burn_in = trace.config.burn_in
    keep = [i for i, it in enumerate(trace.iterations) if it > burn_in]
    if not keep:
        raise ValueError("no recorded iterations past burn-in")
    matrix = np.stack([trace.assignments[i] for i in keep])

    records = []
    for col, pid in enumerate(trace.player_ids):
        seq = matrix[:, col]
        ids, counts = np.unique(seq, return_counts=True)
        max_res = counts.max() / len(seq)
        pair_counts: dict[tuple[int, int], int] = {}
        for prev, cur in zip(seq[:-1], seq[1:]):
            if prev != cur:
                pair = (int(min(prev, cur)), int(max(prev, cur)))
                pair_counts[pair] = pair_counts.get(pair, 0) + 1
        max_pair = max(pair_counts.values()) if pair_counts else 0
        stable = bool(max_res > 0.5)
        hybrid = bool(max_pair >= 4)
        records.append(StabilityRecord(
            player_id=pid,
            clusters_visited=len(ids),
            max_residency_fraction=float(max_res),
            max_pair_transitions=int(max_pair),
            stable=stable,
            hybrid=hybrid,
            label="hybrid" if hybrid else ("stable" if stable else "other"),
        ))
    return records


def _row_categories(row: DesignRow, vocab: CovariateVocabulary):
    cats = [("overall", "overall")]
    for idx, val in zip(row.indices, row.values):
        if val == 0 or idx < vocab.role_offset:
            continue
        if idx < vocab.game_offset:
            cats.append(("role", vocab.roles[idx - vocab.role_offset]))
        elif idx < vocab.map_offset:
            cats.append(("game_type", vocab.game_types[idx - vocab.game_offset]))
        else:
            cats.append(("map", vocab.maps[idx - vocab.map_offset]))
    return cats


def player_profile(
    player_id: str,
    rows: list[DesignRow],
    vocab: CovariateVocabulary,
    global_mean_logscore: float,
    alpha_level: float = 0.05,
) -> PlayerProfile:
    """Log-score distribution summaries per category for one player.

    Categories never played are reported as absent rather than zero.  A
    category is flagged significant when a two-sided one-sample t-test
    against the global mean rejects at ``alpha_level``; the flag is None
    (untestable) below 2 observations or at zero variance.
    """
    player_rows = [r for r in rows if r.player_id == player_id]
    if not player_rows:
        raise ValueError(f"unknown player {player_id!r}")

    values: dict[tuple[str, str], list[float]] = {}
    for row in player_rows:
        for cat in _row_categories(row, vocab):
            values.setdefault(cat, []).append(row.response)

    all_categories = [("overall", "overall")]
    all_categories += [("role", r) for r in vocab.roles]
    all_categories += [("game_type", g) for g in vocab.game_types]
    all_categories += [("map", m) for m in vocab.maps]

    categories = []
    absent = []
    for kind, name in all_categories:
        sample = values.get((kind, name))
        if not sample:
            absent.append((kind, name))
            continue
        arr = np.array(sample)
        q1, median, q3 = np.percentile(arr, [25.0, 50.0, 75.0])
        significant: bool | None = None
        if len(arr) >= 2 and arr.std(ddof=1) > 0:
            result = sps.ttest_1samp(arr, popmean=global_mean_logscore)
            significant = bool(result.pvalue < alpha_level)
        categories.append(CategorySummary(
            kind=kind, name=name, count=len(arr), mean=float(arr.mean()),
            q1=float(q1), median=float(median), q3=float(q3),
            significant=significant,
        ))
    return PlayerProfile(player_id=player_id, categories=categories,
                         absent=absent)


# ---------------------------------------------------------------------------
# plot-ready file outputs

def _write_csv(path, header, rows, config):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if config is not None:
            fh.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_metrics_json(path, metrics: dict, config: dict | None = None):
    payload = dict(metrics)
    if config is not None:
        payload["config"] = config
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def write_size_histogram_csv(path, dist: SizeDistribution,
                             config: dict | None = None):
    _write_csv(path, ["size", "count"], dist.histogram, config)


def write_cluster_reports_csv(path, reports: list[ClusterReport],
                              config: dict | None = None):
    rows = [
        (r.cluster_id, kind, name, repr(value))
        for r in reports
        for kind, name, value in r.coefficients
    ]
    _write_csv(path, ["cluster_id", "column_kind", "column_name", "value"],
               rows, config)


def write_cluster_reports_json(path, reports: list[ClusterReport],
                               config: dict | None = None):
    payload = {
        "clusters": [
            {
                "cluster_id": r.cluster_id,
                "size": r.size,
                "share": r.share,
                "pattern": r.pattern,
                "top_coefficients": [
                    {"kind": kind, "name": name, "value": value}
                    for kind, name, value in r.top
                ],
            }
            for r in reports
        ],
    }
    if config is not None:
        payload["config"] = config
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def write_stability_csv(path, records: list[StabilityRecord],
                        config: dict | None = None):
    rows = [
        (r.player_id, r.clusters_visited, repr(r.max_residency_fraction),
         r.max_pair_transitions, r.stable, r.hybrid, r.label)
        for r in records
    ]
    _write_csv(path, ["player_id", "clusters_visited", "max_residency_fraction",
                      "max_pair_transitions", "stable", "hybrid", "label"],
               rows, config)


def write_visits_csv(path, records: list[StabilityRecord],
                     config: dict | None = None):
    hist: dict[int, int] = {}
    for r in records:
        hist[r.clusters_visited] = hist.get(r.clusters_visited, 0) + 1
    _write_csv(path, ["clusters_visited", "count"], sorted(hist.items()), config)


def write_profiles_csv(path, profiles: list[PlayerProfile],
                       config: dict | None = None):
    rows = []
    for profile in profiles:
        for c in profile.categories:
            rows.append((profile.player_id, c.kind, c.name, c.count,
                         repr(c.mean), repr(c.q1), repr(c.median), repr(c.q3),
                         "" if c.significant is None else c.significant))
        for kind, name in profile.absent:
            rows.append((profile.player_id, kind, name, 0, "", "", "", "", ""))
    _write_csv(path, ["player_id", "category_kind", "category_name", "count",
                      "mean", "q1", "median", "q3", "significant"],
               rows, config)
