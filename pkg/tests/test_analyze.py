"""Model evaluation, cluster reports, stability classification, profiles."""

import csv
import json
import math

import numpy as np
import pytest

from playstyles import dpcluster as dp
from playstyles.analyze import (
    classify_stability,
    cluster_size_distribution,
    evaluate_models,
    player_profile,
    top_cluster_reports,
    write_cluster_reports_csv,
    write_cluster_reports_json,
    write_metrics_json,
    write_profiles_csv,
    write_size_histogram_csv,
    write_stability_csv,
    write_visits_csv,
)
from playstyles.ingest import CovariateVocabulary, DesignRow
from playstyles.regress import GlobalFit, HoldoutSplit, PlayerStyle


def dense_row(player_id, response, dense, match_id=""):
    dense = np.asarray(dense, dtype=float)
    nz = np.nonzero(dense)[0]
    return DesignRow(player_id=player_id, response=float(response),
                     indices=nz.astype(np.int64), values=dense[nz],
                     width=len(dense), match_id=match_id)


def state_of(cluster_specs, sigma2=1.0, omega=1.0, p=3):
    clusters, assignment = {}, {}
    for cid, (mean, members) in enumerate(cluster_specs):
        clusters[cid] = dp.Cluster(cid, np.asarray(mean, dtype=float), set(members))
        for pid in members:
            assignment[pid] = cid
    base = dp.BaseMeasure(np.zeros(p), np.ones(p), 1e-9)
    return dp.PartitionState(clusters=clusters, assignment=assignment,
                             sigma2=sigma2, omega=omega, base=base,
                             next_cluster_id=len(clusters))


class TestEvaluateModels:
    def perfect_setup(self, c=4.0):
        rows = [dense_row(pid, c, [1.0, 0.0, 0.0], f"{pid}m{i}")
                for pid in ("a", "b") for i in range(5)]
        split = HoldoutSplit(train=rows[:8], test=rows[8:], seed=0)
        fit = GlobalFit(np.array([c, 0.0, 0.0]), 0.0, 8, 1, 0.0)
        styles = {p: PlayerStyle(p, np.zeros(3)) for p in ("a", "b")}
        state = state_of([(np.zeros(3), {"a", "b"})])
        return split, fit, styles, state

    def test_perfect_recovery_gives_zero_errors(self):
        metrics = evaluate_models(*self.perfect_setup())
        assert metrics["rmse_global_mean"] == 0.0
        assert metrics["rmse_ols"] == 0.0
        assert metrics["rmse_clustered"] == 0.0
        assert metrics["unique_coeff_ratio"] == 0.5

    def test_singleton_partition_ratio_is_one(self):
        split, fit, styles, _ = self.perfect_setup()
        state = state_of([(np.zeros(3), {"a"}), (np.zeros(3), {"b"})])
        metrics = evaluate_models(split, fit, styles, state)
        assert metrics["unique_coeff_ratio"] == 1.0

    def test_invariant_to_row_order(self):
        rng = np.random.default_rng(20)
        rows = [dense_row(f"p{i % 3}", rng.normal(), [1.0, rng.normal(), 0.0],
                          f"m{i}") for i in range(30)]
        split = HoldoutSplit(train=rows[:24], test=rows[24:], seed=0)
        fit = GlobalFit(rng.normal(size=3), 1.0, 24, 3, 0.0)
        styles = {f"p{i}": PlayerStyle(f"p{i}", rng.normal(size=3))
                  for i in range(3)}
        state = state_of([(rng.normal(size=3), {"p0", "p1"}),
                          (rng.normal(size=3), {"p2"})])
        m1 = evaluate_models(split, fit, styles, state)
        shuffled = HoldoutSplit(train=split.train[::-1], test=split.test[::-1],
                                seed=0)
        m2 = evaluate_models(shuffled, fit, styles, state)
        assert m1 == pytest.approx(m2, rel=1e-12)

    def test_empty_test_set_rejected(self):
        split, fit, styles, state = self.perfect_setup()
        empty = HoldoutSplit(train=split.train, test=[], seed=0)
        with pytest.raises(ValueError, match="test"):
            evaluate_models(empty, fit, styles, state)


class TestSizeDistribution:
    def test_min_size_filter(self):
        state = state_of([
            (np.zeros(3), {f"a{i}" for i in range(7)}),
            (np.zeros(3), {"b0", "b1"}),
            (np.zeros(3), {"c0"}),
        ])
        dist = cluster_size_distribution(state, min_size=2)
        assert dist.sizes == [7, 2]
        assert dist.cluster_count == 2
        assert dist.histogram == [(7, 1), (2, 1)]
        assert dist.n_players == 10

    def test_all_singletons_empty_histogram(self):
        state = state_of([(np.zeros(3), {f"p{i}"}) for i in range(4)])
        dist = cluster_size_distribution(state, min_size=2)
        assert dist.sizes == [] and dist.cluster_count == 0

    def test_top_share(self):
        state = state_of([
            (np.zeros(3), {f"a{i}" for i in range(6)}),
            (np.zeros(3), {f"b{i}" for i in range(3)}),
            (np.zeros(3), {"c0"}),
        ])
        dist = cluster_size_distribution(state, min_size=2, top_m=2)
        assert dist.top_share == pytest.approx(9 / 10)


class TestClusterReports:
    vocab = CovariateVocabulary(("assault", "recon"), ("conquest",),
                                ("bazaar", "metro"))

    def test_all_star_pattern(self):
        mean = np.zeros(self.vocab.total_width)
        mean[0] = 0.9
        mean[2] = 0.05
        state = state_of([(mean, {"a", "b", "c"})], p=self.vocab.total_width)
        report = top_cluster_reports(state, self.vocab, m=1)[0]
        assert report.pattern == "all-star"
        assert report.top[0] == ("intercept", "intercept", 0.9)
        assert report.share == pytest.approx(1.0)

    def test_map_specialist_pattern(self):
        mean = np.zeros(self.vocab.total_width)
        mean[self.vocab.map_offset] = 0.8
        mean[self.vocab.map_offset + 1] = 0.7
        state = state_of([(mean, {"a"})], p=self.vocab.total_width)
        report = top_cluster_reports(state, self.vocab, m=1)[0]
        assert report.pattern == "map-specialist"
        top_kinds = [kind for kind, _, _ in report.top[:2]]
        assert top_kinds == ["map", "map"]

    def test_zero_vector_cluster(self):
        mean = np.zeros(self.vocab.total_width)
        state = state_of([(mean, {"a"})], p=self.vocab.total_width)
        report = top_cluster_reports(state, self.vocab, m=1)[0]
        assert report.top == []
        assert report.pattern == "neutral"
        assert all(v == 0.0 for _, _, v in report.coefficients)

    def test_requesting_more_than_k_warns_and_returns_all(self, caplog):
        mean = np.zeros(self.vocab.total_width)
        state = state_of([(mean, {"a"}), (mean, {"b"})],
                         p=self.vocab.total_width)
        with caplog.at_level("WARNING"):
            reports = top_cluster_reports(state, self.vocab, m=5)
        assert len(reports) == 2
        assert any("5" in rec.message for rec in caplog.records)

    def test_ordered_by_size_and_labels_bijective(self):
        w = self.vocab.total_width
        state = state_of([
            (np.arange(w, dtype=float), {"a"}),
            (np.ones(w), {"b", "c", "d"}),
        ], p=w)
        reports = top_cluster_reports(state, self.vocab, m=2)
        assert [r.size for r in reports] == [3, 1]
        labels = [(kind, name) for kind, name, _ in reports[0].coefficients]
        assert labels == self.vocab.columns()


def make_trace(sequences, burn_in=0):
    """sequences: {player_id: list of cluster ids, one per iteration}."""
    player_ids = tuple(sorted(sequences))
    length = len(next(iter(sequences.values())))
    config = dp.SamplerConfig(iterations=length, burn_in=burn_in, seed=0,
                              sigma2=1.0)
    trace = dp.SamplerTrace(player_ids=player_ids, config=config)
    trace.iterations = list(range(1, length + 1))
    trace.scores = [0.0] * length
    trace.assignments = [
        np.array([sequences[p][t] for p in player_ids], dtype=np.int64)
        for t in range(length)
    ]
    return trace


class TestStability:
    def test_constant_player_is_stable(self):
        trace = make_trace({"a": [3] * 12})
        rec = classify_stability(trace)[0]
        assert rec.stable and not rec.hybrid
        assert rec.clusters_visited == 1
        assert rec.max_residency_fraction == 1.0
        assert rec.label == "stable"

    def test_alternating_player_gets_both_flags(self):
        # A,B,A,B,A,B,A,B,A over 9 iterations: 8 transitions in the pair,
        # residency 5/9 also crosses the stable threshold
        trace = make_trace({"a": [1, 2, 1, 2, 1, 2, 1, 2, 1]})
        rec = classify_stability(trace)[0]
        assert rec.max_pair_transitions == 8
        assert rec.max_residency_fraction == pytest.approx(5 / 9)
        assert rec.hybrid and rec.stable
        assert rec.label == "hybrid"
        assert rec.clusters_visited == 2

    def test_three_transitions_is_not_hybrid(self):
        trace = make_trace({"a": [1, 2, 1, 2, 3, 3, 3, 3, 3, 3]})
        rec = classify_stability(trace)[0]
        assert rec.max_pair_transitions == 3
        assert not rec.hybrid

    def test_frozen_trace_all_stable_none_hybrid(self):
        trace = make_trace({"a": [1] * 8, "b": [2] * 8, "c": [1] * 8})
        records = classify_stability(trace)
        assert all(r.stable for r in records)
        assert not any(r.hybrid for r in records)

    def test_burn_in_excluded(self):
        # churn happens only inside burn-in; afterwards the player parks
        trace = make_trace({"a": [1, 2, 1, 2, 1] + [7] * 10}, burn_in=5)
        rec = classify_stability(trace)[0]
        assert rec.clusters_visited == 1
        assert rec.label == "stable"

    def test_empty_post_burn_in_rejected(self):
        trace = make_trace({"a": [1, 1, 1]}, burn_in=5)
        with pytest.raises(ValueError, match="burn-in"):
            classify_stability(trace)

    def test_id_reuse_never_conflates_pairs(self):
        # three distinct excursions to fresh ids never count as one pair
        trace = make_trace({"a": [1, 5, 1, 6, 1, 7, 1, 1]})
        rec = classify_stability(trace)[0]
        assert rec.max_pair_transitions == 2
        assert not rec.hybrid
        assert rec.clusters_visited == 4


class TestPlayerProfile:
    vocab = CovariateVocabulary(("assault", "recon"), ("conquest", "rush"),
                                ("bazaar", "metro"))

    def rows_for(self, pid, specs):
        """specs: list of (response, roles, game, map)."""
        rows = []
        for i, (y, roles, game, map_name) in enumerate(specs):
            dense = np.zeros(self.vocab.total_width)
            dense[0] = 1.0
            dense[1] = 30.0
            for role in roles:
                dense[self.vocab.role_offset + self.vocab.roles.index(role)] = 1.0
            dense[self.vocab.game_offset
                  + self.vocab.game_types.index(game)] = 1.0
            dense[self.vocab.map_offset + self.vocab.maps.index(map_name)] = 1.0
            rows.append(dense_row(pid, y, dense, f"{pid}m{i}"))
        return rows

    def test_significant_category_flagged(self):
        # 30 matches, mean 9, sample sd 0.5 against global mean 8: t ~ 10.95
        c = 0.5 * math.sqrt(29.0 / 30.0)
        values = [9.0 + c] * 15 + [9.0 - c] * 15
        rows = self.rows_for("p", [(v, ["assault"], "conquest", "bazaar")
                                   for v in values])
        profile = player_profile("p", rows, self.vocab, 8.0)
        arr = np.array(values)
        assert arr.mean() == pytest.approx(9.0)
        assert arr.std(ddof=1) == pytest.approx(0.5)
        by_cat = {(c.kind, c.name): c for c in profile.categories}
        overall = by_cat[("overall", "overall")]
        assert overall.count == 30
        assert overall.significant is True

    def test_single_match_category_untestable(self):
        rows = self.rows_for("p", [
            (8.0, ["assault"], "conquest", "bazaar"),
            (8.5, ["assault"], "conquest", "bazaar"),
            (9.0, ["recon"], "rush", "metro"),
        ])
        profile = player_profile("p", rows, self.vocab, 8.0)
        by_cat = {(c.kind, c.name): c for c in profile.categories}
        assert by_cat[("role", "recon")].count == 1
        assert by_cat[("role", "recon")].significant is None

    def test_unplayed_categories_absent(self):
        rows = self.rows_for("p", [(8.0, ["assault"], "conquest", "bazaar")] * 3)
        profile = player_profile("p", rows, self.vocab, 8.0)
        assert ("map", "metro") in profile.absent
        assert ("role", "recon") in profile.absent
        present = {(c.kind, c.name) for c in profile.categories}
        assert ("map", "metro") not in present

    def test_flag_symmetric_under_negated_deviations(self):
        mu0 = 8.0
        rng = np.random.default_rng(31)
        values = (mu0 + 0.4 + 0.3 * rng.normal(size=12)).tolist()
        mirrored = [2 * mu0 - v for v in values]
        rows_a = self.rows_for("p", [(v, ["assault"], "conquest", "bazaar")
                                     for v in values])
        rows_b = self.rows_for("p", [(v, ["assault"], "conquest", "bazaar")
                                     for v in mirrored])
        flag_a = player_profile("p", rows_a, self.vocab, mu0).categories[0]
        flag_b = player_profile("p", rows_b, self.vocab, mu0).categories[0]
        assert flag_a.significant == flag_b.significant

    def test_category_count_identities(self):
        rng = np.random.default_rng(32)
        specs = []
        for _ in range(40):
            roles = list(rng.choice(self.vocab.roles,
                                    size=int(rng.integers(1, 3)), replace=False))
            specs.append((float(rng.normal(8.0, 0.5)), roles,
                          str(rng.choice(self.vocab.game_types)),
                          str(rng.choice(self.vocab.maps))))
        rows = self.rows_for("p", specs)
        profile = player_profile("p", rows, self.vocab, 8.0)
        counts = {(c.kind, c.name): c.count for c in profile.categories}
        overall = counts[("overall", "overall")]
        assert overall == 40
        assert sum(v for (k, _), v in counts.items() if k == "game_type") == 40
        assert sum(v for (k, _), v in counts.items() if k == "map") == 40
        assert sum(v for (k, _), v in counts.items() if k == "role") >= 40

    def test_quartiles_match_numpy(self):
        values = [7.0, 7.5, 8.0, 9.0, 10.0]
        rows = self.rows_for("p", [(v, ["assault"], "conquest", "bazaar")
                                   for v in values])
        overall = player_profile("p", rows, self.vocab, 8.0).categories[0]
        q1, med, q3 = np.percentile(values, [25, 50, 75])
        assert (overall.q1, overall.median, overall.q3) == (q1, med, q3)

    def test_unknown_player_rejected(self):
        rows = self.rows_for("p", [(8.0, ["assault"], "conquest", "bazaar")])
        with pytest.raises(ValueError, match="unknown player"):
            player_profile("nobody", rows, self.vocab, 8.0)


class TestWriters:
    def test_metrics_json_keys_and_config(self, tmp_path):
        path = tmp_path / "metrics.json"
        metrics = {"rmse_global_mean": 1.0, "rmse_ols": 0.8,
                   "rmse_clustered": 0.81, "unique_coeff_ratio": 0.13}
        write_metrics_json(path, metrics, config={"seed": 4})
        payload = json.loads(path.read_text())
        for key in metrics:
            assert payload[key] == metrics[key]
        assert payload["config"] == {"seed": 4}

    def test_csv_outputs_round_trip(self, tmp_path, small_pipeline):
        pl = small_pipeline
        state = pl.trace.map_state
        dist = cluster_size_distribution(state)
        reports = top_cluster_reports(state, pl.vocab, m=2)
        stability = classify_stability(pl.trace)
        profile = player_profile(pl.trace.player_ids[0], pl.design, pl.vocab,
                                 8.0)
        cfg = {"seed": 11}

        write_size_histogram_csv(tmp_path / "sizes.csv", dist, cfg)
        write_cluster_reports_csv(tmp_path / "coef.csv", reports, cfg)
        write_cluster_reports_json(tmp_path / "clusters.json", reports, cfg)
        write_stability_csv(tmp_path / "stab.csv", stability, cfg)
        write_visits_csv(tmp_path / "visits.csv", stability, cfg)
        write_profiles_csv(tmp_path / "profiles.csv", [profile], cfg)

        for name, expect_header in (
            ("sizes.csv", ["size", "count"]),
            ("coef.csv", ["cluster_id", "column_kind", "column_name", "value"]),
            ("stab.csv", ["player_id", "clusters_visited",
                          "max_residency_fraction", "max_pair_transitions",
                          "stable", "hybrid", "label"]),
            ("visits.csv", ["clusters_visited", "count"]),
            ("profiles.csv", ["player_id", "category_kind", "category_name",
                              "count", "mean", "q1", "median", "q3",
                              "significant"]),
        ):
            text = (tmp_path / name).read_text().splitlines()
            assert text[0].startswith("# config:")
            rows = list(csv.reader(text[1:]))
            assert rows[0] == expect_header
            assert len(rows) > 1

        coef_rows = list(csv.reader(
            (tmp_path / "coef.csv").read_text().splitlines()[1:]))[1:]
        assert len(coef_rows) == 2 * pl.vocab.total_width
