"""Parsing, filtering, and covariate-encoding behavior."""

import json
import math

import numpy as np
import pytest

from playstyles.ingest import (
    CovariateVocabulary,
    MatchLogError,
    MatchRecord,
    ParseError,
    UnknownNameError,
    decode_row,
    encode_match,
    encode_matches,
    filter_matches,
    load_design,
    load_vocabulary,
    parse_match_log,
    save_design,
    save_vocabulary,
)


def make_row(**overrides):
    row = {
        "player_id": "p1",
        "match_id": "m1",
        "score": 2500,
        "duration_seconds": 900,
        "rank": 40,
        "roles": ["assault"],
        "game_type": "conquest",
        "map_name": "Grand Bazaar",
    }
    row.update(overrides)
    return row


def lines(*rows):
    return [json.dumps(r) for r in rows]


class TestParse:
    def test_direct_field_mapping(self):
        records, vocab = parse_match_log(lines(make_row()))
        assert len(records) == 1
        rec = records[0]
        assert rec.player_id == "p1"
        assert rec.roles == frozenset({"assault"})
        assert rec.game_type == "conquest"
        assert rec.map_name == "Grand Bazaar"
        assert vocab.total_width == 2 + 1 + 1 + 1

    def test_paper_shaped_vocabulary_width(self):
        # 9 roles, 17 game types, 30 maps give the 58-column configuration
        rows = []
        for i in range(30):
            rows.append(make_row(
                match_id=f"m{i}",
                roles=[f"role{i % 9}"],
                game_type=f"game{i % 17}",
                map_name=f"map{i}",
            ))
        _, vocab = parse_match_log(lines(*rows))
        assert len(vocab.roles) == 9
        assert len(vocab.game_types) == 17
        assert len(vocab.maps) == 30
        assert vocab.total_width == 58

    def test_rank_out_of_range_rejected(self):
        with pytest.raises(ParseError, match="rank"):
            parse_match_log(lines(make_row(rank=200)))
        with pytest.raises(ParseError):
            parse_match_log(lines(make_row(rank=-1)))
        with pytest.raises(ParseError):
            parse_match_log(lines(make_row(rank=146)))
        records, _ = parse_match_log(lines(make_row(rank=0), make_row(rank=145)))
        assert [r.rank for r in records] == [0, 145]

    def test_malformed_json_reports_line_number(self):
        bad = lines(make_row()) + ["{not json"]
        with pytest.raises(ParseError) as err:
            parse_match_log(bad)
        assert err.value.line == 2

    def test_missing_key_and_bad_types(self):
        row = make_row()
        del row["score"]
        with pytest.raises(ParseError, match="score"):
            parse_match_log([json.dumps(row)])
        with pytest.raises(ParseError):
            parse_match_log(lines(make_row(roles=[])))
        with pytest.raises(ParseError):
            parse_match_log(lines(make_row(score=-5)))

    def test_fixed_mode_rejects_unknown_names(self):
        vocab = CovariateVocabulary(("assault",), ("conquest",), ("Grand Bazaar",))
        with pytest.raises(UnknownNameError, match="helicopter"):
            parse_match_log(lines(make_row(roles=["helicopter"])),
                            vocab_mode="fixed", vocab=vocab)
        records, out = parse_match_log(lines(make_row()), vocab_mode="fixed",
                                       vocab=vocab)
        assert out is vocab and len(records) == 1

    def test_discovery_is_order_insensitive(self):
        rows = [make_row(match_id=f"m{i}", roles=[f"r{i % 4}"],
                         game_type=f"g{i % 3}", map_name=f"map{i % 5}")
                for i in range(12)]
        _, forward = parse_match_log(lines(*rows))
        _, backward = parse_match_log(lines(*rows[::-1]))
        assert forward == backward
        assert forward.columns() == backward.columns()

    def test_extras_passed_through(self):
        records, _ = parse_match_log(lines(make_row(kills=17, deaths=3)))
        assert records[0].extras == {"kills": 17, "deaths": 3}


class TestFilter:
    def test_paper_thresholds(self):
        records, _ = parse_match_log(lines(
            make_row(match_id="short", duration_seconds=240, score=500),
            make_row(match_id="lowscore", duration_seconds=400, score=100),
            make_row(match_id="keeper", duration_seconds=301, score=101),
        ))
        kept = filter_matches(records)
        assert [r.match_id for r in kept] == ["keeper"]

    def test_boundaries_are_strict(self):
        records, _ = parse_match_log(lines(
            make_row(match_id="dur300", duration_seconds=300, score=5000),
            make_row(match_id="score100", duration_seconds=5000, score=100),
        ))
        assert filter_matches(records) == []

    def test_idempotent_and_order_preserving(self):
        records, _ = parse_match_log(lines(
            *[make_row(match_id=f"m{i}", duration_seconds=200 + 50 * i)
              for i in range(8)]))
        once = filter_matches(records)
        assert filter_matches(once) == once
        ids = [r.match_id for r in once]
        assert ids == sorted(ids, key=lambda m: int(m[1:]))


class TestEncode:
    vocab = CovariateVocabulary(
        roles=("assault", "engineer", "helicopter"),
        game_types=("conquest", "rush"),
        maps=("Grand Bazaar", "Operation Metro"),
    )

    def record(self, **overrides):
        fields = dict(player_id="p1", match_id="m1", score=2981, duration=900.0,
                      rank=40, roles=frozenset({"assault"}),
                      game_type="conquest", map_name="Grand Bazaar")
        fields.update(overrides)
        return MatchRecord(**fields)

    def test_log_score_response(self):
        row = encode_match(self.record(score=2981), self.vocab)
        assert row.response == math.log(2981)
        assert abs(row.response - 8.0) < 1e-3

    def test_single_role_indicator(self):
        row = encode_match(self.record(roles=frozenset({"helicopter"})), self.vocab)
        dense = row.to_dense()
        off = self.vocab.role_offset
        assert dense[off + 2] == 1.0  # helicopter
        assert dense[off] == 0.0 and dense[off + 1] == 0.0

    def test_multi_hot_roles(self):
        row = encode_match(
            self.record(roles=frozenset({"assault", "engineer"})), self.vocab)
        dense = row.to_dense()
        off = self.vocab.role_offset
        assert dense[off] == 1.0 and dense[off + 1] == 1.0

    def test_layout_invariants(self):
        row = encode_match(self.record(rank=77, game_type="rush",
                                       map_name="Operation Metro"), self.vocab)
        dense = row.to_dense()
        assert dense[0] == 1.0
        assert dense[1] == 77.0
        games = dense[self.vocab.game_offset:self.vocab.map_offset]
        maps = dense[self.vocab.map_offset:]
        assert games.sum() == 1.0 and maps.sum() == 1.0
        indicators = np.concatenate([dense[2:self.vocab.game_offset], games, maps])
        assert set(indicators.tolist()) <= {0.0, 1.0}

    def test_zero_score_guarded(self):
        with pytest.raises(MatchLogError, match="log-transform"):
            encode_match(self.record(score=0), self.vocab)

    def test_unknown_name_rejected(self):
        with pytest.raises(UnknownNameError, match="jet"):
            encode_match(self.record(roles=frozenset({"jet"})), self.vocab)

    def test_round_trip_recovers_choices(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n_roles = int(rng.integers(1, 4))
            roles = frozenset(rng.choice(self.vocab.roles, size=n_roles,
                                         replace=False).tolist())
            game = str(rng.choice(self.vocab.game_types))
            map_name = str(rng.choice(self.vocab.maps))
            rec = self.record(roles=roles, game_type=game, map_name=map_name,
                              rank=int(rng.integers(0, 146)))
            row = encode_match(rec, self.vocab)
            assert decode_row(row, self.vocab) == (roles, game, map_name)

    def test_retained_rows_have_response_above_log100(self):
        records, vocab = parse_match_log(lines(
            *[make_row(match_id=f"m{i}", score=101 + 13 * i) for i in range(20)]))
        for row in encode_matches(filter_matches(records), vocab):
            assert row.response > math.log(100)


class TestFiles:
    def test_design_and_vocab_round_trip(self, tmp_path):
        records, vocab = parse_match_log(lines(
            *[make_row(match_id=f"m{i}", rank=i, roles=[f"r{i % 3}"],
                       map_name=f"map{i % 4}") for i in range(10)]))
        rows = encode_matches(records, vocab)
        design_path = tmp_path / "design.csv"
        vocab_path = tmp_path / "vocab.json"
        save_design(rows, vocab, design_path, config={"seed": 3})
        save_vocabulary(vocab, vocab_path, config={"seed": 3})

        assert load_vocabulary(vocab_path) == vocab
        loaded = load_design(design_path)
        assert len(loaded) == len(rows)
        for got, want in zip(loaded, rows):
            assert got.player_id == want.player_id
            assert got.match_id == want.match_id
            assert got.response == want.response
            np.testing.assert_array_equal(got.to_dense(), want.to_dense())

    def test_vocabulary_json_maps_index_to_kind_and_name(self, tmp_path):
        vocab = CovariateVocabulary(("a",), ("g",), ("m",))
        path = tmp_path / "vocab.json"
        save_vocabulary(vocab, path)
        payload = json.loads(path.read_text())
        assert payload["columns"][0] == {"index": 0, "kind": "intercept",
                                         "name": "intercept"}
        assert payload["columns"][2] == {"index": 2, "kind": "role", "name": "a"}

    def test_vocabulary_requires_sorted_unique_names(self):
        with pytest.raises(ValueError, match="sorted"):
            CovariateVocabulary(("b", "a"), ("g",), ("m",))
        with pytest.raises(ValueError, match="duplicate"):
            CovariateVocabulary(("a", "a"), ("g",), ("m",))
