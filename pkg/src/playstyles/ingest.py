"""Match-log parsing, filtering, and covariate encoding.

Raw telemetry arrives as JSONL, one object per player-match.  Retained
matches are encoded into sparse design rows laid out as
``[intercept, rank, role indicators, game-type indicators, map indicators]``
with the natural-log match score as the response.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

RANK_MIN = 0
RANK_MAX = 145

# retention thresholds, both strict: played more than 5 minutes and
# scored more than 100 points
MIN_DURATION_SECONDS = 300.0
MIN_SCORE = 100

COLUMN_KINDS = ("intercept", "rank", "role", "game_type", "map")

_REQUIRED_KEYS = {
    "player_id", "match_id", "score", "duration_seconds",
    "rank", "roles", "game_type", "map_name",
}


class MatchLogError(ValueError):
    """Base class for ingest failures."""


class ParseError(MatchLogError):
    """A raw log row is malformed; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnknownNameError(MatchLogError):
    """A role/game/map name is absent from the active vocabulary."""

    def __init__(self, names: Iterable[str], line: int | None = None):
        self.names = sorted(names)
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}unknown name(s): {', '.join(self.names)}")


@dataclass
class MatchRecord:
    """One player-match observation from the raw log."""

    player_id: str
    match_id: str
    score: int
    duration: float
    rank: int
    roles: frozenset[str]
    game_type: str
    map_name: str
    timestamp: int | None = None
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class CovariateVocabulary:
    """Ordered covariate name lists defining stable column indices.

    Lists are required to be lexicographically sorted and duplicate-free
    so that column indices are reproducible across runs and machines.
    """

    roles: tuple[str, ...]
    game_types: tuple[str, ...]
    maps: tuple[str, ...]

    def __post_init__(self):
        for kind, names in (("roles", self.roles),
                            ("game_types", self.game_types),
                            ("maps", self.maps)):
            if len(set(names)) != len(names):
                raise ValueError(f"duplicate names in {kind}")
            if list(names) != sorted(names):
                raise ValueError(f"{kind} must be lexicographically sorted")

    @classmethod
    def from_names(cls, roles, game_types, maps) -> "CovariateVocabulary":
        return cls(tuple(sorted(set(roles))),
                   tuple(sorted(set(game_types))),
                   tuple(sorted(set(maps))))

    @property
    def total_width(self) -> int:
        return 2 + len(self.roles) + len(self.game_types) + len(self.maps)

    @property
    def role_offset(self) -> int:
        return 2

    @property
    def game_offset(self) -> int:
        return 2 + len(self.roles)

    @property
    def map_offset(self) -> int:
        return 2 + len(self.roles) + len(self.game_types)

    def columns(self) -> list[tuple[str, str]]:
        """(kind, name) label for every column, in index order."""
        cols = [("intercept", "intercept"), ("rank", "rank")]
        cols += [("role", r) for r in self.roles]
        cols += [("game_type", g) for g in self.game_types]
        cols += [("map", m) for m in self.maps]
        return cols

    def column_labels(self) -> list[str]:
        return [kind if kind in ("intercept", "rank") else f"{kind}:{name}"
                for kind, name in self.columns()]

    def to_json_dict(self) -> dict:
        return {"columns": [
            {"index": i, "kind": kind, "name": name}
            for i, (kind, name) in enumerate(self.columns())
        ]}

    @classmethod
    def from_json_dict(cls, payload: dict) -> "CovariateVocabulary":
        roles, games, maps = [], [], []
        for col in payload["columns"]:
            if col["kind"] == "role":
                roles.append(col["name"])
            elif col["kind"] == "game_type":
                games.append(col["name"])
            elif col["kind"] == "map":
                maps.append(col["name"])
        return cls(tuple(roles), tuple(games), tuple(maps))


@dataclass
class DesignRow:
    """Sparse covariate vector plus log-score response for one match."""

    player_id: str
    response: float
    indices: np.ndarray
    values: np.ndarray
    width: int
    match_id: str = ""

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.width)
        dense[self.indices] = self.values
        return dense


def _check_string(obj: dict, key: str, line: int) -> str:
    value = obj.get(key)
    if not isinstance(value, str) or not value:
        raise ParseError(line, f"{key!r} must be a non-empty string")
    return value


def _parse_row(obj: dict, line: int) -> MatchRecord:
    missing = _REQUIRED_KEYS - obj.keys()
    if missing:
        raise ParseError(line, f"missing key(s): {', '.join(sorted(missing))}")

    player_id = _check_string(obj, "player_id", line)
    match_id = _check_string(obj, "match_id", line)
    game_type = _check_string(obj, "game_type", line)
    map_name = _check_string(obj, "map_name", line)

    score = obj["score"]
    if isinstance(score, bool) or not isinstance(score, int) or score < 0:
        raise ParseError(line, "'score' must be a non-negative integer")

    duration = obj["duration_seconds"]
    if isinstance(duration, bool) or not isinstance(duration, (int, float)) \
            or not math.isfinite(duration) or duration < 0:
        raise ParseError(line, "'duration_seconds' must be a non-negative number")

    rank = obj["rank"]
    if isinstance(rank, bool) or not isinstance(rank, int) \
            or not RANK_MIN <= rank <= RANK_MAX:
        raise ParseError(
            line, f"'rank' must be an integer in {RANK_MIN}..{RANK_MAX}, got {rank!r}")

    roles = obj["roles"]
    if not isinstance(roles, list) or not roles \
            or not all(isinstance(r, str) and r for r in roles):
        raise ParseError(line, "'roles' must be a non-empty array of strings")

    timestamp = obj.get("timestamp")
    if timestamp is not None and (isinstance(timestamp, bool)
                                  or not isinstance(timestamp, int)):
        raise ParseError(line, "'timestamp' must be an integer if present")

    extras = {k: v for k, v in obj.items()
              if k not in _REQUIRED_KEYS and k != "timestamp"}
    return MatchRecord(
        player_id=player_id,
        match_id=match_id,
        score=score,
        duration=float(duration),
        rank=rank,
        roles=frozenset(roles),
        game_type=game_type,
        map_name=map_name,
        timestamp=timestamp,
        extras=extras,
    )


def _iter_lines(source) -> Iterator[str]:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            yield from fh
    else:
        yield from source


def parse_match_log(
    source,
    vocab_mode: str = "discover",
    vocab: CovariateVocabulary | None = None,
) -> tuple[list[MatchRecord], CovariateVocabulary]:
    """Parse a JSONL match log into records plus a covariate vocabulary.

    ``source`` is a path or an iterable of JSONL lines.  In ``discover``
    mode the vocabulary is the sorted union of observed names; in
    ``fixed`` mode rows naming anything outside ``vocab`` are rejected.
    """
    if vocab_mode not in ("discover", "fixed"):
        raise ValueError(f"vocab_mode must be 'discover' or 'fixed', got {vocab_mode!r}")
    if vocab_mode == "fixed" and vocab is None:
        raise ValueError("fixed vocab_mode requires an explicit vocabulary")

    records: list[MatchRecord] = []
    roles_seen: set[str] = set()
    games_seen: set[str] = set()
    maps_seen: set[str] = set()

    for line_no, raw in enumerate(_iter_lines(source), start=1):
        stripped = raw.strip()
        if not stripped:
            continue
        try:
            obj = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ParseError(line_no, f"invalid JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise ParseError(line_no, "row is not a JSON object")
        record = _parse_row(obj, line_no)

        if vocab_mode == "fixed":
            unknown = set(record.roles) - set(vocab.roles)
            if record.game_type not in vocab.game_types:
                unknown.add(record.game_type)
            if record.map_name not in vocab.maps:
                unknown.add(record.map_name)
            if unknown:
                raise UnknownNameError(unknown, line=line_no)
        else:
            roles_seen.update(record.roles)
            games_seen.add(record.game_type)
            maps_seen.add(record.map_name)
        records.append(record)

    if vocab_mode == "fixed":
        return records, vocab
    discovered = CovariateVocabulary.from_names(roles_seen, games_seen, maps_seen)
    return records, discovered


def filter_matches(records: list[MatchRecord]) -> list[MatchRecord]:
    """Keep matches played more than 300 s with more than 100 points."""
    kept = [r for r in records
            if r.duration > MIN_DURATION_SECONDS and r.score > MIN_SCORE]
    dropped = len(records) - len(kept)
    if dropped:
        logger.info("filter_matches dropped %d of %d records", dropped, len(records))
    return kept


def encode_match(record: MatchRecord, vocab: CovariateVocabulary) -> DesignRow:
    """Encode one retained match into a sparse design row."""
    if record.score <= 0:
        raise MatchLogError(
            f"match {record.match_id}: cannot log-transform score {record.score}")

    unknown = set(record.roles) - set(vocab.roles)
    if record.game_type not in vocab.game_types:
        unknown.add(record.game_type)
    if record.map_name not in vocab.maps:
        unknown.add(record.map_name)
    if unknown:
        raise UnknownNameError(unknown)

    role_cols = sorted(vocab.role_offset + vocab.roles.index(r)
                       for r in record.roles)
    game_col = vocab.game_offset + vocab.game_types.index(record.game_type)
    map_col = vocab.map_offset + vocab.maps.index(record.map_name)

    indices = np.array([0, 1, *role_cols, game_col, map_col], dtype=np.int64)
    values = np.ones(len(indices))
    values[1] = float(record.rank)
    return DesignRow(
        player_id=record.player_id,
        response=math.log(record.score),
        indices=indices,
        values=values,
        width=vocab.total_width,
        match_id=record.match_id,
    )


def encode_matches(records: list[MatchRecord],
                   vocab: CovariateVocabulary) -> list[DesignRow]:
    return [encode_match(r, vocab) for r in records]


def decode_row(row: DesignRow, vocab: CovariateVocabulary):
    """Recover (roles, game_type, map_name) from a row's indicator columns."""
    roles, game, map_name = set(), None, None
    for idx, val in zip(row.indices, row.values):
        if val == 0 or idx < vocab.role_offset:
            continue
        if idx < vocab.game_offset:
            roles.add(vocab.roles[idx - vocab.role_offset])
        elif idx < vocab.map_offset:
            game = vocab.game_types[idx - vocab.game_offset]
        else:
            map_name = vocab.maps[idx - vocab.map_offset]
    return frozenset(roles), game, map_name


def design_matrix(rows: list[DesignRow]) -> sp.csr_matrix:
    """Stack design rows into a CSR sparse matrix."""
    if not rows:
        raise ValueError("no design rows")
    width = rows[0].width
    if any(r.width != width for r in rows):
        raise ValueError("inconsistent row widths")
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(r.indices) for r in rows])
    indices = np.concatenate([r.indices for r in rows])
    data = np.concatenate([r.values for r in rows])
    return sp.csr_matrix((data, indices, indptr), shape=(len(rows), width))


def responses(rows: list[DesignRow]) -> np.ndarray:
    return np.array([r.response for r in rows])


# ---------------------------------------------------------------------------
# file formats: design CSV plus vocabulary JSON

def save_vocabulary(vocab: CovariateVocabulary, path, config: dict | None = None):
    payload = vocab.to_json_dict()
    if config is not None:
        payload["config"] = config
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_vocabulary(path) -> CovariateVocabulary:
    with open(path, "r", encoding="utf-8") as fh:
        return CovariateVocabulary.from_json_dict(json.load(fh))


def save_design(rows: list[DesignRow], vocab: CovariateVocabulary, path,
                config: dict | None = None):
    """Write the encoded design as CSV with labeled covariate columns.

    A leading ``#`` comment line records the producing config; readers of
    this format skip comment lines.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if config is not None:
            fh.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
        writer = csv.writer(fh)
        writer.writerow(["player_id", "match_id", "response"]
                        + vocab.column_labels())
        for row in rows:
            dense = row.to_dense()
            writer.writerow([row.player_id, row.match_id, repr(float(row.response))]
                            + [repr(float(v)) for v in dense])


def load_design(path) -> list[DesignRow]:
    rows: list[DesignRow] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = (ln for ln in fh if not ln.startswith("#"))
        reader = csv.reader(lines)
        header = next(reader)
        width = len(header) - 3
        for rec in reader:
            dense = np.array([float(v) for v in rec[3:]])
            nz = np.nonzero(dense)[0]
            rows.append(DesignRow(
                player_id=rec[0],
                response=float(rec[2]),
                indices=nz.astype(np.int64),
                values=dense[nz],
                width=width,
                match_id=rec[1],
            ))
    return rows
