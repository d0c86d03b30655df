"""Synthetic match logs with planted ground-truth play styles.

Each planted style is a map specialist: its coefficient vector carries a
single large entry on one preferred map, and players of that style play
the preferred map far more often than others, so covariate frequency and
coefficients stay correlated.  Hybrid players alternate between two
generating styles match by match while drawing their maps from the
shared non-preferred pool, which keeps their data deliberately ambiguous
between the two parent clusters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from .ingest import CovariateVocabulary

PREFERRED_MAP_WEIGHT = 0.7
GLOBAL_INTERCEPT = 7.0
GLOBAL_RANK_SLOPE = 0.004
GLOBAL_EFFECT_SD = 0.05

# substream offset for parameters shared across players
_SHARED_STREAM = 2**32


@dataclass
class SyntheticSpec:
    """Generator configuration; every field is echoed into the ground truth."""

    n_players: int = 120
    n_true_clusters: int = 5
    matches_per_player: tuple[int, int] = (150, 150)
    n_roles: int = 5
    n_game_types: int = 4
    n_maps: int = 8
    noise_sd: float = 0.3
    style_separation: float = 1.0
    hybrid_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.matches_per_player, int):
            self.matches_per_player = (self.matches_per_player,
                                       self.matches_per_player)
        else:
            self.matches_per_player = tuple(self.matches_per_player)

    def validate(self):
        lo, hi = self.matches_per_player
        if self.n_players < 1 or not 1 <= self.n_true_clusters <= self.n_players:
            raise ValueError("need 1 <= n_true_clusters <= n_players")
        if lo < 1 or hi < lo:
            raise ValueError("matches_per_player must be a range with 1 <= lo <= hi")
        if min(self.n_roles, self.n_game_types, self.n_maps) < 1:
            raise ValueError("vocabulary sizes must be positive")
        if self.noise_sd <= 0:
            raise ValueError("noise_sd must be positive")
        if self.style_separation <= 0:
            raise ValueError("style_separation must be positive")
        if not 0.0 <= self.hybrid_fraction <= 1.0:
            raise ValueError("hybrid_fraction must be in [0, 1]")
        if self.n_maps < self.n_true_clusters:
            raise ValueError(
                "cannot plant distinct map-specialist styles: "
                f"{self.n_true_clusters} clusters need at least that many maps")
        if self.hybrid_fraction > 0 and self.n_maps <= self.n_true_clusters:
            raise ValueError(
                "hybrid players need at least one map outside the preferred set")


@dataclass
class GroundTruth:
    """Planted parameters: style means, labels, and the shared coefficients."""

    means: np.ndarray
    labels: dict[str, int]
    hybrid_pairs: dict[str, tuple[int, int]]
    alpha: np.ndarray
    vocab: CovariateVocabulary
    spec: SyntheticSpec


def make_vocabulary(spec: SyntheticSpec) -> CovariateVocabulary:
    return CovariateVocabulary(
        roles=tuple(f"role_{i:02d}" for i in range(spec.n_roles)),
        game_types=tuple(f"game_{i:02d}" for i in range(spec.n_game_types)),
        maps=tuple(f"map_{i:02d}" for i in range(spec.n_maps)),
    )


def planted_parameters(spec: SyntheticSpec):
    """Shared coefficients and planted style means, deterministic per seed."""
    vocab = make_vocabulary(spec)
    p = vocab.total_width
    rng = np.random.default_rng([spec.seed, _SHARED_STREAM])

    alpha = np.zeros(p)
    alpha[0] = GLOBAL_INTERCEPT
    alpha[1] = GLOBAL_RANK_SLOPE
    alpha[2:] = rng.normal(0.0, GLOBAL_EFFECT_SD, size=p - 2)

    # one large coefficient on each style's preferred map; pairwise
    # distance between any two means is then exactly style_separation
    bump = spec.style_separation / math.sqrt(2.0)
    means = np.zeros((spec.n_true_clusters, p))
    for g in range(spec.n_true_clusters):
        means[g, vocab.map_offset + g] = bump
    if spec.n_true_clusters >= 2:
        gaps = [np.linalg.norm(means[a] - means[b])
                for a in range(spec.n_true_clusters)
                for b in range(a + 1, spec.n_true_clusters)]
        if min(gaps) <= 0:
            raise ValueError("planted styles failed to separate")
    return vocab, alpha, means


def _player_assignments(spec: SyntheticSpec):
    n_hybrid = round(spec.hybrid_fraction * spec.n_players)
    labels: dict[str, int] = {}
    hybrid_pairs: dict[str, tuple[int, int]] = {}
    for i in range(spec.n_players):
        pid = f"p{i:04d}"
        if i >= spec.n_players - n_hybrid and spec.n_true_clusters >= 2:
            g = i % spec.n_true_clusters
            hybrid_pairs[pid] = (g, (g + 1) % spec.n_true_clusters)
        else:
            labels[pid] = i % spec.n_true_clusters
    return labels, hybrid_pairs


def generate(spec: SyntheticSpec) -> tuple[list[dict], GroundTruth]:
    """Emit match-log rows (ingest JSONL schema) plus the ground truth.

    Scores round exp(response) to integers and never fall below 101, so
    every generated row survives the retention filter.  Each player draws
    from its own (seed, player index) substream.
    """
    spec.validate()
    vocab, alpha, means = planted_parameters(spec)
    labels, hybrid_pairs = _player_assignments(spec)

    G = spec.n_true_clusters
    common_maps = list(range(G, spec.n_maps))
    role_count_probs = (0.6, 0.3, 0.1)

    rows: list[dict] = []
    for i in range(spec.n_players):
        pid = f"p{i:04d}"
        rng = np.random.default_rng([spec.seed, i])
        lo, hi = spec.matches_per_player
        n_matches = int(rng.integers(lo, hi + 1))
        pair = hybrid_pairs.get(pid)
        for m in range(n_matches):
            if pair is None:
                g = labels[pid]
                if rng.random() < PREFERRED_MAP_WEIGHT:
                    map_idx = g
                else:
                    map_idx = int(rng.integers(spec.n_maps))
            else:
                # alternate the generating style; stick to maps outside
                # every preferred set so both parents fit equally well
                g = pair[m % 2]
                map_idx = common_maps[int(rng.integers(len(common_maps)))]

            n_roles_row = 1 + int(rng.choice(3, p=role_count_probs))
            n_roles_row = min(n_roles_row, spec.n_roles)
            role_idx = sorted(rng.choice(spec.n_roles, size=n_roles_row,
                                         replace=False).tolist())
            game_idx = int(rng.integers(spec.n_game_types))
            rank = int(rng.integers(0, 146))

            effective = alpha + means[g]
            y = effective[0] + effective[1] * rank
            y += sum(effective[vocab.role_offset + r] for r in role_idx)
            y += effective[vocab.game_offset + game_idx]
            y += effective[vocab.map_offset + map_idx]
            y += rng.normal(0.0, spec.noise_sd)
            score = max(int(round(math.exp(y))), 101)

            rows.append({
                "player_id": pid,
                "match_id": f"{pid}_m{m:05d}",
                "score": score,
                "duration_seconds": int(rng.integers(400, 2401)),
                "rank": rank,
                "roles": [vocab.roles[r] for r in role_idx],
                "game_type": vocab.game_types[game_idx],
                "map_name": vocab.maps[map_idx],
                "timestamp": 1_600_000_000 + i * 100_000 + m * 600,
            })

    truth = GroundTruth(means=means, labels=labels, hybrid_pairs=hybrid_pairs,
                        alpha=alpha, vocab=vocab, spec=spec)
    return rows, truth


def adjusted_rand_index(partition_a: dict, partition_b: dict) -> float:
    """Chance-corrected agreement between two labelings of the same players."""
    if set(partition_a) != set(partition_b):
        raise ValueError("partitions cover different player sets")
    n = len(partition_a)
    contingency: dict[tuple, int] = {}
    counts_a: dict = {}
    counts_b: dict = {}
    for pid, la in partition_a.items():
        lb = partition_b[pid]
        contingency[(la, lb)] = contingency.get((la, lb), 0) + 1
        counts_a[la] = counts_a.get(la, 0) + 1
        counts_b[lb] = counts_b.get(lb, 0) + 1

    index = sum(math.comb(c, 2) for c in contingency.values())
    sum_a = sum(math.comb(c, 2) for c in counts_a.values())
    sum_b = sum(math.comb(c, 2) for c in counts_b.values())
    pairs = math.comb(n, 2)
    expected = sum_a * sum_b / pairs if pairs else 0.0
    maximum = (sum_a + sum_b) / 2.0
    if maximum == expected:
        return 1.0
    return float((index - expected) / (maximum - expected))


# ---------------------------------------------------------------------------
# file outputs

def write_match_log(rows: list[dict], path):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def write_ground_truth(truth: GroundTruth, path, config: dict | None = None):
    payload = {
        "spec": asdict(truth.spec),
        "alpha": truth.alpha.tolist(),
        "means": truth.means.tolist(),
        "labels": truth.labels,
        "hybrid_pairs": {pid: list(pair)
                         for pid, pair in truth.hybrid_pairs.items()},
        "vocabulary": truth.vocab.to_json_dict(),
    }
    if config is not None:
        payload["config"] = config
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_ground_truth(path) -> GroundTruth:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    spec_fields = dict(payload["spec"])
    spec_fields["matches_per_player"] = tuple(spec_fields["matches_per_player"])
    return GroundTruth(
        means=np.array(payload["means"], dtype=float),
        labels={pid: int(v) for pid, v in payload["labels"].items()},
        hybrid_pairs={pid: tuple(v)
                      for pid, v in payload["hybrid_pairs"].items()},
        alpha=np.array(payload["alpha"], dtype=float),
        vocab=CovariateVocabulary.from_json_dict(payload["vocabulary"]),
        spec=SyntheticSpec(**spec_fields),
    )
