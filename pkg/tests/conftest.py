"""Shared fixtures: a small end-to-end pipeline over synthetic data."""

import json
from types import SimpleNamespace

import pytest

from playstyles import dpcluster as dp
from playstyles import ingest as ing
from playstyles import regress as rg
from playstyles import synth


def run_pipeline(spec, *, iterations=60, burn_in=10, seed=0, omega=1.0,
                 kmeans_k=None, split_fraction=0.10):
    """Generate, ingest, fit, and sample in one go; returns all the pieces."""
    rows_dicts, truth = synth.generate(spec)
    lines = [json.dumps(r) for r in rows_dicts]
    records, vocab = ing.parse_match_log(lines)
    kept = ing.filter_matches(records)
    design = ing.encode_matches(kept, vocab)
    split = rg.split_holdout(design, fraction=split_fraction, seed=seed)
    global_fit = rg.fit_global(split.train)
    stats = rg.player_suffstats(split.train, global_fit.alpha)
    styles = rg.fit_player_effects_from_stats(stats)
    mse_player = rg.player_model_mse(stats, styles, vocab.total_width)
    config = dp.SamplerConfig(iterations=iterations, burn_in=burn_in, seed=seed,
                              sigma2=mse_player, omega=omega, kmeans_k=kmeans_k)
    trace, state, rng = dp.run_sampler(styles, stats, config)
    return SimpleNamespace(
        spec=spec, truth=truth, records=records, vocab=vocab, design=design,
        split=split, global_fit=global_fit, stats=stats, styles=styles,
        mse_player=mse_player, config=config, trace=trace, state=state, rng=rng,
    )


@pytest.fixture(scope="session")
def small_pipeline():
    """30 players, 3 planted styles, enough sweeps for stable reports."""
    spec = synth.SyntheticSpec(n_players=30, n_true_clusters=3,
                               matches_per_player=(40, 40), seed=11)
    return run_pipeline(spec, iterations=60, burn_in=10, seed=11)
