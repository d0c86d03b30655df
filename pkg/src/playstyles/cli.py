"""Command-line pipeline: simulate -> ingest -> fit -> sample -> analyze.

Stages communicate only through explicit file paths, every stochastic
stage takes a seed, and each output embeds the config that produced it,
so a full rerun from recorded configs reproduces the run bit for bit.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import analyze as an
from . import dpcluster as dp
from . import figures
from . import ingest as ing
from . import regress as rg
from . import synth


def _parse_matches(text: str) -> tuple[int, int]:
    if ":" in text:
        lo, hi = text.split(":", 1)
        return int(lo), int(hi)
    value = int(text)
    return value, value


def cmd_simulate(args) -> int:
    spec = synth.SyntheticSpec(
        n_players=args.players,
        n_true_clusters=args.clusters,
        matches_per_player=_parse_matches(args.matches),
        n_roles=args.roles,
        n_game_types=args.game_types,
        n_maps=args.maps,
        noise_sd=args.noise_sd,
        style_separation=args.separation,
        hybrid_fraction=args.hybrid_fraction,
        seed=args.seed,
    )
    rows, truth = synth.generate(spec)
    config = {"command": "simulate", **vars(spec)}
    config["matches_per_player"] = list(spec.matches_per_player)
    synth.write_match_log(rows, args.out_log)
    synth.write_ground_truth(truth, args.out_truth, config=config)
    print(f"simulate: wrote {len(rows)} match rows for {spec.n_players} players "
          f"({len(truth.hybrid_pairs)} hybrid)")
    return 0


def cmd_ingest(args) -> int:
    vocab = None
    if args.vocab_mode == "fixed":
        if not args.vocab_in:
            raise ValueError("fixed vocab mode requires --vocab-in")
        vocab = ing.load_vocabulary(args.vocab_in)
    records, vocab = ing.parse_match_log(args.log, vocab_mode=args.vocab_mode,
                                         vocab=vocab)
    kept = ing.filter_matches(records)
    rows = ing.encode_matches(kept, vocab)
    if not rows:
        raise ValueError("no rows survived filtering")
    config = {
        "command": "ingest",
        "log": str(args.log),
        "vocab_mode": args.vocab_mode,
    }
    ing.save_design(rows, vocab, args.out_design, config=config)
    ing.save_vocabulary(vocab, args.out_vocab, config=config)
    print(f"ingest: kept {len(rows)} of {len(records)} rows, "
          f"design width {vocab.total_width}")
    return 0


def _load_split(rows, manifest_path) -> rg.HoldoutSplit:
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    test_keys = {
        (pid, mid)
        for pid, mids in manifest["test_match_ids"].items()
        for mid in mids
    }
    train = [r for r in rows if (r.player_id, r.match_id) not in test_keys]
    test = [r for r in rows if (r.player_id, r.match_id) in test_keys]
    return rg.HoldoutSplit(train=train, test=test, seed=int(manifest["seed"]))


def cmd_fit(args) -> int:
    rows = ing.load_design(args.design)
    if not rows:
        raise ValueError("empty design")
    vocab = ing.load_vocabulary(args.vocab)
    if vocab.total_width != rows[0].width:
        raise ValueError("vocabulary width does not match design width")

    split = rg.split_holdout(rows, fraction=args.split_fraction, seed=args.seed)
    global_fit = rg.fit_global(split.train, lambda_g=args.lambda_global)
    stats = rg.player_suffstats(split.train, global_fit.alpha)
    styles = rg.fit_player_effects_from_stats(stats, args.lambda_player)
    mse_player = rg.player_model_mse(stats, styles, vocab.total_width,
                                     args.lambda_player)

    config = {
        "command": "fit",
        "design": str(args.design),
        "seed": args.seed,
        "split_fraction": args.split_fraction,
        "lambda_global": args.lambda_global,
        "lambda_player": args.lambda_player,
    }
    rg.save_fit(args.out_fit, global_fit, styles, mse_player, config=config)
    rg.write_coefficients_csv(args.out_coefficients, vocab.column_labels(),
                              global_fit, config=config)
    rg.write_split_manifest(args.out_split, split, config=config)
    print(f"fit: {len(styles)} players, {global_fit.n_obs} training rows, "
          f"global mse {global_fit.mse:.4f}, player-model mse {mse_player:.4f}")
    return 0


def cmd_sample(args) -> int:
    rows = ing.load_design(args.design)
    global_fit, styles, mse_player, _ = rg.load_fit(args.fit)
    split = _load_split(rows, args.split)
    stats = rg.player_suffstats(split.train, global_fit.alpha)

    if args.resume:
        state, trace, rng = dp.load_checkpoint(args.resume)
        dp.continue_sampler(state, trace, stats, rng, args.iterations)
        config = trace.config
    else:
        config = dp.SamplerConfig(
            iterations=args.iterations,
            burn_in=args.burn_in,
            seed=args.seed,
            omega=args.omega,
            sigma2=args.sigma2 if args.sigma2 is not None else mse_player,
            thinning=args.thinning,
            kmeans_k=args.kmeans_k,
            resample_sigma2=args.resample_sigma2,
        )
        trace, state, rng = dp.run_sampler(styles, stats, config)

    run_config = {
        "command": "sample",
        "fit": str(args.fit),
        "resumed_from": str(args.resume) if args.resume else None,
        "extra_iterations": args.iterations if args.resume else None,
    }
    dp.save_checkpoint(args.out_checkpoint, state, trace, rng,
                       extra_config=run_config)
    dp.export_trace_jsonl(trace, args.out_trace)
    print(f"sample: iteration {state.iteration}, {state.n_clusters} clusters, "
          f"MAP score {trace.map_score:.2f} at iteration {trace.map_iteration}")
    return 0


def _representative_players(map_state, styles, reports):
    chosen = []
    for report in reports:
        members = map_state.clusters[report.cluster_id].members
        mean = map_state.clusters[report.cluster_id].mean
        best = min(sorted(members),
                   key=lambda pid: float(np.linalg.norm(styles[pid].beta - mean)))
        chosen.append(best)
    return chosen


def cmd_analyze(args) -> int:
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)

    state, trace, _ = dp.load_checkpoint(args.checkpoint)
    if trace.map_state is None:
        raise ValueError("checkpoint has no MAP state")
    map_state = trace.map_state
    global_fit, styles, _, _ = rg.load_fit(args.fit)
    rows = ing.load_design(args.design)
    vocab = ing.load_vocabulary(args.vocab)
    split = _load_split(rows, args.split)

    config = {
        "command": "analyze",
        "checkpoint": str(args.checkpoint),
        "burn_in": args.burn_in,
        "min_size": args.min_size,
        "top_clusters": args.top_clusters,
        "alpha_level": args.alpha_level,
        "sampler_config": trace.config.to_dict(),
    }

    metrics = an.evaluate_models(split, global_fit, styles, map_state)
    an.write_metrics_json(out / "metrics.json", metrics, config=config)

    dist = an.cluster_size_distribution(map_state, min_size=args.min_size)
    an.write_size_histogram_csv(out / "cluster_sizes.csv", dist, config=config)

    reports = an.top_cluster_reports(map_state, vocab, m=args.top_clusters)
    an.write_cluster_reports_csv(out / "cluster_coefficients.csv", reports,
                                 config=config)
    an.write_cluster_reports_json(out / "clusters.json", reports, config=config)

    stability = an.classify_stability(trace, burn_in=args.burn_in)
    an.write_stability_csv(out / "stability.csv", stability, config=config)
    an.write_visits_csv(out / "cluster_visits.csv", stability, config=config)

    if args.profile_players:
        profile_ids = [p.strip() for p in args.profile_players.split(",") if p.strip()]
    else:
        profile_ids = _representative_players(map_state, styles, reports)
    global_mean = float(np.mean(ing.responses(rows)))
    profiles = [an.player_profile(pid, rows, vocab, global_mean,
                                  alpha_level=args.alpha_level)
                for pid in profile_ids]
    an.write_profiles_csv(out / "profiles.csv", profiles, config=config)

    if not args.no_plots:
        figures.plot_cluster_sizes(dist, out / "cluster_sizes.png")
        figures.plot_cluster_coefficients(reports,
                                          out / "cluster_coefficients.png")
        figures.plot_profiles(profiles, out / "profiles.png")
        figures.plot_visit_distribution(stability, out / "cluster_visits.png")

    n_stable = sum(r.stable for r in stability)
    n_hybrid = sum(r.hybrid for r in stability)
    print(f"analyze: rmse_global_mean {metrics['rmse_global_mean']:.3f}, "
          f"rmse_ols {metrics['rmse_ols']:.3f}, "
          f"rmse_clustered {metrics['rmse_clustered']:.3f}, "
          f"K/n {metrics['unique_coeff_ratio']:.3f}; "
          f"{n_stable} stable, {n_hybrid} hybrid of {len(stability)} players")
    return 0


def build_parser() -> argparse.ArgumentParser:
    from pathlib import Path

    parser = argparse.ArgumentParser(
        prog="playstyles",
        description="Discover latent play styles in multiplayer match telemetry.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic match log")
    sim.add_argument("--out-log", type=Path, required=True)
    sim.add_argument("--out-truth", type=Path, required=True)
    sim.add_argument("--players", type=int, default=120)
    sim.add_argument("--clusters", type=int, default=5)
    sim.add_argument("--matches", type=str, default="150",
                     help="matches per player, N or LO:HI")
    sim.add_argument("--roles", type=int, default=5)
    sim.add_argument("--game-types", type=int, default=4)
    sim.add_argument("--maps", type=int, default=8)
    sim.add_argument("--noise-sd", type=float, default=0.3)
    sim.add_argument("--separation", type=float, default=1.0)
    sim.add_argument("--hybrid-fraction", type=float, default=0.0)
    sim.add_argument("--seed", type=int, default=0)
    sim.set_defaults(func=cmd_simulate)

    ig = sub.add_parser("ingest", help="parse, filter, and encode a match log")
    ig.add_argument("--log", type=Path, required=True)
    ig.add_argument("--out-design", type=Path, required=True)
    ig.add_argument("--out-vocab", type=Path, required=True)
    ig.add_argument("--vocab-mode", choices=("discover", "fixed"),
                    default="discover")
    ig.add_argument("--vocab-in", type=Path, default=None,
                    help="existing vocabulary JSON for fixed mode")
    ig.set_defaults(func=cmd_ingest)

    fit = sub.add_parser("fit", help="fit global and per-player coefficients")
    fit.add_argument("--design", type=Path, required=True)
    fit.add_argument("--vocab", type=Path, required=True)
    fit.add_argument("--out-fit", type=Path, required=True)
    fit.add_argument("--out-coefficients", type=Path, required=True)
    fit.add_argument("--out-split", type=Path, required=True)
    fit.add_argument("--split-fraction", type=float, default=0.10)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--lambda-global", type=float, default=None)
    fit.add_argument("--lambda-player", type=float, default=None)
    fit.set_defaults(func=cmd_fit)

    smp = sub.add_parser("sample", help="run the Gibbs sampler over play styles")
    smp.add_argument("--design", type=Path, required=True)
    smp.add_argument("--fit", type=Path, required=True)
    smp.add_argument("--split", type=Path, required=True)
    smp.add_argument("--out-checkpoint", type=Path, required=True)
    smp.add_argument("--out-trace", type=Path, required=True)
    smp.add_argument("--iterations", type=int, default=200)
    smp.add_argument("--burn-in", type=int, default=20)
    smp.add_argument("--seed", type=int, default=0)
    smp.add_argument("--omega", type=float, default=1.0)
    smp.add_argument("--sigma2", type=float, default=None,
                     help="override the player-model MSE plug-in")
    smp.add_argument("--thinning", type=int, default=1)
    smp.add_argument("--kmeans-k", type=int, default=None)
    smp.add_argument("--resample-sigma2", action="store_true")
    smp.add_argument("--resume", type=Path, default=None,
                     help="checkpoint to continue; --iterations adds sweeps")
    smp.set_defaults(func=cmd_sample)

    ana = sub.add_parser("analyze", help="evaluate models and write reports")
    ana.add_argument("--checkpoint", type=Path, required=True)
    ana.add_argument("--fit", type=Path, required=True)
    ana.add_argument("--design", type=Path, required=True)
    ana.add_argument("--vocab", type=Path, required=True)
    ana.add_argument("--split", type=Path, required=True)
    ana.add_argument("--out-dir", type=Path, required=True)
    ana.add_argument("--min-size", type=int, default=2)
    ana.add_argument("--top-clusters", type=int, default=4)
    ana.add_argument("--burn-in", type=int, default=None,
                     help="override the sampler's recorded burn-in")
    ana.add_argument("--alpha-level", type=float, default=0.05)
    ana.add_argument("--profile-players", type=str, default=None,
                     help="comma-separated player ids; default picks one "
                          "representative per top cluster")
    ana.add_argument("--no-plots", action="store_true",
                     help="skip figure rendering")
    ana.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
