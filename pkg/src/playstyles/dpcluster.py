"""Dirichlet-process Gibbs clustering of per-player coefficient vectors.

Estimation runs in three phases.  K-means (k-means++ seeding, default
K = round(sqrt(n/2))) groups the per-player least-squares styles and the
resulting centers give the normal base measure F0 = N(mu, diag(Lambda)).
Each Gibbs sweep then revisits every player: membership weights are
n_k * exp(-SSE_k / (2 sigma^2)) for existing clusters and
omega * exp(-SSE_* / (2 sigma^2)) for a fresh draw from F0, where SSE is
the player's squared prediction error under the candidate style, computed
from cached sufficient statistics.  Cluster means sit at the
F0-regularized posterior mode of their members' pooled statistics and are
refreshed whenever membership changes; emptied clusters are dropped.
A partition score (data likelihood + Chinese-restaurant prior + F0
density of the cluster means) ranks recorded states to track the MAP
partition within a run.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.special import gammaln, logsumexp

from .regress import PlayerStyle, PlayerSuffStats

BASE_VARIANCE_FLOOR = 1e-6
BASE_VARIANCE_FLOOR_MEDIAN_SCALE = 1e-3

KMEANS_MAX_ITER = 100
KMEANS_TOL = 1e-6

CHECKPOINT_FORMAT = "playstyles-checkpoint-v1"


@dataclass
class BaseMeasure:
    """Normal base measure F0 = N(mu, diag(lambda_diag)) for new styles."""

    mu: np.ndarray
    lambda_diag: np.ndarray
    floor: float

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.lambda_diag = np.asarray(self.lambda_diag, dtype=float)
        if self.floor <= 0:
            raise ValueError("variance floor must be positive")
        if self.mu.shape != self.lambda_diag.shape:
            raise ValueError("mu and lambda_diag must have the same shape")
        if np.any(self.lambda_diag < self.floor):
            raise ValueError("lambda_diag entries must not fall below the floor")

    def log_density(self, vector: np.ndarray) -> float:
        dev = np.asarray(vector) - self.mu
        return float(-0.5 * np.sum(np.log(2.0 * np.pi * self.lambda_diag)
                                   + dev * dev / self.lambda_diag))


@dataclass
class Cluster:
    """A unique play style: mean vector plus its member set."""

    id: int
    mean: np.ndarray
    members: set[str]

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass
class PartitionState:
    """Current clusters, assignments, and fixed model parameters."""

    clusters: dict[int, Cluster]
    assignment: dict[str, int]
    sigma2: float
    omega: float
    base: BaseMeasure | None
    iteration: int = 0
    next_cluster_id: int = 0

    @property
    def n_players(self) -> int:
        return len(self.assignment)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def cluster_order(self) -> list[int]:
        return sorted(self.clusters)

    def labels(self) -> dict[str, int]:
        return dict(self.assignment)

    def check_consistency(self):
        seen: set[str] = set()
        for cid, cluster in self.clusters.items():
            if cluster.size == 0:
                raise AssertionError(f"cluster {cid} is empty")
            for pid in cluster.members:
                if self.assignment.get(pid) != cid:
                    raise AssertionError(f"{pid} not assigned to cluster {cid}")
            seen |= cluster.members
        if seen != set(self.assignment):
            raise AssertionError("assignment and member sets disagree")

    def copy(self) -> "PartitionState":
        return PartitionState(
            clusters={cid: Cluster(cid, c.mean.copy(), set(c.members))
                      for cid, c in self.clusters.items()},
            assignment=dict(self.assignment),
            sigma2=self.sigma2,
            omega=self.omega,
            base=self.base,
            iteration=self.iteration,
            next_cluster_id=self.next_cluster_id,
        )


@dataclass
class SamplerConfig:
    iterations: int = 200
    burn_in: int = 20
    seed: int = 0
    omega: float = 1.0
    sigma2: float | None = None
    thinning: int = 1
    kmeans_k: int | None = None
    resample_sigma2: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "SamplerConfig":
        return cls(**payload)


@dataclass
class SamplerTrace:
    """Recorded assignments and scores, plus the best state seen so far.

    MAP candidates are the initial state (iteration 0) and every recorded
    iteration past burn-in; burn-in sweeps are recorded for stability
    analysis but never crowned MAP.
    """

    player_ids: tuple[str, ...]
    config: SamplerConfig
    iterations: list[int] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)
    assignments: list[np.ndarray] = field(default_factory=list)
    map_state: PartitionState | None = None
    map_score: float = -math.inf
    map_iteration: int = -1

    def record(self, state: PartitionState, score: float):
        self.iterations.append(state.iteration)
        self.scores.append(score)
        self.assignments.append(
            np.array([state.assignment[p] for p in self.player_ids], dtype=np.int64))
        eligible = state.iteration == 0 or state.iteration > self.config.burn_in
        if eligible and score > self.map_score:
            self.map_score = score
            self.map_iteration = state.iteration
            self.map_state = state.copy()


# ---------------------------------------------------------------------------
# initialization

def _kmeans_plus_plus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers[i] = X[idx]
        d2 = np.minimum(d2, np.sum((X - centers[i]) ** 2, axis=1))
    return centers


def _kmeans(X: np.ndarray, k: int, rng: np.random.Generator,
            max_iter: int = KMEANS_MAX_ITER,
            tol: float = KMEANS_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding.

    Stops when the largest center movement falls below ``tol``.  An
    emptied center is reseeded at the point farthest from its assigned
    center, so returned labels always cover k non-empty clusters when
    k <= n distinct points allow it.
    """
    centers = _kmeans_plus_plus(X, k, rng)
    labels = np.zeros(X.shape[0], dtype=np.int64)
    for _ in range(max_iter):
        dist = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        labels = np.argmin(dist, axis=1)
        new_centers = centers.copy()
        for j in range(k):
            mask = labels == j
            if np.any(mask):
                new_centers[j] = X[mask].mean(axis=0)
            else:
                farthest = np.argmax(np.min(dist, axis=1))
                new_centers[j] = X[farthest]
        shift = np.max(np.linalg.norm(new_centers - centers, axis=1))
        centers = new_centers
        if shift < tol:
            break
    dist = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    labels = np.argmin(dist, axis=1)
    return centers, labels


def default_k(n_players: int) -> int:
    """Cluster-count heuristic round(sqrt(n/2)), at least 1."""
    return max(1, round(math.sqrt(n_players / 2.0)))


def kmeans_init(
    styles: dict[str, PlayerStyle],
    k: int | None = None,
    seed: int = 0,
    rng: np.random.Generator | None = None,
    sigma2: float = 1.0,
    omega: float = 1.0,
    base: BaseMeasure | None = None,
) -> PartitionState:
    """K-means over player styles, each player snapped to its center.

    Only non-empty K-means clusters become partition clusters, so the
    returned state can hold fewer than k clusters for degenerate inputs
    (for example fewer distinct style vectors than k).
    """
    pids = sorted(styles)
    n = len(pids)
    if n < 2:
        raise ValueError("kmeans_init requires at least 2 players")
    if k is None:
        k = default_k(n)
    if k < 1 or k > n:
        raise ValueError(f"k must be in 1..{n}, got {k}")

    X = np.stack([styles[p].beta for p in pids])
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite style vectors")
    if rng is None:
        rng = np.random.default_rng(seed)
    centers, labels = _kmeans(X, k, rng)

    clusters: dict[int, Cluster] = {}
    assignment: dict[str, int] = {}
    next_id = 0
    for j in range(k):
        members = {pids[i] for i in np.nonzero(labels == j)[0]}
        if not members:
            continue
        clusters[next_id] = Cluster(next_id, centers[j].copy(), members)
        for pid in members:
            assignment[pid] = next_id
        next_id += 1
    return PartitionState(
        clusters=clusters,
        assignment=assignment,
        sigma2=sigma2,
        omega=omega,
        base=base,
        iteration=0,
        next_cluster_id=next_id,
    )


def estimate_base_measure(centers) -> BaseMeasure:
    """Mean and floored per-coordinate variance of the K-means centers."""
    centers = np.asarray(centers, dtype=float)
    if centers.ndim != 2 or centers.shape[0] < 2:
        raise ValueError(
            "estimating the base measure needs at least 2 centers; "
            "supply an explicit BaseMeasure instead")
    mu = centers.mean(axis=0)
    var = centers.var(axis=0, ddof=1)
    floor = max(BASE_VARIANCE_FLOOR,
                BASE_VARIANCE_FLOOR_MEDIAN_SCALE * float(np.median(var)))
    return BaseMeasure(mu=mu, lambda_diag=np.maximum(var, floor), floor=floor)


# ---------------------------------------------------------------------------
# sweep machinery

def player_loglik(stats: PlayerSuffStats, candidate: np.ndarray,
                  sigma2: float) -> float:
    """-(1 / 2 sigma^2) * sum of squared residuals under ``candidate``.

    Evaluated from the cached statistics as
    r'r - 2 c'(X'r) + c'(X'X)c, identical to the row-by-row sum.
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    c = np.asarray(candidate, dtype=float)
    sse = stats.rtr - 2.0 * c @ stats.xtr + c @ stats.xtx @ c
    return float(-sse / (2.0 * sigma2))


def _cluster_logliks(stats: PlayerSuffStats, means: np.ndarray,
                     sigma2: float) -> np.ndarray:
    quad = np.einsum("kp,pq,kq->k", means, stats.xtx, means)
    lin = means @ stats.xtr
    return -(stats.rtr - 2.0 * lin + quad) / (2.0 * sigma2)


def reassignment_probs(
    stats: PlayerSuffStats,
    state: PartitionState,
    fresh_draw: np.ndarray,
) -> tuple[list[int], np.ndarray]:
    """Posterior assignment probabilities over existing clusters plus a new one.

    The caller must already have removed the player from its cluster so
    that member counts exclude it.  Returns the cluster ids in the order
    matching the first K probabilities; the last entry is the new-cluster
    option seeded by ``fresh_draw``.  Normalization happens in log space,
    so weight spreads of hundreds of log units are safe.
    """
    ids = state.cluster_order()
    sizes = np.array([state.clusters[c].size for c in ids], dtype=float)
    if len(ids) > 0:
        means = np.stack([state.clusters[c].mean for c in ids])
        ll = _cluster_logliks(stats, means, state.sigma2)
    else:
        ll = np.empty(0)
    ll_new = player_loglik(stats, fresh_draw, state.sigma2)

    with np.errstate(divide="ignore"):
        log_weights = np.concatenate([
            np.log(sizes) + ll,
            [(math.log(state.omega) if state.omega > 0 else -math.inf) + ll_new],
        ])
    norm = logsumexp(log_weights)
    if not np.isfinite(norm):
        raise ValueError("all reassignment weights vanished")
    probs = np.exp(log_weights - norm)
    probs /= probs.sum()
    return ids, probs


def sample_new_style(base: BaseMeasure, rng: np.random.Generator) -> np.ndarray:
    """One draw from F0."""
    return base.mu + np.sqrt(base.lambda_diag) * rng.standard_normal(len(base.mu))


def _pooled_stats(cluster: Cluster, stats: dict[str, PlayerSuffStats]):
    """Sum of member statistics, accumulated in sorted-member order.

    Re-deriving the pool from the per-player cache on every call keeps
    remove/re-add cycles exact: the pool is a pure function of the member
    set, with no incremental drift.
    """
    members = sorted(cluster.members)
    first = stats[members[0]]
    xtx = first.xtx.copy()
    xtr = first.xtr.copy()
    rtr = first.rtr
    n_rows = first.n_rows
    for pid in members[1:]:
        st = stats[pid]
        xtx += st.xtx
        xtr += st.xtr
        rtr += st.rtr
        n_rows += st.n_rows
    return xtx, xtr, rtr, n_rows


def update_cluster_mean(cluster: Cluster, state: PartitionState,
                        stats: dict[str, PlayerSuffStats]) -> np.ndarray:
    """Set the cluster mean to its F0-regularized posterior mode.

    Solves (X'X / sigma^2 + Lambda^-1) m = (X'r / sigma^2 + Lambda^-1 mu)
    over the members' pooled statistics; the variance floor keeps the
    system positive definite.
    """
    if state.base is None:
        raise ValueError("state has no base measure")
    if cluster.size == 0:
        raise ValueError("cannot update the mean of an empty cluster")
    xtx, xtr, _, _ = _pooled_stats(cluster, stats)
    inv_lambda = 1.0 / state.base.lambda_diag
    A = xtx / state.sigma2 + np.diag(inv_lambda)
    b = xtr / state.sigma2 + inv_lambda * state.base.mu
    try:
        mean = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise ValueError("cluster mean system is not positive definite") from exc
    cluster.mean = mean
    return mean


def gibbs_sweep(state: PartitionState, stats: dict[str, PlayerSuffStats],
                rng: np.random.Generator) -> PartitionState:
    """One full sweep reassigning every player in a random order.

    Per visit: drop the player from its cluster (removing the cluster if
    emptied), draw a fresh candidate style from F0, sample the new
    assignment from the posterior weights, then refresh the means of the
    source and destination clusters.
    """
    pids = sorted(state.assignment)
    order = rng.permutation(len(pids))
    for i in order:
        pid = pids[i]
        source = state.assignment[pid]
        cluster = state.clusters[source]
        cluster.members.discard(pid)
        source_alive = cluster.size > 0
        if not source_alive:
            del state.clusters[source]
            if not state.clusters and state.omega == 0:
                # no other cluster and no mass on a fresh draw: the only
                # possible move is staying put, so restore and move on
                cluster.members.add(pid)
                state.clusters[source] = cluster
                continue

        fresh = sample_new_style(state.base, rng)
        ids, probs = reassignment_probs(stats[pid], state, fresh)
        choice = rng.choice(len(probs), p=probs)
        if choice == len(ids):
            dest = state.next_cluster_id
            state.next_cluster_id += 1
            state.clusters[dest] = Cluster(dest, fresh.copy(), {pid})
        else:
            dest = ids[choice]
            state.clusters[dest].members.add(pid)
        state.assignment[pid] = dest

        if source_alive and source != dest:
            update_cluster_mean(state.clusters[source], state, stats)
        update_cluster_mean(state.clusters[dest], state, stats)
    state.iteration += 1
    return state


def partition_score(state: PartitionState,
                    stats: dict[str, PlayerSuffStats]) -> float:
    """Joint score used to rank states within a run (higher is better).

    Data log likelihood at the cluster means, plus the
    Chinese-restaurant partition prior K log(omega) + sum log Gamma(n_k)
    up to a constant, plus the F0 log density of each cluster mean.
    """
    # iterate in sorted order so the float accumulation is identical no
    # matter how the member sets and cluster dict were built
    ll = 0.0
    crp = 0.0
    prior = 0.0
    for cid in state.cluster_order():
        cluster = state.clusters[cid]
        for pid in sorted(cluster.members):
            ll += player_loglik(stats[pid], cluster.mean, state.sigma2)
        crp += gammaln(cluster.size)
        prior += state.base.log_density(cluster.mean)
    if state.omega > 0:
        crp += state.n_clusters * math.log(state.omega)
    else:
        crp = -math.inf
    return float(ll + crp + prior)


def _total_ssr(state: PartitionState, stats: dict[str, PlayerSuffStats]) -> float:
    ssr = 0.0
    for cid in state.cluster_order():
        cluster = state.clusters[cid]
        m = cluster.mean
        for pid in sorted(cluster.members):
            st = stats[pid]
            ssr += st.rtr - 2.0 * m @ st.xtr + m @ st.xtx @ m
    return max(ssr, 0.0)


def _resample_sigma2(state: PartitionState, stats: dict[str, PlayerSuffStats],
                     rng: np.random.Generator):
    # conjugate update under the Jeffreys prior 1/sigma^2
    n_rows = sum(st.n_rows for st in stats.values())
    ssr = _total_ssr(state, stats)
    state.sigma2 = (ssr / 2.0) / rng.standard_gamma(n_rows / 2.0)


# ---------------------------------------------------------------------------
# driver

def run_sampler(
    styles: dict[str, PlayerStyle],
    stats: dict[str, PlayerSuffStats],
    config: SamplerConfig,
    base: BaseMeasure | None = None,
) -> tuple[SamplerTrace, PartitionState, np.random.Generator]:
    """K-means init, base-measure estimation, then ``config.iterations`` sweeps.

    Returns the trace plus the final state and generator so callers can
    checkpoint and resume.  ``config.sigma2`` must be set (the pipeline
    plugs in the player-model MSE); ``iterations=0`` records only the
    initial state.
    """
    if config.iterations < 0:
        raise ValueError("iterations must be non-negative")
    if config.thinning < 1:
        raise ValueError("thinning must be at least 1")
    if config.sigma2 is None or config.sigma2 <= 0:
        raise ValueError("config.sigma2 must be a positive residual variance")
    if set(styles) != set(stats):
        raise ValueError("styles and suffstats cover different players")

    rng = np.random.default_rng(config.seed)
    state = kmeans_init(styles, k=config.kmeans_k, rng=rng,
                        sigma2=config.sigma2, omega=config.omega, base=base)
    if state.base is None:
        if state.n_clusters < 2:
            raise ValueError(
                "single-cluster init cannot estimate a base measure; "
                "pass one explicitly")
        centers = np.stack([state.clusters[c].mean for c in state.cluster_order()])
        state.base = estimate_base_measure(centers)

    trace = SamplerTrace(player_ids=tuple(sorted(styles)), config=config)
    trace.record(state, partition_score(state, stats))
    continue_sampler(state, trace, stats, rng, config.iterations)
    return trace, state, rng


def continue_sampler(
    state: PartitionState,
    trace: SamplerTrace,
    stats: dict[str, PlayerSuffStats],
    rng: np.random.Generator,
    extra_iterations: int,
) -> tuple[SamplerTrace, PartitionState]:
    """Advance an existing run by ``extra_iterations`` sweeps."""
    if extra_iterations < 0:
        raise ValueError("extra_iterations must be non-negative")
    config = trace.config
    for _ in range(extra_iterations):
        gibbs_sweep(state, stats, rng)
        if config.resample_sigma2:
            _resample_sigma2(state, stats, rng)
        if state.iteration % config.thinning == 0:
            trace.record(state, partition_score(state, stats))
    return trace, state


# ---------------------------------------------------------------------------
# checkpointing and trace export

def _state_to_dict(state: PartitionState) -> dict:
    return {
        "iteration": state.iteration,
        "sigma2": state.sigma2,
        "omega": state.omega,
        "next_cluster_id": state.next_cluster_id,
        "base": None if state.base is None else {
            "mu": state.base.mu.tolist(),
            "lambda_diag": state.base.lambda_diag.tolist(),
            "floor": state.base.floor,
        },
        "clusters": [
            {
                "id": cid,
                "mean": state.clusters[cid].mean.tolist(),
                "members": sorted(state.clusters[cid].members),
            }
            for cid in state.cluster_order()
        ],
    }


def _state_from_dict(payload: dict) -> PartitionState:
    clusters: dict[int, Cluster] = {}
    assignment: dict[str, int] = {}
    for entry in payload["clusters"]:
        cid = int(entry["id"])
        members = set(entry["members"])
        clusters[cid] = Cluster(cid, np.array(entry["mean"], dtype=float), members)
        for pid in members:
            assignment[pid] = cid
    base = payload["base"]
    return PartitionState(
        clusters=clusters,
        assignment=assignment,
        sigma2=float(payload["sigma2"]),
        omega=float(payload["omega"]),
        base=None if base is None else BaseMeasure(
            mu=np.array(base["mu"], dtype=float),
            lambda_diag=np.array(base["lambda_diag"], dtype=float),
            floor=float(base["floor"]),
        ),
        iteration=int(payload["iteration"]),
        next_cluster_id=int(payload["next_cluster_id"]),
    )


def save_checkpoint(path, state: PartitionState, trace: SamplerTrace,
                    rng: np.random.Generator, extra_config: dict | None = None):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": trace.config.to_dict(),
        "run_config": extra_config or {},
        "rng_state": rng.bit_generator.state,
        "state": _state_to_dict(state),
        "trace": {
            "player_ids": list(trace.player_ids),
            "iterations": trace.iterations,
            "scores": trace.scores,
            "assignments": [a.tolist() for a in trace.assignments],
            "map_score": trace.map_score,
            "map_iteration": trace.map_iteration,
            "map_state": None if trace.map_state is None
            else _state_to_dict(trace.map_state),
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_checkpoint(path):
    """Restore (state, trace, rng) from a checkpoint file."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a {CHECKPOINT_FORMAT} file: {path}")

    state = _state_from_dict(payload["state"])
    config = SamplerConfig.from_dict(payload["config"])
    tr = payload["trace"]
    trace = SamplerTrace(
        player_ids=tuple(tr["player_ids"]),
        config=config,
        iterations=[int(i) for i in tr["iterations"]],
        scores=[float(s) for s in tr["scores"]],
        assignments=[np.array(a, dtype=np.int64) for a in tr["assignments"]],
        map_state=None if tr["map_state"] is None
        else _state_from_dict(tr["map_state"]),
        map_score=float(tr["map_score"]),
        map_iteration=int(tr["map_iteration"]),
    )
    bit_gen = np.random.PCG64()
    bit_gen.state = payload["rng_state"]
    rng = np.random.Generator(bit_gen)
    return state, trace, rng


def export_trace_jsonl(trace: SamplerTrace, path):
    """One line per recorded iteration: score, K, and assignment delta.

    The first record carries the full assignment; later records list only
    players whose cluster changed since the previous recorded iteration.
    """
    with open(path, "w", encoding="utf-8") as fh:
        previous: np.ndarray | None = None
        for it, score, assign in zip(trace.iterations, trace.scores,
                                     trace.assignments):
            if previous is None:
                delta = {pid: int(c)
                         for pid, c in zip(trace.player_ids, assign)}
            else:
                changed = np.nonzero(assign != previous)[0]
                delta = {trace.player_ids[i]: int(assign[i]) for i in changed}
            fh.write(json.dumps({
                "iteration": it,
                "score": score,
                "n_clusters": int(len(np.unique(assign))),
                "assignment_delta": delta,
            }) + "\n")
            previous = assign
