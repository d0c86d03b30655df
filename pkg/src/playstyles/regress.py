"""Global and per-player regression fits on encoded match data.

The joint model with shared and player-specific coefficients is not
identifiable as written (player blocks duplicate the global columns), so
estimation is staged: a lightly ridged global fit over all rows, then an
independent ridge fit of each player's coefficient offsets on that
player's residuals.  Per-player sufficient statistics (X'X, X'r, r'r)
are cached once and reused by the cluster sampler.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .ingest import DesignRow, design_matrix, responses

DEFAULT_GLOBAL_RIDGE_SCALE = 1e-8
DEFAULT_PLAYER_RIDGE_SCALE = 1e-6


@dataclass
class GlobalFit:
    """Shared coefficients, residual-variance estimate, and fit metadata."""

    alpha: np.ndarray
    mse: float
    n_obs: int
    rank: int
    lambda_g: float


@dataclass
class PlayerStyle:
    """One player's coefficient offsets, same column layout as the global fit."""

    player_id: str
    beta: np.ndarray


@dataclass
class PlayerSuffStats:
    """Cached X'X, X'r, r'r over one player's rows (r = residual response)."""

    player_id: str
    xtx: np.ndarray
    xtr: np.ndarray
    rtr: float
    n_rows: int


@dataclass
class HoldoutSplit:
    train: list[DesignRow]
    test: list[DesignRow]
    seed: int


def fit_global(rows: list[DesignRow], lambda_g: float | None = None) -> GlobalFit:
    """Least-squares fit of the shared coefficients over all rows.

    A tiny ridge penalty (never on the intercept) stabilizes the solve;
    ``lambda_g=None`` selects ``1e-8 * trace(X'X)/p``.  ``mse`` uses the
    ``n - rank(design)`` denominator.
    """
    X = design_matrix(rows)
    y = responses(rows)
    n, p = X.shape
    if n < p:
        raise ValueError(f"underdetermined fit: {n} rows for {p} columns")
    if not np.all(np.isfinite(X.data)) or not np.all(np.isfinite(y)):
        raise ValueError("non-finite values in design or response")

    xtx = np.asarray((X.T @ X).todense())
    xty = X.T @ y
    if lambda_g is None:
        lambda_g = DEFAULT_GLOBAL_RIDGE_SCALE * np.trace(xtx) / p
    elif lambda_g < 0:
        raise ValueError("lambda_g must be non-negative")

    penalty = np.full(p, lambda_g)
    penalty[0] = 0.0  # intercept unpenalized
    alpha = np.linalg.solve(xtx + np.diag(penalty), xty)

    residuals = y - X @ alpha
    rank = int(np.linalg.matrix_rank(xtx))
    dof = n - rank
    mse = float(residuals @ residuals / dof) if dof > 0 else 0.0
    return GlobalFit(alpha=alpha, mse=mse, n_obs=n, rank=rank,
                     lambda_g=float(lambda_g))


def player_suffstats(rows: list[DesignRow],
                     alpha: np.ndarray) -> dict[str, PlayerSuffStats]:
    """Per-player X'X, X'r, r'r on responses residualized against ``alpha``."""
    by_player: dict[str, list[int]] = {}
    for i, row in enumerate(rows):
        by_player.setdefault(row.player_id, []).append(i)

    X = design_matrix(rows)
    r = responses(rows) - X @ alpha
    stats: dict[str, PlayerSuffStats] = {}
    for pid in sorted(by_player):
        idx = by_player[pid]
        Xj = X[idx]
        rj = r[idx]
        stats[pid] = PlayerSuffStats(
            player_id=pid,
            xtx=np.asarray((Xj.T @ Xj).todense()),
            xtr=Xj.T @ rj,
            rtr=float(rj @ rj),
            n_rows=len(idx),
        )
    return stats


def _player_ridge(stats: PlayerSuffStats, lambda_p: float | None) -> float:
    if lambda_p is not None:
        if lambda_p <= 0:
            raise ValueError("lambda_p must be positive")
        return float(lambda_p)
    p = stats.xtx.shape[0]
    return DEFAULT_PLAYER_RIDGE_SCALE * np.trace(stats.xtx) / p


def fit_player_effects(
    rows: list[DesignRow],
    global_fit: GlobalFit,
    lambda_p: float | None = None,
) -> dict[str, PlayerStyle]:
    """Ridge fit of each player's coefficient offsets on their residuals.

    The full-norm penalty keeps rank-deficient per-player designs
    identifiable; ``lambda_p=None`` scales it to the player's own
    ``1e-6 * trace(X'X)/p``.
    """
    stats = player_suffstats(rows, global_fit.alpha)
    return fit_player_effects_from_stats(stats, lambda_p)


def fit_player_effects_from_stats(
    stats: dict[str, PlayerSuffStats],
    lambda_p: float | None = None,
) -> dict[str, PlayerStyle]:
    styles: dict[str, PlayerStyle] = {}
    for pid in sorted(stats):
        st = stats[pid]
        lam = _player_ridge(st, lambda_p)
        p = st.xtx.shape[0]
        beta = np.linalg.solve(st.xtx + lam * np.eye(p), st.xtr)
        styles[pid] = PlayerStyle(player_id=pid, beta=beta)
    return styles


def player_model_mse(
    stats: dict[str, PlayerSuffStats],
    styles: dict[str, PlayerStyle],
    width: int,
    lambda_p: float | None = None,
) -> float:
    """Residual variance of the per-player model, the sampler's sigma^2 plug-in.

    The residual sum of squares comes from the cached statistics; the
    denominator discounts the global column count plus the effective
    degrees of freedom of every per-player ridge fit.
    """
    rss = 0.0
    edf = 0.0
    n_obs = 0
    for pid, st in stats.items():
        beta = styles[pid].beta
        rss += st.rtr - 2.0 * beta @ st.xtr + beta @ st.xtx @ beta
        lam = _player_ridge(st, lambda_p)
        p = st.xtx.shape[0]
        edf += np.trace(np.linalg.solve(st.xtx + lam * np.eye(p), st.xtx))
        n_obs += st.n_rows
    dof = max(n_obs - width - edf, 1.0)
    return float(max(rss, 0.0) / dof)


def predict(style_effective: np.ndarray, row: DesignRow) -> float:
    """Dot product of a row's covariates with an effective coefficient vector."""
    if len(style_effective) != row.width:
        raise ValueError(
            f"width mismatch: vector has {len(style_effective)}, row has {row.width}")
    return float(row.values @ style_effective[row.indices])


def split_holdout(rows: list[DesignRow], fraction: float = 0.10,
                  seed: int = 0) -> HoldoutSplit:
    """Per-player holdout: floor(fraction * rows) random test rows each."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    by_player: dict[str, list[int]] = {}
    for i, row in enumerate(rows):
        by_player.setdefault(row.player_id, []).append(i)

    rng = np.random.default_rng(seed)
    test_idx: set[int] = set()
    for pid in sorted(by_player):
        idx = by_player[pid]
        k = math.floor(len(idx) * fraction)
        if k > 0:
            chosen = rng.choice(len(idx), size=k, replace=False)
            test_idx.update(idx[c] for c in chosen)

    train = [r for i, r in enumerate(rows) if i not in test_idx]
    test = [r for i, r in enumerate(rows) if i in test_idx]
    return HoldoutSplit(train=train, test=test, seed=seed)


def rmse(predictions, actuals) -> float:
    predictions = np.asarray(predictions, dtype=float)
    actuals = np.asarray(actuals, dtype=float)
    if predictions.size == 0:
        raise ValueError("rmse of empty input")
    if predictions.shape != actuals.shape:
        raise ValueError("prediction/actual length mismatch")
    return float(np.sqrt(np.mean((predictions - actuals) ** 2)))


# ---------------------------------------------------------------------------
# file formats: binary fit checkpoint, coefficient CSV, split manifest

def save_fit(path, global_fit: GlobalFit, styles: dict[str, PlayerStyle],
             mse_player: float, config: dict | None = None):
    """Binary checkpoint with the global fit and every player style."""
    pids = sorted(styles)
    betas = np.stack([styles[p].beta for p in pids]) if pids \
        else np.zeros((0, len(global_fit.alpha)))
    np.savez_compressed(
        path,
        alpha=global_fit.alpha,
        mse_global=global_fit.mse,
        n_obs=global_fit.n_obs,
        rank=global_fit.rank,
        lambda_g=global_fit.lambda_g,
        mse_player=mse_player,
        player_ids=np.array(pids, dtype=object),
        betas=betas,
        config=json.dumps(config or {}, sort_keys=True),
    )


def load_fit(path):
    with np.load(path, allow_pickle=True) as data:
        global_fit = GlobalFit(
            alpha=data["alpha"],
            mse=float(data["mse_global"]),
            n_obs=int(data["n_obs"]),
            rank=int(data["rank"]),
            lambda_g=float(data["lambda_g"]),
        )
        styles = {
            str(pid): PlayerStyle(player_id=str(pid), beta=beta)
            for pid, beta in zip(data["player_ids"], data["betas"])
        }
        mse_player = float(data["mse_player"])
        config = json.loads(str(data["config"]))
    return global_fit, styles, mse_player, config


def write_coefficients_csv(path, column_labels: list[str],
                           global_fit: GlobalFit, config: dict | None = None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if config is not None:
            fh.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
        writer = csv.writer(fh)
        writer.writerow(["column", "value"])
        for label, value in zip(column_labels, global_fit.alpha):
            writer.writerow([label, repr(float(value))])


def write_split_manifest(path, split: HoldoutSplit, config: dict | None = None):
    test_ids: dict[str, list[str]] = {}
    for row in split.test:
        test_ids.setdefault(row.player_id, []).append(row.match_id)
    payload = {
        "seed": split.seed,
        "test_match_ids": {pid: test_ids[pid] for pid in sorted(test_ids)},
    }
    if config is not None:
        payload["config"] = config
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")
