"""Fairness-aware re-ranking of top-N candidate lists into top-K lists.

Each user's base scores are adjusted with two signed gain terms, a
consumer term weighted by lambda1 and a producer term weighted by
lambda2, and the K candidates with the largest adjusted score are kept.
Because every candidate has unit weight and the only constraint is the
per-user list size, the greedy selection is the exact optimum of the
underlying integer program; the LP path solves the box relaxation per
user (a fractional knapsack) and reports any fractional boundary ties.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baserank import PAD_ITEM, ScoreMatrix
from .dataio import InteractionDataset
from .errors import DataFormatError, ValidationError
from .segmentation import GroupAssignment

MODES = ("N", "C", "P", "CP")
SOLVERS = ("greedy", "lp")

_ITEM_SORT_PAD = np.iinfo(np.int64).max


@dataclass(frozen=True)
class RerankConfig:
    """Weights, list size, fairness mode, and solver for one re-ranking run."""

    k: int
    mode: str = "CP"
    lambda1: float = 0.0
    lambda2: float = 0.0
    solver: str = "greedy"

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.solver not in SOLVERS:
            raise ValidationError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValidationError("lambda weights must be >= 0")
        if max(self.lambda1, self.lambda2) > 1:
            warnings.warn("lambda weight above 1 is outside the usual range", stacklevel=2)

    def effective_lambdas(self) -> tuple[float, float]:
        """Zero out whichever weight the mode disables."""
        l1 = self.lambda1 if self.mode in ("C", "CP") else 0.0
        l2 = self.lambda2 if self.mode in ("P", "CP") else 0.0
        return l1, l2

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "mode": self.mode,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "solver": self.solver,
        }


@dataclass
class GainTables:
    """Signed per-(user, candidate-rank) fairness gains.

    Consumer entries carry the user-group sign (+1 protected), producer
    entries the item-group sign (+1 long-tail). Padding positions are 0.
    """

    consumer: np.ndarray
    producer: np.ndarray
    definition_tag: str
    k_norm: int


@dataclass
class RankedLists:
    """Final per-user top-K lists ordered by adjusted score descending."""

    items: np.ndarray        # (n, K), padded with -1 for short rows
    scores: np.ndarray       # (n, K) adjusted scores, padded with nan
    row_lengths: np.ndarray  # realized list length per user
    objective_value: float
    config: RerankConfig
    lp_diagnostics: dict | None = None

    @property
    def n_users(self) -> int:
        return self.items.shape[0]

    @property
    def k(self) -> int:
        return self.items.shape[1]

    def valid_mask(self) -> np.ndarray:
        return np.arange(self.k)[None, :] < self.row_lengths[:, None]

    def row(self, u: int) -> np.ndarray:
        return self.items[u, : self.row_lengths[u]]

    @property
    def short_rows(self) -> dict[int, int]:
        short = np.nonzero(self.row_lengths < self.k)[0]
        return {int(u): int(self.row_lengths[u]) for u in short}


def consumer_gain(scores: ScoreMatrix, groups: GroupAssignment, user: int, rank: int,
                  k: int) -> float:
    """Signed consumer gain of the candidate at 1-based `rank` in user's list.

    The unsigned metric is the rank-discounted base score normalized by
    the user's ideal top-k discounted score; the sign is +1 for protected
    users and -1 for advantaged ones.
    """
    items, base = scores.row(user)
    if not 1 <= rank <= len(items):
        raise ValidationError(f"rank {rank} out of range for user {user}")
    discounts = np.log2(np.arange(1, len(base) + 1) + 1.0)
    ideal = float(np.sum(base[:k] / discounts[:k]))
    if ideal <= 0:
        return 0.0
    metric = base[rank - 1] / discounts[rank - 1] / ideal
    sign = 1.0 if groups.user_protected[user] else -1.0
    return float(sign * metric)


def producer_gain(groups: GroupAssignment, item: int) -> float:
    """Signed unit exposure of one slot: +1 long-tail, -1 short-head."""
    if not 0 <= item < groups.n_items:
        raise ValidationError(f"item {item} has no group label")
    return -1.0 if groups.item_short_head[item] else 1.0


def build_gain_tables(scores: ScoreMatrix, groups: GroupAssignment, k: int) -> GainTables:
    """Compute consumer and producer gain tables for a whole score matrix."""
    if groups.n_users != scores.n_users:
        raise ValidationError("group labels do not match the score matrix")
    valid = scores.valid_mask()
    if valid.any() and int(scores.items[valid].max()) >= groups.n_items:
        raise ValidationError("candidate item without a group label")

    n_cand = scores.n_candidates
    discounts = np.log2(np.arange(1, n_cand + 1) + 1.0)[None, :]
    contrib = np.where(valid, scores.scores / discounts, 0.0)
    k_eff = min(k, n_cand)
    ideal = contrib[:, :k_eff].sum(axis=1)
    safe_ideal = np.where(ideal > 0, ideal, 1.0)
    consumer = np.where(ideal[:, None] > 0, contrib / safe_ideal[:, None], 0.0)
    consumer *= groups.user_signs()[:, None]

    item_signs = groups.item_signs()
    producer = np.where(valid, item_signs[np.where(valid, scores.items, 0)], 0.0)
    return GainTables(consumer, producer, "discounted-score-share/unit-exposure", k)


def adjusted_scores(scores: ScoreMatrix, gains: GainTables, cfg: RerankConfig) -> np.ndarray:
    """Base scores plus weighted gains; padding stays -inf."""
    if gains.consumer.shape != scores.scores.shape or gains.producer.shape != scores.scores.shape:
        raise ValidationError("gain tables do not match the score matrix shape")
    l1, l2 = cfg.effective_lambdas()
    adjusted = scores.scores + l1 * gains.consumer + l2 * gains.producer
    valid = scores.valid_mask()
    bad = valid & ~np.isfinite(adjusted)
    if bad.any():
        u, i = np.argwhere(bad)[0]
        raise ValidationError(f"non-finite adjusted score at user {u}, candidate rank {i + 1}")
    return adjusted


def _rank_by_adjusted(items: np.ndarray, adjusted: np.ndarray):
    """Column order per row: adjusted desc, ties by ascending item index, padding last."""
    sort_items = np.where(items == PAD_ITEM, _ITEM_SORT_PAD, items)
    by_item = np.argsort(sort_items, axis=1, kind="stable")
    adj_by_item = np.take_along_axis(adjusted, by_item, axis=1)
    by_score = np.argsort(-adj_by_item, axis=1, kind="stable")
    return np.take_along_axis(by_item, by_score, axis=1)


def greedy_rerank(scores: ScoreMatrix, gains: GainTables, cfg: RerankConfig,
                  block_size: int = 16384) -> RankedLists:
    """Exact maximizer of the adjusted-score objective: per user, the K
    candidates with the largest adjusted score, in descending order.

    Users are processed in row blocks to keep the working set bounded;
    per-user independence makes the result identical for any block size.
    """
    if gains.consumer.shape != scores.scores.shape or gains.producer.shape != scores.scores.shape:
        raise ValidationError("gain tables do not match the score matrix shape")
    l1, l2 = cfg.effective_lambdas()
    n = scores.n_users
    width = min(cfg.k, scores.n_candidates)
    sel_items = np.full((n, width), PAD_ITEM, dtype=np.int64)
    sel_scores = np.full((n, width), np.nan, dtype=np.float64)
    lengths = np.minimum(scores.row_lengths, cfg.k)
    col = np.arange(width)[None, :]
    objective = 0.0
    for start in range(0, max(n, 1), block_size):
        rows = slice(start, min(start + block_size, n))
        adj = scores.scores[rows] + l1 * gains.consumer[rows] + l2 * gains.producer[rows]
        valid = scores.valid_mask()[rows]
        bad = valid & ~np.isfinite(adj)
        if bad.any():
            u, i = np.argwhere(bad)[0]
            raise ValidationError(
                f"non-finite adjusted score at user {start + u}, candidate rank {i + 1}"
            )
        order = _rank_by_adjusted(scores.items[rows], adj)[:, : cfg.k]
        block_items = np.take_along_axis(scores.items[rows], order, axis=1)
        block_scores = np.take_along_axis(adj, order, axis=1)
        out_valid = col < lengths[rows][:, None]
        objective += float(np.where(out_valid, block_scores, 0.0).sum())
        sel_items[rows] = np.where(out_valid, block_items, PAD_ITEM)
        sel_scores[rows] = np.where(out_valid, block_scores, np.nan)
    return RankedLists(sel_items, sel_scores, lengths, objective, cfg)


def lp_rerank(scores: ScoreMatrix, gains: GainTables, cfg: RerankConfig) -> RankedLists:
    """Solve the box relaxation exactly by per-user fractional knapsack.

    With unit weights and one cardinality constraint per user, the
    relaxation's optimum puts 1.0 on every candidate strictly above the
    K-th adjusted score and splits the remaining mass equally over
    candidates tied at the boundary; everything below gets 0. The
    returned lists are the deterministic rounding (ties resolved by
    ascending item index, which is the greedy order), so the integral
    objective coincides with the LP optimum.
    """
    adjusted = adjusted_scores(scores, gains, cfg)
    lists = greedy_rerank(scores, gains, cfg)

    valid = scores.valid_mask()
    capacities = np.minimum(scores.row_lengths, cfg.k)
    lp_value = 0.0
    fractional_users = 0
    fractional_vars = 0
    desc = -np.sort(-np.where(valid, adjusted, -np.inf), axis=1)
    for u in range(scores.n_users):
        cap = int(capacities[u])
        if cap == 0:
            continue
        vals = desc[u, : scores.row_lengths[u]]
        boundary = vals[cap - 1]
        greater = vals[vals > boundary]
        n_tied = int((vals == boundary).sum())
        remainder = cap - len(greater)
        lp_value += float(greater.sum()) + remainder * float(boundary)
        if 0 < remainder < n_tied:
            fractional_users += 1
            fractional_vars += n_tied
    lists.lp_diagnostics = {
        "lp_optimum": lp_value,
        "fractional_users": fractional_users,
        "fractional_variables": fractional_vars,
    }
    return lists


def objective_value(scores: ScoreMatrix, gains: GainTables, cfg: RerankConfig,
                    lists: RankedLists) -> float:
    """Recompute the scalarized objective of given lists from first principles.

    Sums selected base scores minus the weighted optimization-time
    deviation terms (the signed gain sums), which is exactly the sum of
    selected adjusted scores. Lists must be subsets of the candidates.
    """
    l1, l2 = cfg.effective_lambdas()
    total = 0.0
    for u in range(lists.n_users):
        cand_items, cand_scores = scores.row(u)
        pos_of = {int(it): p for p, it in enumerate(cand_items)}
        for item in lists.row(u):
            pos = pos_of.get(int(item))
            if pos is None:
                raise ValidationError(f"user {u}: item {int(item)} not in candidate list")
            consumer_dev = -gains.consumer[u, pos]  # deviation terms carry opposite sign
            producer_dev = -gains.producer[u, pos]
            total += float(cand_scores[pos]) - l1 * consumer_dev - l2 * producer_dev
    return total


# --- on-disk form -----------------------------------------------------------


def save_ranked_lists(lists: RankedLists, ds: InteractionDataset, path: str | Path) -> Path:
    """Write lists as (user token, item token, rank, adjusted score) plus a manifest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for u in range(lists.n_users):
            for rank in range(int(lists.row_lengths[u])):
                item = int(lists.items[u, rank])
                fh.write(
                    f"{ds.user_ids[u]}\t{ds.item_ids[item]}\t{rank + 1}\t"
                    f"{float(lists.scores[u, rank])!r}\n"
                )
    manifest = {
        "mode": lists.config.mode,
        "lambda1": lists.config.lambda1,
        "lambda2": lists.config.lambda2,
        "k": lists.config.k,
        "solver": lists.config.solver,
        "objective_value": lists.objective_value,
        "fractional_tie_count": (lists.lp_diagnostics or {}).get("fractional_variables", 0),
        "short_rows": {str(u): length for u, length in lists.short_rows.items()},
    }
    if lists.lp_diagnostics:
        manifest["lp"] = lists.lp_diagnostics
    with open(path.with_suffix(path.suffix + ".manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_ranked_lists(path: str | Path, ds: InteractionDataset) -> RankedLists:
    """Read back a lists file written by save_ranked_lists."""
    path = Path(path)
    manifest_path = path.with_suffix(path.suffix + ".manifest.json")
    if not manifest_path.exists():
        raise DataFormatError("missing ranked-lists manifest", path=manifest_path)
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    cfg = RerankConfig(
        k=int(manifest["k"]),
        mode=manifest["mode"],
        lambda1=float(manifest["lambda1"]),
        lambda2=float(manifest["lambda2"]),
        solver=manifest["solver"],
    )
    user_map = ds.user_index()
    item_map = ds.item_index()
    rows: dict[int, list[tuple[int, int, float]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataFormatError("expected 4 tab-separated columns", path=path, line=lineno)
            if parts[0] not in user_map:
                raise DataFormatError(f"unknown user token {parts[0]!r}", path=path, line=lineno)
            if parts[1] not in item_map:
                raise DataFormatError(f"unknown item token {parts[1]!r}", path=path, line=lineno)
            rows.setdefault(user_map[parts[0]], []).append(
                (int(parts[2]), item_map[parts[1]], float(parts[3]))
            )
    n = ds.n_users
    items = np.full((n, cfg.k), PAD_ITEM, dtype=np.int64)
    scores = np.full((n, cfg.k), np.nan, dtype=np.float64)
    lengths = np.zeros(n, dtype=np.int64)
    for u, triples in rows.items():
        triples.sort()
        lengths[u] = len(triples)
        for rank, item, score in triples:
            items[u, rank - 1] = item
            scores[u, rank - 1] = score
    return RankedLists(items, scores, lengths, float(manifest["objective_value"]), cfg,
                       manifest.get("lp"))
