"""Top-N candidate lists with relevance scores, built in or imported.

A ScoreMatrix holds, per user, up to N candidate items sorted by score
descending (ties by ascending item index), never containing that user's
training items. Built-in rankers are deliberately simple desk-scale
stand-ins; externally trained models enter through the import path.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dataio import InteractionDataset
from .errors import DataFormatError, ValidationError

PAD_ITEM = -1


class ScoreMatrix:
    """Padded (n, N) candidate/score arrays with per-row lengths.

    Rows shorter than N (candidate pool smaller than N for that user) are
    padded with item -1 / score -inf and recorded in `short_rows`.
    """

    def __init__(self, item_rows, score_rows, n_candidates: int, ranker_tag: str,
                 validate: bool = True):
        n = len(item_rows)
        if len(score_rows) != n:
            raise ValidationError("item and score rows must have equal length")
        self.n_candidates = int(n_candidates)
        self.ranker_tag = ranker_tag
        self.row_lengths = np.array([len(r) for r in item_rows], dtype=np.int64)
        if self.row_lengths.size and self.row_lengths.max() > self.n_candidates:
            raise ValidationError("a candidate row is longer than n_candidates")
        self.items = np.full((n, self.n_candidates), PAD_ITEM, dtype=np.int64)
        self.scores = np.full((n, self.n_candidates), -np.inf, dtype=np.float64)
        for u, (it, sc) in enumerate(zip(item_rows, score_rows)):
            length = len(it)
            self.items[u, :length] = it
            self.scores[u, :length] = sc
        if validate:
            self._validate()

    @classmethod
    def from_padded(cls, items, scores, row_lengths, n_candidates, ranker_tag,
                    validate: bool = False) -> "ScoreMatrix":
        sm = cls.__new__(cls)
        sm.items = np.asarray(items, dtype=np.int64)
        sm.scores = np.asarray(scores, dtype=np.float64)
        sm.row_lengths = np.asarray(row_lengths, dtype=np.int64)
        sm.n_candidates = int(n_candidates)
        sm.ranker_tag = ranker_tag
        if validate:
            sm._validate()
        return sm

    def _validate(self):
        valid = self.valid_mask()
        if not np.isfinite(self.scores[valid]).all():
            raise ValidationError("candidate scores must be finite")
        if valid.any() and self.items[valid].min() < 0:
            raise ValidationError("candidate item indices must be >= 0")
        # non-increasing scores, ties by ascending item index, no duplicates
        s_cur, s_nxt = self.scores[:, :-1], self.scores[:, 1:]
        both = valid[:, :-1] & valid[:, 1:]
        if np.any(both & (s_nxt > s_cur)):
            raise ValidationError("candidate rows must be sorted by score descending")
        tie = both & (s_nxt == s_cur)
        if np.any(tie & (self.items[:, 1:] <= self.items[:, :-1])):
            raise ValidationError("score ties must be ordered by ascending item index")
        sorted_items = np.sort(np.where(valid, self.items, np.iinfo(np.int64).max), axis=1)
        dup = (sorted_items[:, 1:] == sorted_items[:, :-1]) & (
            sorted_items[:, 1:] != np.iinfo(np.int64).max
        )
        if np.any(dup):
            raise ValidationError("duplicate item in a candidate row")

    @property
    def n_users(self) -> int:
        return self.items.shape[0]

    def valid_mask(self) -> np.ndarray:
        return np.arange(self.n_candidates)[None, :] < self.row_lengths[:, None]

    @property
    def short_rows(self) -> dict[int, int]:
        """Users whose candidate pool fell short of N, with realized lengths."""
        short = np.nonzero(self.row_lengths < self.n_candidates)[0]
        return {int(u): int(self.row_lengths[u]) for u in short}

    def row(self, u: int):
        length = self.row_lengths[u]
        return self.items[u, :length], self.scores[u, :length]

    def validate_against_train(self, train: InteractionDataset):
        """Check the train-exclusion invariant against a training split."""
        train_items = train.items_by_user()
        for u in range(self.n_users):
            it, _ = self.row(u)
            overlap = np.intersect1d(it, train_items[u])
            if overlap.size:
                raise ValidationError(
                    f"candidate row for user {u} contains training item {int(overlap[0])}"
                )


def _sorted_desc_rows(score_by_item: np.ndarray, exclude_rows: list[np.ndarray], n_top: int):
    """Per-user top n_top items from a (n, m) score table, excluding given items.

    Order: score descending, ties by ascending item index.
    """
    n, m = score_by_item.shape
    rows_i, rows_s = [], []
    for u in range(n):
        sc = score_by_item[u].copy()
        sc[exclude_rows[u]] = -np.inf
        order = np.argsort(-sc, kind="stable")[:n_top]
        order = order[np.isfinite(sc[order])]
        rows_i.append(order.astype(np.int64))
        rows_s.append(sc[order])
    return rows_i, rows_s


def mostpop_scores(train: InteractionDataset, n_candidates: int) -> ScoreMatrix:
    """Score every item by its training interaction count, identical across users."""
    if n_candidates < 1:
        raise ValidationError("n_candidates must be >= 1")
    counts = train.item_degrees().astype(np.float64)
    by_user = train.items_by_user()
    table = np.broadcast_to(counts, (train.n_users, train.n_items)).copy()
    rows_i, rows_s = _sorted_desc_rows(table, by_user, n_candidates)
    return ScoreMatrix(rows_i, rows_s, n_candidates, "mostpop")


def random_scores(train: InteractionDataset, n_candidates: int, seed: int) -> ScoreMatrix:
    """Uniformly sample candidates per user; scores are strictly decreasing rationals."""
    if n_candidates < 1:
        raise ValidationError("n_candidates must be >= 1")
    rng = np.random.default_rng(seed)
    by_user = train.items_by_user()
    all_items = np.arange(train.n_items)
    rows_i, rows_s = [], []
    for u in range(train.n_users):
        pool = np.setdiff1d(all_items, by_user[u], assume_unique=False)
        take = min(n_candidates, len(pool))
        picked = rng.choice(pool, size=take, replace=False) if take else pool[:0]
        length = len(picked)
        rows_i.append(picked.astype(np.int64))
        rows_s.append((length - np.arange(length)) / max(length, 1))
    return ScoreMatrix(rows_i, rows_s, n_candidates, "random")


def item_cosine_similarity(train: InteractionDataset) -> np.ndarray:
    """Dense item-item cosine similarity over binary user-incidence vectors.

    Self-similarity is zeroed; items nobody interacted with have similarity 0.
    """
    incidence = np.zeros((train.n_users, train.n_items), dtype=np.float64)
    incidence[train.user_idx, train.item_idx] = 1.0
    co = incidence.T @ incidence
    norms = np.sqrt(np.diag(co))
    denom = np.outer(norms, norms)
    with np.errstate(divide="ignore", invalid="ignore"):
        sim = np.where(denom > 0, co / denom, 0.0)
    np.fill_diagonal(sim, 0.0)
    return sim


def _restrict_to_top_neighbors(sim: np.ndarray, neighbors: int) -> np.ndarray:
    """Zero out everything but each row's top `neighbors` entries (ties by index)."""
    m = sim.shape[0]
    if neighbors >= m - 1:
        return sim
    restricted = np.zeros_like(sim)
    keep = np.argsort(-sim, axis=1, kind="stable")[:, :neighbors]
    rows = np.repeat(np.arange(m), neighbors)
    cols = keep.ravel()
    restricted[rows, cols] = sim[rows, cols]
    return restricted


def itemknn_scores(train: InteractionDataset, n_candidates: int, neighbors: int) -> ScoreMatrix:
    """Item-based kNN: score(u, i) sums cosine(i, j) over j in u's training items,
    with each item's similarity row restricted to its top `neighbors` entries.
    """
    if n_candidates < 1:
        raise ValidationError("n_candidates must be >= 1")
    if neighbors < 1:
        raise ValidationError("neighbors must be >= 1")
    sim = _restrict_to_top_neighbors(item_cosine_similarity(train), neighbors)
    incidence = np.zeros((train.n_users, train.n_items), dtype=np.float64)
    incidence[train.user_idx, train.item_idx] = 1.0
    table = incidence @ sim.T  # (n, m): sum over profile items j of sim[i, j]
    by_user = train.items_by_user()
    rows_i, rows_s = _sorted_desc_rows(table, by_user, n_candidates)
    return ScoreMatrix(rows_i, rows_s, n_candidates, f"itemknn{neighbors}")


# --- score-matrix file format -----------------------------------------------
#
# First line:  #ranker=<tag>\tn_candidates=<N>
# Data lines:  <user token>\t<item token>\t<score repr>\t<rank>
# Scores round-trip exactly: repr() of a float parses back to the same value.


def export_scores(sm: ScoreMatrix, ds: InteractionDataset, path: str | Path) -> Path:
    """Write a score matrix with vocabulary tokens resolved from ds.

    A sidecar manifest records the ranker tag, N, and the short-list
    exceptions (users whose candidate pool fell short of N).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#ranker={sm.ranker_tag}\tn_candidates={sm.n_candidates}\n")
        for u in range(sm.n_users):
            items, scores = sm.row(u)
            for rank, (i, s) in enumerate(zip(items, scores), start=1):
                fh.write(f"{ds.user_ids[u]}\t{ds.item_ids[i]}\t{float(s)!r}\t{rank}\n")
    manifest = {
        "ranker_tag": sm.ranker_tag,
        "n_candidates": sm.n_candidates,
        "n_users": sm.n_users,
        "short_rows": {ds.user_ids[u]: length for u, length in sm.short_rows.items()},
    }
    with open(path.with_suffix(path.suffix + ".manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def import_scores(path: str | Path, train: InteractionDataset,
                  n_candidates: int | None = None) -> ScoreMatrix:
    """Parse and validate an externally produced score-matrix file.

    Unknown tokens, duplicate items within a row, non-finite scores, and
    candidates drawn from the user's training items are all rejected.
    Rows arriving unsorted are re-sorted by (score desc, item asc). Users
    absent from the file get empty rows, recorded as short-row exceptions.
    """
    path = Path(path)
    user_map = train.user_index()
    item_map = train.item_index()
    ranker_tag = "imported"
    header_n = None
    per_user: dict[int, list[tuple[int, float]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                for field in line[1:].split("\t"):
                    key, _, value = field.partition("=")
                    if key == "ranker" and value:
                        ranker_tag = value
                    elif key == "n_candidates":
                        header_n = int(value)
                continue
            parts = line.split("\t")
            if len(parts) < 3:
                raise DataFormatError("expected user, item, score columns", path=path, line=lineno)
            user_tok, item_tok, score_tok = parts[0], parts[1], parts[2]
            if user_tok not in user_map:
                raise DataFormatError(f"unknown user token {user_tok!r}", path=path, line=lineno)
            if item_tok not in item_map:
                raise DataFormatError(f"unknown item token {item_tok!r}", path=path, line=lineno)
            try:
                score = float(score_tok)
            except ValueError:
                raise DataFormatError(f"bad score {score_tok!r}", path=path, line=lineno)
            if not np.isfinite(score):
                raise DataFormatError(f"non-finite score {score_tok}", path=path, line=lineno)
            per_user.setdefault(user_map[user_tok], []).append((item_map[item_tok], score))

    if n_candidates is None:
        n_candidates = header_n
    if n_candidates is None:
        n_candidates = max((len(v) for v in per_user.values()), default=0)
    if n_candidates < 1:
        raise ValidationError("score file defines no candidates")

    train_items = train.items_by_user()
    rows_i, rows_s = [], []
    for u in range(train.n_users):
        pairs = per_user.get(u, [])
        items = np.array([p[0] for p in pairs], dtype=np.int64)
        scores = np.array([p[1] for p in pairs], dtype=np.float64)
        if len(np.unique(items)) != len(items):
            dup = int(np.argmax(np.bincount(items) > 1))
            raise ValidationError(
                f"duplicate candidate item {train.item_ids[dup]!r} for user {train.user_ids[u]!r}"
            )
        if len(items) > n_candidates:
            raise ValidationError(
                f"user {train.user_ids[u]!r} has {len(items)} candidates, n_candidates={n_candidates}"
            )
        overlap = np.intersect1d(items, train_items[u])
        if overlap.size:
            raise ValidationError(
                f"candidate {train.item_ids[int(overlap[0])]!r} is a training item of user "
                f"{train.user_ids[u]!r}"
            )
        order = np.lexsort((items, -scores))
        rows_i.append(items[order])
        rows_s.append(scores[order])
    return ScoreMatrix(rows_i, rows_s, n_candidates, ranker_tag)
