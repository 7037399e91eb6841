"""Interaction data loading, k-core filtering, splitting, and statistics.

Datasets are immutable once built: user/item tokens are mapped to dense
indices in first-seen order and interactions are held as parallel numpy
arrays. All operations here are pure functions of (input bytes,
parameters, seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError, UndefinedMetricError, ValidationError

_NO_TIMESTAMP = -(2**62)  # sentinel for "timestamp absent"


@dataclass(frozen=True)
class RecordFormat:
    """Column layout of a delimited interaction file."""

    delimiter: str = "\t"
    user_col: int = 0
    item_col: int = 1
    weight_col: int | None = 2
    timestamp_col: int | None = 3
    header: bool = False

    def to_dict(self) -> dict:
        return {
            "delimiter": self.delimiter,
            "user_col": self.user_col,
            "item_col": self.item_col,
            "weight_col": self.weight_col,
            "timestamp_col": self.timestamp_col,
            "header": self.header,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RecordFormat":
        return cls(**d)


@dataclass(frozen=True)
class Interaction:
    """One user-item interaction record (weight 1.0 for implicit feedback)."""

    user: str
    item: str
    weight: float = 1.0
    timestamp: int | None = None


class InteractionDataset:
    """Deduplicated interactions over dense user/item vocabularies.

    `user_ids[i]` is the token for dense user index i (first-seen order),
    likewise `item_ids`. `user_idx`, `item_idx`, `weights` and `timestamps`
    are parallel arrays, one entry per interaction. Vocabularies may be
    larger than the set of indices present (splits share their parent's
    vocabularies).
    """

    def __init__(
        self,
        user_ids: list[str],
        item_ids: list[str],
        user_idx: np.ndarray,
        item_idx: np.ndarray,
        weights: np.ndarray,
        timestamps: np.ndarray | None = None,
        provenance: dict | None = None,
    ):
        self.user_ids = list(user_ids)
        self.item_ids = list(item_ids)
        self.user_idx = np.asarray(user_idx, dtype=np.int64)
        self.item_idx = np.asarray(item_idx, dtype=np.int64)
        self.weights = np.asarray(weights, dtype=np.float64)
        if timestamps is None:
            timestamps = np.full(len(self.user_idx), _NO_TIMESTAMP, dtype=np.int64)
        self.timestamps = np.asarray(timestamps, dtype=np.int64)
        self.provenance = dict(provenance or {})
        self._validate()

    def _validate(self):
        n, m = self.n_users, self.n_items
        if len(self.user_idx) != len(self.item_idx) or len(self.user_idx) != len(self.weights):
            raise ValidationError("interaction arrays must have equal length")
        if len(self.user_idx) and (self.user_idx.min() < 0 or self.user_idx.max() >= n):
            raise ValidationError("user index out of vocabulary bounds")
        if len(self.item_idx) and (self.item_idx.min() < 0 or self.item_idx.max() >= m):
            raise ValidationError("item index out of vocabulary bounds")
        if len(self.weights) and self.weights.min() < 0:
            raise ValidationError("interaction weights must be non-negative")

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_interactions(self) -> int:
        return len(self.user_idx)

    def user_index(self) -> dict[str, int]:
        return {tok: i for i, tok in enumerate(self.user_ids)}

    def item_index(self) -> dict[str, int]:
        return {tok: i for i, tok in enumerate(self.item_ids)}

    def user_degrees(self) -> np.ndarray:
        """Interaction count per user index."""
        return np.bincount(self.user_idx, minlength=self.n_users)

    def item_degrees(self) -> np.ndarray:
        """Interaction count per item index."""
        return np.bincount(self.item_idx, minlength=self.n_items)

    def items_by_user(self) -> list[np.ndarray]:
        """Item indices per user, in interaction-file order."""
        order = np.argsort(self.user_idx, kind="stable")
        bounds = np.searchsorted(self.user_idx[order], np.arange(self.n_users + 1))
        sorted_items = self.item_idx[order]
        return [sorted_items[bounds[u]:bounds[u + 1]] for u in range(self.n_users)]

    def replace_interactions(
        self, user_idx, item_idx, weights, timestamps, provenance_update: dict | None = None
    ) -> "InteractionDataset":
        prov = dict(self.provenance)
        prov.update(provenance_update or {})
        return InteractionDataset(
            self.user_ids, self.item_ids, user_idx, item_idx, weights, timestamps, prov
        )


@dataclass
class SplitDataset:
    """Disjoint train/validation/test partition sharing one vocabulary."""

    train: InteractionDataset
    validation: InteractionDataset
    test: InteractionDataset
    split_seed: int
    ratios: tuple[float, float, float]

    @property
    def parts(self) -> dict[str, InteractionDataset]:
        return {"train": self.train, "validation": self.validation, "test": self.test}


@dataclass
class DatasetStats:
    n_users: int
    n_items: int
    n_interactions: int
    sparsity: float
    user_frac_at_least: dict[int, float] = field(default_factory=dict)
    item_frac_at_least: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_users": self.n_users,
            "n_items": self.n_items,
            "n_interactions": self.n_interactions,
            "sparsity": self.sparsity,
            "user_frac_at_least": {str(t): v for t, v in self.user_frac_at_least.items()},
            "item_frac_at_least": {str(t): v for t, v in self.item_frac_at_least.items()},
        }


def _dedup(records: list[Interaction]) -> list[Interaction]:
    """Keep max weight per (user, item); tie-break by latest timestamp, then first seen."""
    best: dict[tuple[str, str], Interaction] = {}
    for rec in records:
        key = (rec.user, rec.item)
        cur = best.get(key)
        if cur is None:
            best[key] = rec
            continue
        rec_ts = rec.timestamp if rec.timestamp is not None else _NO_TIMESTAMP
        cur_ts = cur.timestamp if cur.timestamp is not None else _NO_TIMESTAMP
        if (rec.weight, rec_ts) > (cur.weight, cur_ts):
            best[key] = rec
    return list(best.values())


def from_records(records: list[Interaction], provenance: dict | None = None) -> InteractionDataset:
    """Build a dataset from parsed records: dedup, then densify in first-seen order."""
    records = _dedup(records)
    user_map: dict[str, int] = {}
    item_map: dict[str, int] = {}
    u_idx = np.empty(len(records), dtype=np.int64)
    i_idx = np.empty(len(records), dtype=np.int64)
    w = np.empty(len(records), dtype=np.float64)
    ts = np.empty(len(records), dtype=np.int64)
    for k, rec in enumerate(records):
        u_idx[k] = user_map.setdefault(rec.user, len(user_map))
        i_idx[k] = item_map.setdefault(rec.item, len(item_map))
        w[k] = rec.weight
        ts[k] = rec.timestamp if rec.timestamp is not None else _NO_TIMESTAMP
    return InteractionDataset(
        list(user_map), list(item_map), u_idx, i_idx, w, ts, provenance
    )


def load_interactions(path: str | Path, fmt: RecordFormat = RecordFormat()) -> InteractionDataset:
    """Parse a delimited interaction file into a deduplicated dataset.

    Malformed records raise DataFormatError naming the line number; an
    input with no interaction records raises too (an empty dataset from
    parsing is almost always a format mistake).
    """
    path = Path(path)
    records: list[Interaction] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if fmt.header and lineno == 1:
                continue
            line = raw.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split(fmt.delimiter)
            if len(parts) <= max(fmt.user_col, fmt.item_col):
                raise DataFormatError(
                    f"expected at least {max(fmt.user_col, fmt.item_col) + 1} columns, got {len(parts)}",
                    path=path,
                    line=lineno,
                )
            user = parts[fmt.user_col].strip()
            item = parts[fmt.item_col].strip()
            if not user or not item:
                raise DataFormatError("empty user or item token", path=path, line=lineno)
            weight = 1.0
            if fmt.weight_col is not None and fmt.weight_col < len(parts):
                tok = parts[fmt.weight_col].strip()
                if tok:
                    try:
                        weight = float(tok)
                    except ValueError:
                        raise DataFormatError(f"bad weight {tok!r}", path=path, line=lineno)
                    if not math.isfinite(weight) or weight < 0:
                        raise DataFormatError(f"weight must be finite and >= 0, got {tok}", path=path, line=lineno)
            timestamp = None
            if fmt.timestamp_col is not None and fmt.timestamp_col < len(parts):
                tok = parts[fmt.timestamp_col].strip()
                if tok:
                    try:
                        timestamp = int(float(tok))
                    except ValueError:
                        raise DataFormatError(f"bad timestamp {tok!r}", path=path, line=lineno)
            records.append(Interaction(user, item, weight, timestamp))
    if not records:
        raise DataFormatError("no interaction records found", path=path)
    provenance = {"source": str(path), "format": fmt.to_dict()}
    return from_records(records, provenance)


def kcore_filter(ds: InteractionDataset, k: int) -> InteractionDataset:
    """Iteratively drop users/items with fewer than k interactions until stable.

    Surviving users and items are re-densified preserving their original
    relative index order, so the result is deterministic. An empty result
    is valid.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    u, it, w, ts = ds.user_idx, ds.item_idx, ds.weights, ds.timestamps
    n, m = ds.n_users, ds.n_items
    while True:
        udeg = np.bincount(u, minlength=n)
        ideg = np.bincount(it, minlength=m)
        keep = (udeg[u] >= k) & (ideg[it] >= k)
        if keep.all():
            break
        u, it, w, ts = u[keep], it[keep], w[keep], ts[keep]
        if len(u) == 0:
            break

    surviving_u = np.unique(u)
    surviving_i = np.unique(it)
    u_remap = np.full(n, -1, dtype=np.int64)
    u_remap[surviving_u] = np.arange(len(surviving_u))
    i_remap = np.full(m, -1, dtype=np.int64)
    i_remap[surviving_i] = np.arange(len(surviving_i))

    prov = dict(ds.provenance)
    prov["kcore"] = k
    return InteractionDataset(
        [ds.user_ids[i] for i in surviving_u],
        [ds.item_ids[i] for i in surviving_i],
        u_remap[u],
        i_remap[it],
        w,
        ts,
        prov,
    )


def _part_sizes(count: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    """Floor each part, then hand remainders to train first, then test."""
    sizes = [int(math.floor(r * count)) for r in ratios]
    remainder = count - sum(sizes)
    if remainder >= 1:
        sizes[0] += 1
    if remainder >= 2:
        sizes[2] += 1
    return sizes[0], sizes[1], sizes[2]


def split(
    ds: InteractionDataset,
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
    seed: int = 0,
) -> SplitDataset:
    """Per-user random partition into train/validation/test by the given ratios.

    Users with fewer than 3 interactions send everything to train. All
    three parts share the parent's vocabularies, so indices stay stable
    across splits. Deterministic given the seed.
    """
    if any(r <= 0 for r in ratios):
        raise ValidationError("split ratios must be positive")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"split ratios must sum to 1, got {sum(ratios)}")

    rng = np.random.default_rng(seed)
    order = np.argsort(ds.user_idx, kind="stable")
    bounds = np.searchsorted(ds.user_idx[order], np.arange(ds.n_users + 1))

    assign = np.zeros(ds.n_interactions, dtype=np.int8)  # 0 train, 1 validation, 2 test
    for u in range(ds.n_users):
        rows = order[bounds[u]:bounds[u + 1]]
        count = len(rows)
        if count == 0:
            continue
        if count < 3:
            continue  # all to train
        n_tr, n_va, _ = _part_sizes(count, ratios)
        perm = rng.permutation(count)
        shuffled = rows[perm]
        assign[shuffled[n_tr:n_tr + n_va]] = 1
        assign[shuffled[n_tr + n_va:]] = 2

    parts = []
    for code, name in ((0, "train"), (1, "validation"), (2, "test")):
        mask = assign == code
        parts.append(
            ds.replace_interactions(
                ds.user_idx[mask],
                ds.item_idx[mask],
                ds.weights[mask],
                ds.timestamps[mask],
                {"split": name, "split_seed": seed, "split_ratios": list(ratios)},
            )
        )
    return SplitDataset(parts[0], parts[1], parts[2], seed, tuple(ratios))


def sparsity(n_users: int, n_items: int, n_interactions: int) -> float:
    """1 - density of the interaction matrix."""
    if n_users * n_items == 0:
        raise UndefinedMetricError("sparsity undefined for an empty vocabulary")
    return 1.0 - n_interactions / (n_users * n_items)


def dataset_stats(ds: InteractionDataset, thresholds: tuple[int, ...] = ()) -> DatasetStats:
    """Size, sparsity, and degree-threshold fractions of a dataset."""
    spars = sparsity(ds.n_users, ds.n_items, ds.n_interactions)
    udeg = ds.user_degrees()
    ideg = ds.item_degrees()
    user_frac = {int(t): float(np.mean(udeg >= t)) for t in thresholds}
    item_frac = {int(t): float(np.mean(ideg >= t)) for t in thresholds}
    return DatasetStats(ds.n_users, ds.n_items, ds.n_interactions, spars, user_frac, item_frac)


# --- canonical on-disk form -------------------------------------------------

def _write_interactions_file(ds: InteractionDataset, path: Path):
    with open(path, "w", encoding="utf-8") as fh:
        for u, i, w, t in zip(ds.user_idx, ds.item_idx, ds.weights, ds.timestamps):
            ts_tok = "" if t == _NO_TIMESTAMP else str(int(t))
            fh.write(f"{u}\t{i}\t{float(w)!r}\t{ts_tok}\n")


def _read_interactions_file(path: Path):
    u, i, w, ts = [], [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataFormatError("expected 4 tab-separated columns", path=path, line=lineno)
            u.append(int(parts[0]))
            i.append(int(parts[1]))
            w.append(float(parts[2]))
            ts.append(int(parts[3]) if parts[3] else _NO_TIMESTAMP)
    return (
        np.array(u, dtype=np.int64),
        np.array(i, dtype=np.int64),
        np.array(w, dtype=np.float64),
        np.array(ts, dtype=np.int64),
    )


def save_split(sd: SplitDataset, out_dir: str | Path) -> Path:
    """Write train/validation/test files with dense indices plus a JSON manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    counts = {}
    for name, part in sd.parts.items():
        _write_interactions_file(part, out_dir / f"{name}.tsv")
        counts[name] = part.n_interactions
    manifest = {
        "n_users": sd.train.n_users,
        "n_items": sd.train.n_items,
        "counts": counts,
        "users": sd.train.user_ids,
        "items": sd.train.item_ids,
        "split_seed": sd.split_seed,
        "ratios": list(sd.ratios),
        "provenance": sd.train.provenance,
    }
    with open(out_dir / "dataset.manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_dir


def load_split(in_dir: str | Path) -> SplitDataset:
    """Read back a directory written by save_split."""
    in_dir = Path(in_dir)
    manifest_path = in_dir / "dataset.manifest.json"
    if not manifest_path.exists():
        raise DataFormatError("missing dataset.manifest.json", path=in_dir)
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    users = manifest["users"]
    items = manifest["items"]
    parts = {}
    for name in ("train", "validation", "test"):
        u, i, w, ts = _read_interactions_file(in_dir / f"{name}.tsv")
        prov = dict(manifest.get("provenance", {}))
        prov["split"] = name
        parts[name] = InteractionDataset(users, items, u, i, w, ts, prov)
    return SplitDataset(
        parts["train"],
        parts["validation"],
        parts["test"],
        int(manifest["split_seed"]),
        tuple(manifest["ratios"]),
    )
