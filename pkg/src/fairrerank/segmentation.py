"""Binary user/item group assignment from training interactions.

Items split into short-head (popular, advantaged) vs long-tail
(protected) by training interaction count. Users split either by
activity level (active vs inactive) or by how many short-head items sit
in their training profile (mainstream vs non-mainstream). Labels depend
on the training split only.

Cut rule: the advantaged side always gets exactly ceil(fraction * count)
members; ties at the boundary are admitted by ascending dense index.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import InteractionDataset
from .errors import DataFormatError, ValidationError

USER_METHOD_ACTIVITY = "activity_ug1"
USER_METHOD_MAINSTREAM = "mainstream_ug2"
ITEM_METHOD_POPULARITY = "popularity_ig"


@dataclass
class GroupAssignment:
    """Per-user and per-item binary labels plus how the cut was realized.

    `user_protected[u]` is True for the protected (disadvantaged) group;
    `item_short_head[i]` is True for short-head (advantaged) items.
    """

    user_protected: np.ndarray
    item_short_head: np.ndarray
    user_method: str
    item_method: str = ITEM_METHOD_POPULARITY
    cut_stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self.user_protected = np.asarray(self.user_protected, dtype=bool)
        self.item_short_head = np.asarray(self.item_short_head, dtype=bool)

    @property
    def n_users(self) -> int:
        return len(self.user_protected)

    @property
    def n_items(self) -> int:
        return len(self.item_short_head)

    def user_signs(self) -> np.ndarray:
        """+1 for protected users, -1 for advantaged."""
        return np.where(self.user_protected, 1.0, -1.0)

    def item_signs(self) -> np.ndarray:
        """+1 for long-tail (protected) items, -1 for short-head."""
        return np.where(self.item_short_head, -1.0, 1.0)


def _ceil_count(fraction: float, total: int) -> int:
    # eps guard: 0.05 * 100 is 5.000000000000001 in float64
    return int(math.ceil(fraction * total - 1e-9))


def _top_by_count(counts: np.ndarray, n_top: int) -> np.ndarray:
    """Boolean mask of the n_top entries by count desc, ties by ascending index."""
    order = np.lexsort((np.arange(len(counts)), -counts))
    mask = np.zeros(len(counts), dtype=bool)
    mask[order[:n_top]] = True
    return mask


def _cut_record(counts: np.ndarray, mask: np.ndarray, n_top: int, fraction: float) -> dict:
    if n_top == 0 or len(counts) == 0:
        return {"fraction": fraction, "n_selected": 0}
    cut_value = int(counts[mask].min())
    at_cut = int(np.sum(counts == cut_value))
    admitted_at_cut = int(np.sum(counts[mask] == cut_value))
    return {
        "fraction": fraction,
        "n_selected": int(n_top),
        "cut_value": cut_value,
        "n_at_cut_value": at_cut,
        "n_admitted_at_cut": admitted_at_cut,
        "tie_rule": "ascending_index",
    }


def segment_items_popularity(train: InteractionDataset, top_fraction: float = 0.2):
    """Label the top ceil(top_fraction * m) items by training count as short-head.

    Returns (short_head mask, cut stats).
    """
    if not 0 < top_fraction < 1:
        raise ValidationError(f"top_fraction must be in (0, 1), got {top_fraction}")
    if train.n_interactions == 0:
        raise ValidationError("cannot segment items from an empty training set")
    counts = train.item_degrees()
    n_top = _ceil_count(top_fraction, train.n_items)
    mask = _top_by_count(counts, n_top)
    return mask, _cut_record(counts, mask, n_top, top_fraction)


def segment_users_activity(train: InteractionDataset, top_fraction: float = 0.05):
    """Label the top ceil(top_fraction * n) users by training count as active (advantaged).

    Returns (protected mask, cut stats); protected = everyone not active.
    """
    if not 0 < top_fraction < 1:
        raise ValidationError(f"top_fraction must be in (0, 1), got {top_fraction}")
    if train.n_interactions == 0:
        raise ValidationError("cannot segment users from an empty training set")
    counts = train.user_degrees()
    n_top = _ceil_count(top_fraction, train.n_users)
    advantaged = _top_by_count(counts, n_top)
    return ~advantaged, _cut_record(counts, advantaged, n_top, top_fraction)


def segment_users_mainstream(
    train: InteractionDataset, item_short_head: np.ndarray, top_fraction: float = 0.2
):
    """Label the top ceil(top_fraction * n) users by short-head interactions as mainstream.

    Returns (protected mask, cut stats); protected = non-mainstream.
    """
    if not 0 < top_fraction < 1:
        raise ValidationError(f"top_fraction must be in (0, 1), got {top_fraction}")
    if train.n_interactions == 0:
        raise ValidationError("cannot segment users from an empty training set")
    item_short_head = np.asarray(item_short_head, dtype=bool)
    if len(item_short_head) != train.n_items:
        raise ValidationError(
            f"item labels cover {len(item_short_head)} items, dataset has {train.n_items}"
        )
    popular = item_short_head[train.item_idx].astype(np.int64)
    counts = np.bincount(train.user_idx, weights=popular, minlength=train.n_users).astype(np.int64)
    n_top = _ceil_count(top_fraction, train.n_users)
    advantaged = _top_by_count(counts, n_top)
    return ~advantaged, _cut_record(counts, advantaged, n_top, top_fraction)


def assign_groups(
    train: InteractionDataset,
    user_method: str = "activity",
    user_fraction: float | None = None,
    item_fraction: float = 0.2,
) -> GroupAssignment:
    """Run item and user segmentation together and bundle the result."""
    item_mask, item_stats = segment_items_popularity(train, item_fraction)
    if user_method in ("activity", USER_METHOD_ACTIVITY):
        frac = 0.05 if user_fraction is None else user_fraction
        user_mask, user_stats = segment_users_activity(train, frac)
        method_tag = USER_METHOD_ACTIVITY
    elif user_method in ("mainstream", USER_METHOD_MAINSTREAM):
        frac = 0.2 if user_fraction is None else user_fraction
        user_mask, user_stats = segment_users_mainstream(train, item_mask, frac)
        method_tag = USER_METHOD_MAINSTREAM
    else:
        raise ValidationError(f"unknown user segmentation method {user_method!r}")
    return GroupAssignment(
        user_mask,
        item_mask,
        method_tag,
        ITEM_METHOD_POPULARITY,
        {"users": user_stats, "items": item_stats},
    )


# --- on-disk form -----------------------------------------------------------

_USER_LABELS = {True: "protected", False: "advantaged"}
_ITEM_LABELS = {True: "short_head", False: "long_tail"}


def save_groups(groups: GroupAssignment, out_dir: str | Path) -> Path:
    """Write users.tsv / items.tsv label files plus a JSON manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "users.tsv", "w", encoding="utf-8") as fh:
        for idx, prot in enumerate(groups.user_protected):
            fh.write(f"{idx}\t{_USER_LABELS[bool(prot)]}\n")
    with open(out_dir / "items.tsv", "w", encoding="utf-8") as fh:
        for idx, short in enumerate(groups.item_short_head):
            fh.write(f"{idx}\t{_ITEM_LABELS[bool(short)]}\n")
    manifest = {
        "user_method": groups.user_method,
        "item_method": groups.item_method,
        "cut_stats": groups.cut_stats,
        "n_users": groups.n_users,
        "n_items": groups.n_items,
    }
    with open(out_dir / "segments.manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_dir


def _read_labels(path: Path, true_label: str, false_label: str) -> np.ndarray:
    pairs = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataFormatError("expected 2 tab-separated columns", path=path, line=lineno)
            idx = int(parts[0])
            if parts[1] == true_label:
                pairs[idx] = True
            elif parts[1] == false_label:
                pairs[idx] = False
            else:
                raise DataFormatError(f"unknown label {parts[1]!r}", path=path, line=lineno)
    if sorted(pairs) != list(range(len(pairs))):
        raise DataFormatError("label file must cover dense indices 0..n-1", path=path)
    return np.array([pairs[i] for i in range(len(pairs))], dtype=bool)


def load_groups(in_dir: str | Path) -> GroupAssignment:
    """Read back a directory written by save_groups."""
    in_dir = Path(in_dir)
    manifest_path = in_dir / "segments.manifest.json"
    if not manifest_path.exists():
        raise DataFormatError("missing segments.manifest.json", path=in_dir)
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    user_protected = _read_labels(in_dir / "users.tsv", "protected", "advantaged")
    item_short_head = _read_labels(in_dir / "items.tsv", "short_head", "long_tail")
    return GroupAssignment(
        user_protected,
        item_short_head,
        manifest["user_method"],
        manifest["item_method"],
        manifest.get("cut_stats", {}),
    )
