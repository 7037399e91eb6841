"""Evaluation of ranked lists: accuracy, beyond-accuracy, and the two
group-deviation metrics plus their weighted combination.

Conventions that every report must satisfy (and that the test suite
property-checks):
  exposure_short + exposure_long = 1 when all items are labeled;
  dcf  = ndcg_advantaged - ndcg_protected (signed, advantaged first);
  dpf  = exposure_short - exposure_long (signed, short-head first);
  mcpf = w * dpf + (1 - w) * dcf.

Users without test interactions are excluded from every nDCG mean so
split randomness does not masquerade as (un)fairness.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataio import InteractionDataset
from .errors import UndefinedMetricError, ValidationError
from .rerank import RankedLists
from .segmentation import GroupAssignment


@dataclass
class EvaluationReport:
    """All metrics for one (ranker x mode x lambda) cell."""

    ndcg_all: float
    ndcg_advantaged: float
    ndcg_protected: float
    dcf: float
    novelty: float
    coverage: float
    exposure_short: float
    exposure_long: float
    dpf: float
    mcpf: float
    mcpf_over_all: float | None
    delta_pct: float | None
    k: int
    w: float
    user_method: str
    item_method: str
    ranker_tag: str
    mode: str
    lambda1: float
    lambda2: float
    solver: str = "greedy"
    dataset: str = ""
    n_users_evaluated: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        return cls(**d)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "EvaluationReport":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def per_user_ndcg(lists: RankedLists, test: InteractionDataset, k: int):
    """Binary-relevance nDCG@k per user against the test split.

    Returns (values, evaluated) where evaluated marks users with at least
    one test interaction; values are 0 for excluded users.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    test_items = test.items_by_user()
    n = lists.n_users
    values = np.zeros(n, dtype=np.float64)
    evaluated = np.zeros(n, dtype=bool)
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    ideal_cum = np.concatenate(([0.0], np.cumsum(discounts)))
    for u in range(n):
        relevant = set(int(i) for i in test_items[u])
        if not relevant:
            continue
        evaluated[u] = True
        row = lists.row(u)[:k]
        dcg = sum(discounts[r] for r, item in enumerate(row) if int(item) in relevant)
        idcg = ideal_cum[min(k, len(relevant))]
        values[u] = dcg / idcg if idcg > 0 else 0.0
    return values, evaluated


def group_mean_ndcg(values: np.ndarray, evaluated: np.ndarray, groups: GroupAssignment):
    """Mean nDCG over all evaluated users and per user group.

    Raises UndefinedMetricError when either group has no evaluated user.
    """
    if not evaluated.any():
        raise UndefinedMetricError("no user has test interactions")
    adv = evaluated & ~groups.user_protected
    prot = evaluated & groups.user_protected
    if not adv.any() or not prot.any():
        raise UndefinedMetricError("a user group is empty after test filtering")
    return (
        float(values[evaluated].mean()),
        float(values[adv].mean()),
        float(values[prot].mean()),
    )


def consumer_deviation(ndcg_advantaged: float, ndcg_protected: float) -> float:
    """Signed relevance-parity deviation: advantaged mean minus protected mean."""
    return ndcg_advantaged - ndcg_protected


def producer_deviation(exposure_short: float, exposure_long: float) -> float:
    """Signed exposure-parity deviation: short-head fraction minus long-tail fraction."""
    return exposure_short - exposure_long


def exposure_and_dpf(lists: RankedLists, groups: GroupAssignment):
    """Fractions of recommendation slots held by each item group, and their gap."""
    valid = lists.valid_mask()
    total = int(valid.sum())
    if total == 0:
        raise UndefinedMetricError("no recommendation slots to measure exposure on")
    items = lists.items[valid]
    if items.max() >= groups.n_items:
        raise ValidationError("recommended item without a group label")
    short_slots = int(groups.item_short_head[items].sum())
    short = short_slots / total
    long = (total - short_slots) / total
    return short, long, producer_deviation(short, long)


def novelty(lists: RankedLists, train: InteractionDataset) -> float:
    """Mean self-information -log2(popularity) over all recommended slots.

    Popularity is the fraction of training users who interacted with the
    item; items nobody trained on are capped at popularity 1/n.
    """
    n = train.n_users
    pop = train.item_degrees().astype(np.float64) / n
    pop = np.maximum(pop, 1.0 / n)
    valid = lists.valid_mask()
    if not valid.any():
        return 0.0
    return float(np.mean(-np.log2(pop[lists.items[valid]])))


def coverage(lists: RankedLists, n_items: int) -> float:
    """Fraction of the catalog recommended to at least one user."""
    if n_items < 1:
        return 0.0
    valid = lists.valid_mask()
    distinct = np.unique(lists.items[valid])
    return float(len(distinct) / n_items)


def mcpf(dcf: float, dpf: float, w: float = 0.5) -> float:
    """Weighted two-sided deviation: w * dpf + (1 - w) * dcf. Lower is fairer."""
    if not 0 <= w <= 1:
        raise ValidationError(f"w must be in [0, 1], got {w}")
    return w * dpf + (1 - w) * dcf


def delta_pct(mcpf_reference: float, mcpf_value: float) -> float:
    """Relative improvement of mcpf_value over the reference, in percent (absolute)."""
    if mcpf_reference == 0:
        raise UndefinedMetricError("delta undefined: reference mcpf is 0")
    return abs((mcpf_reference - mcpf_value) / mcpf_reference) * 100.0


def evaluate(
    lists: RankedLists,
    train: InteractionDataset,
    test: InteractionDataset,
    groups: GroupAssignment,
    k: int | None = None,
    w: float = 0.5,
    ranker_tag: str = "",
    dataset: str = "",
    reference: EvaluationReport | None = None,
) -> EvaluationReport:
    """Build a full report for one set of ranked lists."""
    k = lists.k if k is None else k
    values, evaluated = per_user_ndcg(lists, test, k)
    ndcg_all, ndcg_adv, ndcg_prot = group_mean_ndcg(values, evaluated, groups)
    dcf = consumer_deviation(ndcg_adv, ndcg_prot)
    short, long, dpf = exposure_and_dpf(lists, groups)
    combined = mcpf(dcf, dpf, w)
    over_all = combined / ndcg_all if ndcg_all != 0 else None
    delta = None
    if reference is not None and reference.mcpf != 0:
        delta = delta_pct(reference.mcpf, combined)
    return EvaluationReport(
        ndcg_all=ndcg_all,
        ndcg_advantaged=ndcg_adv,
        ndcg_protected=ndcg_prot,
        dcf=dcf,
        novelty=novelty(lists, train),
        coverage=coverage(lists, train.n_items),
        exposure_short=short,
        exposure_long=long,
        dpf=dpf,
        mcpf=combined,
        mcpf_over_all=over_all,
        delta_pct=delta,
        k=k,
        w=w,
        user_method=groups.user_method,
        item_method=groups.item_method,
        ranker_tag=ranker_tag,
        mode=lists.config.mode,
        lambda1=lists.config.lambda1,
        lambda2=lists.config.lambda2,
        solver=lists.config.solver,
        dataset=dataset,
        n_users_evaluated=int(evaluated.sum()),
    )
