import math

import numpy as np
import pytest

from fairrerank.errors import UndefinedMetricError, ValidationError
from fairrerank.metrics import (
    EvaluationReport,
    consumer_deviation,
    coverage,
    delta_pct,
    evaluate,
    exposure_and_dpf,
    mcpf,
    novelty,
    per_user_ndcg,
    producer_deviation,
)
from fairrerank.rerank import RankedLists, RerankConfig
from fairrerank.segmentation import GroupAssignment

from conftest import make_dataset


def lists_from_rows(rows, k=None):
    """RankedLists scaffold from plain item-index rows (scores irrelevant here)."""
    k = k or max(len(r) for r in rows)
    n = len(rows)
    items = np.full((n, k), -1, dtype=np.int64)
    scores = np.full((n, k), np.nan)
    lengths = np.zeros(n, dtype=np.int64)
    for u, row in enumerate(rows):
        lengths[u] = len(row)
        items[u, : len(row)] = row
        scores[u, : len(row)] = np.linspace(1.0, 0.5, len(row))
    return RankedLists(items, scores, lengths, 0.0, RerankConfig(k=k, mode="N"))


def groups_of(user_protected, item_short_head):
    return GroupAssignment(
        np.asarray(user_protected, dtype=bool),
        np.asarray(item_short_head, dtype=bool),
        "activity_ug1",
    )


class TestNdcg:
    def test_perfect_list(self):
        lists = lists_from_rows([[0, 1, 2]])
        test = make_dataset([(0, 0), (0, 1), (0, 2)], n_users=1, n_items=3)
        values, evaluated = per_user_ndcg(lists, test, 3)
        assert evaluated[0]
        assert values[0] == pytest.approx(1.0)

    def test_no_hits(self):
        lists = lists_from_rows([[0, 1, 2]])
        test = make_dataset([(0, 4)], n_users=1, n_items=5)
        values, _ = per_user_ndcg(lists, test, 3)
        assert values[0] == 0.0

    def test_hand_computed_value(self):
        # hits at ranks 1 and 3, two test items:
        # ( 1 + 1/2 ) / ( 1 + 1/log2(3) ) = 0.919721...
        lists = lists_from_rows([[0, 1, 2]])
        test = make_dataset([(0, 0), (0, 2)], n_users=1, n_items=3)
        values, _ = per_user_ndcg(lists, test, 3)
        expected = (1 + 1 / 2) / (1 + 1 / math.log2(3))
        assert values[0] == pytest.approx(expected, abs=1e-12)
        assert values[0] == pytest.approx(0.9197, abs=1e-4)

    def test_empty_test_users_excluded(self):
        lists = lists_from_rows([[0], [1]])
        test = make_dataset([(0, 0)], n_users=2, n_items=2)
        values, evaluated = per_user_ndcg(lists, test, 1)
        assert evaluated.tolist() == [True, False]


class TestDeviations:
    def test_dcf_reference_values(self):
        assert consumer_deviation(0.0751, 0.0298) == pytest.approx(0.0453, abs=1e-4)
        assert consumer_deviation(0.0259, 0.0378) == pytest.approx(-0.0119, abs=1e-4)

    def test_dcf_zero_for_identical_means(self):
        assert consumer_deviation(0.5, 0.5) == 0.0

    def test_dcf_symmetry_under_random_assignment(self, rng):
        # identical per-user scores make the group gap vanish
        values = np.full(40, 0.37)
        for _ in range(10):
            prot = rng.random(40) < 0.5
            if prot.all() or not prot.any():
                continue
            adv_mean = values[~prot].mean()
            prot_mean = values[prot].mean()
            assert consumer_deviation(adv_mean, prot_mean) == pytest.approx(0.0, abs=1e-12)

    def test_dpf_reference_values(self):
        assert producer_deviation(0.8281, 0.1719) == pytest.approx(0.6562, abs=1e-4)
        assert producer_deviation(0.4452, 0.5548) == pytest.approx(-0.1096, abs=1e-4)

    def test_all_long_tail_extreme(self):
        lists = lists_from_rows([[0, 1], [2, 3]])
        groups = groups_of([True, False], [False] * 4)
        short, long, dpf = exposure_and_dpf(lists, groups)
        assert (short, long, dpf) == (0.0, 1.0, -1.0)

    def test_exposure_counts_slots(self):
        lists = lists_from_rows([[0, 1], [0, 2]])
        groups = groups_of([True, False], [True, False, False])
        short, long, dpf = exposure_and_dpf(lists, groups)
        assert short == pytest.approx(0.5)
        assert long == pytest.approx(0.5)
        assert dpf == pytest.approx(0.0)


class TestBeyondAccuracy:
    def test_novelty_all_users_consumed(self):
        train = make_dataset([(u, 0) for u in range(4)], n_users=4, n_items=1)
        lists = lists_from_rows([[0]] * 4)
        assert novelty(lists, train) == pytest.approx(0.0)

    def test_novelty_half_popularity(self):
        train = make_dataset([(0, 0), (1, 0), (0, 1)], n_users=4, n_items=2)
        # item 1 consumed by 1 of 4 users -> -log2(1/4) = 2; item 0 by half -> 1
        lists = lists_from_rows([[0], [1]])
        assert novelty(lists, train) == pytest.approx((1.0 + 2.0) / 2)

    def test_novelty_matches_slotwise_oracle(self, rng):
        train = make_dataset(
            [(u, i) for u in range(10) for i in range(10) if (u * 7 + i) % 3], n_users=10, n_items=12
        )
        rows = [list(rng.choice(12, size=4, replace=False)) for _ in range(10)]
        lists = lists_from_rows(rows)
        deg = np.bincount(train.item_idx, minlength=12)
        expected = np.mean(
            [-math.log2(max(deg[i], 1) / 10) for row in rows for i in row]
        )
        assert novelty(lists, train) == pytest.approx(expected, abs=1e-12)

    def test_coverage_full_catalog(self):
        lists = lists_from_rows([[0, 1], [2, 3]])
        assert coverage(lists, 4) == 1.0

    def test_coverage_same_items_everywhere(self):
        lists = lists_from_rows([[0, 1]] * 5)
        assert coverage(lists, 8) == pytest.approx(2 / 8)

    def test_coverage_matches_set_union(self, rng):
        rows = [list(rng.choice(30, size=5, replace=False)) for _ in range(12)]
        lists = lists_from_rows(rows)
        distinct = {i for row in rows for i in row}
        assert coverage(lists, 30) == pytest.approx(len(distinct) / 30)


class TestMcpf:
    def test_reference_delta(self):
        assert delta_pct(0.3588, 0.1418) == pytest.approx(60.4794, abs=0.01)

    def test_zero_deviations(self):
        assert mcpf(0.0, 0.0) == 0.0

    def test_boundary_weight(self):
        assert mcpf(dcf=0.3, dpf=0.8, w=1.0) == 0.8
        assert mcpf(dcf=0.3, dpf=0.8, w=0.0) == 0.3

    def test_zero_reference_rejected(self):
        with pytest.raises(UndefinedMetricError):
            delta_pct(0.0, 0.1)

    def test_bad_weight_rejected(self):
        with pytest.raises(ValidationError):
            mcpf(0.1, 0.1, w=1.5)


class TestEvaluateReport:
    def _setup(self, rng, n_users=12, n_items=20, k=4):
        train = make_dataset(
            [(u, (u + j) % n_items) for u in range(n_users) for j in range(5)],
            n_users=n_users,
            n_items=n_items,
        )
        test = make_dataset(
            [(u, (u + j + 5) % n_items) for u in range(n_users) for j in range(2)],
            n_users=n_users,
            n_items=n_items,
        )
        rows = [list(rng.choice(n_items, size=k, replace=False)) for _ in range(n_users)]
        lists = lists_from_rows(rows)
        prot = rng.random(n_users) < 0.6
        if prot.all():
            prot[0] = False
        if not prot.any():
            prot[0] = True
        groups = groups_of(prot, rng.random(n_items) < 0.3)
        return lists, train, test, groups

    def test_identity_invariants(self, rng):
        for _ in range(25):
            lists, train, test, groups = self._setup(rng)
            rep = evaluate(lists, train, test, groups, w=0.3, ranker_tag="t")
            assert rep.exposure_short + rep.exposure_long == pytest.approx(1.0, abs=1e-12)
            assert rep.dcf == pytest.approx(rep.ndcg_advantaged - rep.ndcg_protected, abs=1e-12)
            assert rep.dpf == pytest.approx(rep.exposure_short - rep.exposure_long, abs=1e-12)
            assert rep.mcpf == pytest.approx(0.3 * rep.dpf + 0.7 * rep.dcf, abs=1e-12)

    def test_user_permutation_invariance(self, rng):
        lists, train, test, groups = self._setup(rng)
        rep = evaluate(lists, train, test, groups)
        perm = rng.permutation(lists.n_users)
        lists2 = RankedLists(
            lists.items[perm], lists.scores[perm], lists.row_lengths[perm],
            lists.objective_value, lists.config,
        )
        train2 = make_dataset(
            [(int(np.argmax(perm == u)), int(i)) for u, i in zip(train.user_idx, train.item_idx)],
            n_users=train.n_users, n_items=train.n_items,
        )
        test2 = make_dataset(
            [(int(np.argmax(perm == u)), int(i)) for u, i in zip(test.user_idx, test.item_idx)],
            n_users=test.n_users, n_items=test.n_items,
        )
        groups2 = GroupAssignment(
            groups.user_protected[perm], groups.item_short_head, groups.user_method
        )
        rep2 = evaluate(lists2, train2, test2, groups2)
        assert rep2.ndcg_all == pytest.approx(rep.ndcg_all, abs=1e-12)
        assert rep2.dcf == pytest.approx(rep.dcf, abs=1e-12)
        assert rep2.dpf == pytest.approx(rep.dpf, abs=1e-12)

    def test_dpf_range(self, rng):
        for _ in range(10):
            lists, train, test, groups = self._setup(rng)
            rep = evaluate(lists, train, test, groups)
            assert -1.0 <= rep.dpf <= 1.0
            assert 0.0 <= rep.ndcg_all <= 1.0

    def test_empty_group_rejected(self, rng):
        lists, train, test, _ = self._setup(rng)
        groups = groups_of([True] * lists.n_users, [False] * train.n_items)
        with pytest.raises(UndefinedMetricError):
            evaluate(lists, train, test, groups)

    def test_report_roundtrip(self, tmp_path, rng):
        lists, train, test, groups = self._setup(rng)
        rep = evaluate(lists, train, test, groups, ranker_tag="mostpop", dataset="synth")
        path = rep.save(tmp_path / "rep.json")
        back = EvaluationReport.load(path)
        assert back == rep


REFERENCE_EXPOSURE_TRIPLES = [
    # (short, long, dpf) regression fixtures: activity segmentation block
    (0.8281, 0.1719, 0.6562), (0.8243, 0.1757, 0.6486),
    (0.6153, 0.3847, 0.2306), (0.6113, 0.3887, 0.2226),
    (0.9423, 0.0577, 0.8846), (0.9423, 0.0577, 0.8846),
    (0.9322, 0.0678, 0.8644), (0.9322, 0.0678, 0.8644),
    (0.9914, 0.0086, 0.9828), (0.9913, 0.0087, 0.9826),
    (0.9849, 0.0151, 0.9698), (0.9851, 0.0149, 0.9702),
    (0.9190, 0.0810, 0.8380), (0.9184, 0.0816, 0.8368),
    (0.8946, 0.1054, 0.7892), (0.8943, 0.1057, 0.7886),
    (0.6945, 0.3055, 0.3890), (0.6947, 0.3053, 0.3894),
    (0.6792, 0.3208, 0.3584), (0.6784, 0.3216, 0.3568),
    (0.4452, 0.5548, -0.1096), (0.4406, 0.5594, -0.1188),
    (0.3313, 0.6687, -0.3374), (0.3278, 0.6722, -0.3444),
    (0.9940, 0.0060, 0.9880), (0.9940, 0.0060, 0.9880),
    (0.9811, 0.0189, 0.9622), (0.9773, 0.0227, 0.9546),
    (0.7730, 0.2270, 0.5460), (0.7738, 0.2262, 0.5476),
    (0.7294, 0.2706, 0.4588), (0.7318, 0.2682, 0.4636),
]


def test_reference_exposure_identities():
    for short, long, dpf in REFERENCE_EXPOSURE_TRIPLES:
        assert producer_deviation(short, long) == pytest.approx(dpf, abs=1e-4)
