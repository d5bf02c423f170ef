"""Tests for dice, aggregation and the Wilcoxon signed-rank test"""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapeprior.core.errors import InvalidInputError, InvalidShapeError
from shapeprior.core.evaluation import (
    EvalReport,
    aggregate,
    dice_score,
    paired_scores,
    wilcoxon_signed_rank,
)
from shapeprior.core.targets import LabelMap


def enumeration_oracle(pairs):
    """Two-sided p from every sign pattern, ranks by explicit mid-rank counting"""
    d = [a - b for a, b in pairs if a - b != 0]
    n = len(d)
    mags = [abs(x) for x in d]
    ranks = []
    for m in mags:
        below = sum(1 for o in mags if o < m)
        equal = sum(1 for o in mags if o == m)
        ranks.append(below + (equal + 1) / 2)
    w_plus = sum(r for r, x in zip(ranks, d) if x > 0)
    w_minus = sum(r for r, x in zip(ranks, d) if x < 0)
    w = min(w_plus, w_minus)
    total = sum(ranks)
    extreme = 0
    for signs in itertools.product((0, 1), repeat=n):
        plus = sum(r for r, s in zip(ranks, signs) if s)
        if min(plus, total - plus) <= w + 1e-9:
            extreme += 1
    return w, extreme / 2 ** n


def grid(values) -> LabelMap:
    return LabelMap(np.array(values), 3)


class TestDice:
    """Per-class dice"""

    def test_identical(self):
        labels = grid([[0, 1], [1, 2]])
        assert dice_score(labels, labels, 1) == 1.0

    def test_disjoint(self):
        assert dice_score(grid([[1, 0], [0, 0]]), grid([[0, 0], [0, 1]]), 1) == 0.0

    def test_half_overlap(self):
        pred = grid([[1, 1, 0, 0], [1, 1, 0, 0]])
        gt = grid([[0, 1, 1, 0], [0, 1, 1, 0]])
        assert dice_score(pred, gt, 1) == 0.5

    def test_both_empty_excluded(self):
        assert dice_score(grid([[0, 1]]), grid([[1, 0]]), 2) is None

    def test_symmetric_and_relabel_invariant(self):
        rng = np.random.default_rng(0)
        a = rng.integers(0, 3, size=(6, 6))
        b = rng.integers(0, 3, size=(6, 6))
        swap = np.array([0, 2, 1])
        assert dice_score(grid(a), grid(b), 1) == dice_score(grid(b), grid(a), 1)
        assert dice_score(grid(a), grid(b), 1) == dice_score(grid(swap[a]), grid(swap[b]), 2)

    def test_extent_mismatch(self):
        with pytest.raises(InvalidShapeError):
            dice_score(grid([[0, 1]]), grid([[0], [1]]), 1)


class TestAggregate:
    """Mean ± sample standard deviation"""

    def test_three_values(self):
        agg = aggregate([0.8, 0.9, 1.0])
        assert agg.mean == pytest.approx(0.9)
        assert agg.std == pytest.approx(0.1)
        assert agg.format() == "0.9000 ± 0.1000"

    def test_constant(self):
        agg = aggregate([0.7, 0.7, 0.7])
        assert agg.std == 0.0

    def test_single_score_flagged(self):
        agg = aggregate([0.42])
        assert agg.mean == 0.42 and agg.std == 0.0
        assert not agg.std_defined

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            aggregate([])


class TestWilcoxon:
    """Signed-rank test"""

    def test_five_positive_differences(self):
        result = wilcoxon_signed_rank([(1.0, 0.0), (2.0, 0.0), (3.0, 0.0), (4.0, 0.0), (5.0, 0.0)])
        assert result.statistic == 0
        assert result.p_value == 0.0625
        assert result.exact

    def test_single_pair(self):
        assert wilcoxon_signed_rank([(0.9, 0.8)]).p_value == 1.0

    def test_all_zero_differences(self):
        result = wilcoxon_signed_rank([(0.5, 0.5), (0.7, 0.7)])
        assert result.degenerate
        assert result.p_value == 1.0

    def test_no_pairs(self):
        with pytest.raises(InvalidInputError):
            wilcoxon_signed_rank([])

    def test_large_sample_uses_normal_approximation(self):
        rng = np.random.default_rng(3)
        pairs = [(a + 0.05, a) for a in rng.random(30)]
        result = wilcoxon_signed_rank(pairs)
        assert not result.exact
        assert result.statistic == 0
        assert 0 < result.p_value < 0.001

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.integers(-3, 3), st.integers(-3, 3)), min_size=1, max_size=10))
    def test_matches_enumeration_oracle(self, pairs):
        pairs = [(a / 4, b / 4) for a, b in pairs]
        if all(a == b for a, b in pairs):
            assert wilcoxon_signed_rank(pairs).degenerate
            return
        w, p = enumeration_oracle(pairs)
        result = wilcoxon_signed_rank(pairs)
        assert result.statistic == w
        assert result.p_value == p
        assert 0 < result.p_value <= 1


class TestEvalReport:
    """Pairing across arms"""

    def setup_method(self):
        self.report = EvalReport(organs={1: "a", 2: "b"}, reference="baseline")
        self.report.dice["baseline"] = {1: [0.5, 0.6, None], 2: [0.7, None, 0.9]}
        self.report.dice["both"] = {1: [0.6, 0.7, 0.1], 2: [0.8, 0.2, None]}

    def test_pairs_skip_excluded_cases(self):
        assert paired_scores(self.report.dice["both"][1], self.report.dice["baseline"][1]) == [(0.6, 0.5), (0.7, 0.6)]

    def test_global_pools_all_organs(self):
        assert self.report.global_aggregate("baseline").n == 4
        assert self.report.global_test("both").n == 3

    def test_reference_not_tested(self):
        assert self.report.organ_test("baseline", 1) is None

    def test_unequal_lengths_rejected(self):
        with pytest.raises(InvalidInputError):
            paired_scores([0.1], [0.1, 0.2])
