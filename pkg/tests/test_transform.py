"""Tests for src/transform.py"""

import numpy as np
import pytest
from scipy import stats

from src.alignment import ScoringScheme, lcs, score
from src.counters import TripletPattern, summarize
from src.errors import DomainError, IndexOutOfRange, Infeasible, NoEligibleTriplet
from src.markov_model import ChainSample, PairState, build_max, sample_chain, stationary
from src.transform import (
    CombinedWeights,
    GainProfile,
    GeneralQWeights,
    apply_combined,
    apply_single,
    check_disjoint,
    conditional_split,
    eligible_positions,
    equal_q_weights,
    expected_gain,
    gain_profile,
    general_q_weights,
    score_reversal,
)


ONES = TripletPattern.uniform(1, 1)
TEN = TripletPattern.uniform(1, 0)
ONE_ZERO = TripletPattern.uniform(0, 1)


def hand_sample(states):
    return ChainSample(np.asarray(states), 0, "hand", 2)


@pytest.fixture
def max_sample():
    """A 90-state sample from max(0.9, 0.7, 0.05) with five triplets pinned eligible for ONES."""
    P = build_max(0.9, 0.7, 0.05)
    z = sample_chain(P, stationary(P), 90, 17)
    for triplet, middle in ((0, 0), (4, 1), (9, 2), (15, 0), (22, 1)):
        z.states[3 * triplet:3 * triplet + 3] = [3, middle, 3]
    return z


class TestApplySingle:
    """Tests for the single-pattern transformation."""

    def test_hand_example(self):
        z = hand_sample([3, 0, 3, 3, 3, 3, 0, 0, 0])
        assert eligible_positions(z, ONES).tolist() == [0]
        outcome = apply_single(z, ONES, np.random.default_rng(0))
        assert outcome.changed_index == 1
        assert outcome.triplet == 0
        assert outcome.old_pair == PairState(0, 0)
        assert outcome.modified.states.tolist() == [3, 3, 3, 3, 3, 3, 0, 0, 0]
        assert z.states[1] == 0

    def test_counters_move_by_one(self, max_sample):
        before = summarize(max_sample, ONES)
        outcome = apply_single(max_sample, ONES, np.random.default_rng(4))
        after = summarize(outcome.modified, ONES)
        assert after.v == before.v
        assert after.u == before.u + 1
        assert np.count_nonzero(outcome.modified.states != max_sample.states) == 1

    def test_uniform_choice(self):
        z = hand_sample([3, 0, 3, 3, 1, 3, 3, 2, 3])
        rng = np.random.default_rng(8)
        picks = [apply_single(z, ONES, rng).triplet for _ in range(3000)]
        counts = np.bincount(picks, minlength=3)
        assert counts.min() > 850

    def test_no_eligible(self):
        with pytest.raises(NoEligibleTriplet):
            apply_single(hand_sample([3, 3, 3]), ONES, np.random.default_rng(0))
        with pytest.raises(NoEligibleTriplet):
            apply_single(hand_sample([0, 0, 0]), ONES, np.random.default_rng(0))


class TestExpectedGain:
    """Tests for expected_gain and gain_profile."""

    def brute_gains(self, z, pattern, m, scorer):
        n = 3 * m
        xs, ys = z.xs[:n].tolist(), z.ys[:n].tolist()
        base = scorer(xs, ys)
        gains = []
        for t in eligible_positions(z, pattern):
            if t >= m:
                continue
            x2, y2 = list(xs), list(ys)
            x2[3 * t + 1], y2[3 * t + 1] = pattern.D.x, pattern.D.y
            gains.append(scorer(x2, y2) - base)
        return base, gains

    def test_lcs_gain_matches_brute_force(self, max_sample):
        _, gains = self.brute_gains(max_sample, ONES, 30, lcs)
        assert len(gains) >= 5
        assert expected_gain(max_sample, ONES, ScoringScheme.lcs(2)) == pytest.approx(np.mean(gains))

    def test_general_gain_matches_brute_force(self, max_sample):
        scheme = ScoringScheme(np.array([[1.0, 0.3], [0.2, 0.9]]), delta=0.25)
        _, gains = self.brute_gains(max_sample, ONES, 30, lambda x, y: score(x, y, scheme))
        assert len(gains) >= 5
        assert expected_gain(max_sample, ONES, scheme) == pytest.approx(np.mean(gains))

    def test_subsample_needs_rng(self, max_sample):
        with pytest.raises(DomainError):
            expected_gain(max_sample, ONES, ScoringScheme.lcs(2), subsample=1)
        value = expected_gain(max_sample, ONES, ScoringScheme.lcs(2), subsample=1,
                              rng=np.random.default_rng(1))
        assert value in (-2.0, -1.0, 0.0, 1.0, 2.0)

    def test_no_eligible(self):
        with pytest.raises(NoEligibleTriplet):
            expected_gain(hand_sample([3, 3, 3]), ONES, ScoringScheme.lcs(2))

    @pytest.mark.parametrize("scheme", [
        ScoringScheme.lcs(2),
        ScoringScheme(np.array([[1.0, 0.0], [0.0, 1.0]]), delta=0.5),
    ])
    def test_profile_matches_brute_force(self, max_sample, scheme):
        grid = [2, 5, 10, 30]
        profile = gain_profile(max_sample, [ONES], grid, scheme)
        scorer = lcs if scheme.is_lcs else (lambda x, y: score(x, y, scheme))
        for m in grid:
            base, gains = self.brute_gains(max_sample, ONES, m, scorer)
            assert profile.baseline[m] == pytest.approx(base)
            assert sorted(profile.gains[m]) == pytest.approx(sorted(gains))
            assert profile.j_count(m) == len(gains)

    def test_profile_pools_patterns(self, max_sample):
        profile = gain_profile(max_sample, [TEN, ONE_ZERO], [30], ScoringScheme.lcs(2))
        expected = (len(eligible_positions(max_sample, TEN))
                    + len(eligible_positions(max_sample, ONE_ZERO)))
        assert profile.j_count(30) == expected

    def test_profile_grid_too_long(self, max_sample):
        with pytest.raises(IndexOutOfRange):
            gain_profile(max_sample, [ONES], [31], ScoringScheme.lcs(2))
        with pytest.raises(DomainError):
            gain_profile(max_sample, [ONES], [0, 5], ScoringScheme.lcs(2))

    def test_empty_mean(self):
        profile = GainProfile([5], {5: 3.0}, {5: []})
        assert profile.e_m(5) is None
        assert profile.j_count(7) == 0

    def test_score_reversal(self):
        assert score_reversal(3, 10) == 7

    def test_reflected_profile(self, max_sample):
        grid = [10, 30]
        plain = gain_profile(max_sample, [ONES], grid, ScoringScheme.lcs(2))
        reflected = gain_profile(max_sample, [ONES], grid, ScoringScheme.lcs(2), reflect=True)
        for m in grid:
            assert reflected.baseline[m] == 3 * m - plain.baseline[m]
            assert reflected.gains[m] == [-g for g in plain.gains[m]]
            assert reflected.e_m(m) == pytest.approx(-plain.e_m(m))

    def test_reflect_needs_lcs(self, max_sample):
        scheme = ScoringScheme(np.eye(2), delta=0.5)
        with pytest.raises(DomainError):
            gain_profile(max_sample, [ONES], [10], scheme, reflect=True)


class TestWeights:
    """Tests for the combined-transformation weights."""

    def test_equal_q_weights(self):
        w = equal_q_weights(1, 0, 3, 2)
        assert (w.r1, w.r2) == pytest.approx((0.5, 0.5))

    def test_equal_q_weights_domain(self):
        with pytest.raises(DomainError):
            equal_q_weights(2, 2, 2, 2)
        with pytest.raises(DomainError):
            equal_q_weights(3, 0, 2, 2)

    def test_weight_validation(self):
        with pytest.raises(Infeasible):
            CombinedWeights(1.5, -0.5)
        with pytest.raises(DomainError):
            CombinedWeights(0.5, 0.4)

    def test_conditional_split(self):
        split = conditional_split(4, 5, 3, 0.3, 0.6)
        assert sum(split.values()) == pytest.approx(1.0)
        assert min(split) == 1 and max(split) == 4
        raw = {l: stats.binom.pmf(l, 5, 0.3) * stats.binom.pmf(4 - l, 3, 0.6) for l in split}
        total = sum(raw.values())
        for l, p in split.items():
            assert p == pytest.approx(raw[l] / total)

    def test_conditional_split_unattainable(self):
        with pytest.raises(DomainError):
            conditional_split(9, 5, 3, 0.3, 0.6)

    def test_general_reduces_to_equal(self):
        table = general_q_weights(3, 4, 5, 0.6, 0.6)
        for l, w in table.weights.items():
            assert w.r1 == pytest.approx(equal_q_weights(l, 3 - l, 4, 5).r1, abs=1e-9)
        assert table.residual <= 1e-9

    def test_general_smallest_case(self):
        table = general_q_weights(0, 1, 1, 0.3, 0.8)
        assert table.at(0).r2 == pytest.approx(0.56 / 0.62)

    def assert_transports(self, table, u, v1, v2, q1, q2):
        before = conditional_split(u, v1, v2, q1, q2)
        after = conditional_split(u + 1, v1, v2, q1, q2)
        for l, target in after.items():
            produced = 0.0
            if l - 1 in before:
                produced += table.at(l - 1).r1 * before[l - 1]
            if l in before:
                produced += table.at(l).r2 * before[l]
            assert produced == pytest.approx(target, abs=1e-12)

    def test_general_first_step(self):
        # P(U1=. | U=0) = {0: 1}, P(U1=. | U=1) = {0: 7/9, 1: 2/9}
        table = general_q_weights(0, 1, 1, 0.3, 0.6)
        assert table.at(0).r1 == pytest.approx(2 / 9)
        assert table.at(0).r2 == pytest.approx(7 / 9)
        self.assert_transports(table, 0, 1, 1, 0.3, 0.6)

    def test_general_transport(self):
        # P(U1=. | U=1) = {0: 7/8, 1: 1/8}, P(U1=. | U=2) = {0: 7/11, 1: 4/11}
        assert conditional_split(1, 1, 2, 0.3, 0.6) == pytest.approx({0: 7 / 8, 1: 1 / 8})
        table = general_q_weights(1, 1, 2, 0.3, 0.6)
        assert (table.at(0).r1, table.at(0).r2) == pytest.approx((3 / 11, 8 / 11))
        assert (table.at(1).r1, table.at(1).r2) == pytest.approx((0.0, 1.0))
        assert table.residual <= 1e-12
        self.assert_transports(table, 1, 1, 2, 0.3, 0.6)

    def test_general_rule_callable(self):
        rule = GeneralQWeights(0.3, 0.8)
        assert rule(0, 0, 1, 1).r2 == pytest.approx(0.56 / 0.62)
        assert len(rule._cache) == 1
        rule(0, 0, 1, 1)
        assert len(rule._cache) == 1

    def test_general_full_total(self):
        with pytest.raises(DomainError):
            general_q_weights(4, 2, 2, 0.5, 0.5)


class TestApplyCombined:
    """Tests for the two-pattern transformation."""

    def test_both_sides_used(self):
        z = hand_sample([2, 0, 2, 1, 0, 1, 2, 2, 2])
        rng = np.random.default_rng(2)
        sides = [apply_combined(z, TEN, ONE_ZERO, rng).side for _ in range(400)]
        assert 120 < sides.count(1) < 280

    def test_full_side_is_skipped(self):
        z = hand_sample([2, 2, 2, 1, 0, 1])
        rng = np.random.default_rng(2)
        for _ in range(20):
            outcome = apply_combined(z, TEN, ONE_ZERO, rng)
            assert outcome.side == 2
            assert outcome.changed_index == 4

    def test_neither_side_eligible(self):
        z = hand_sample([2, 2, 2, 1, 1, 1])
        with pytest.raises(NoEligibleTriplet):
            apply_combined(z, TEN, ONE_ZERO, np.random.default_rng(0))

    def test_patterns_must_differ(self):
        with pytest.raises(DomainError):
            check_disjoint(ONES, TripletPattern.parse("1,1;1,1;0,0"))
