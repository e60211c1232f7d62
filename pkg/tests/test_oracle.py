"""Tests for src/oracle.py"""

import math

import numpy as np
import pytest

from src.alignment import ScoringScheme
from src.counters import TripletPattern, summarize
from src.errors import CapExceeded, DomainError, EmptyCondition
from src.markov_model import (
    ChainSample,
    TransitionMatrix,
    build_ind,
    build_max,
    build_min,
    shipped_models,
    stationary,
)
from src.oracle import (
    VerificationSuite,
    build_space,
    clt_sweep,
    count_uv,
    enumerate_conditional,
    prefix_blocks,
    total_variation,
    uniform_kernel,
    verify_A3,
    verify_bernoulli_proposition,
    verify_binomial_identity,
    verify_combined_A3,
    verify_expected_gain,
    verify_uv_conditional_independence,
    _eligible,
    _matches,
)


ONES = TripletPattern.uniform(1, 1)
TEN = TripletPattern.uniform(1, 0)
ONE_ZERO = TripletPattern.uniform(0, 1)


@pytest.fixture(scope="module")
def max_model():
    P = build_max(0.9, 0.7, 0.05)
    return P, stationary(P)


def first_eligible_kernel(space, weights, pattern):
    """Moves all mass to the first eligible triplet instead of spreading it."""
    d = pattern.D.flat(space.k)
    eligible = _eligible(space.seqs, pattern, space.k)
    pushed = np.zeros(space.size)
    has = eligible.any(axis=1) & (weights != 0)
    first = np.argmax(eligible, axis=1)
    for i in np.nonzero(has)[0]:
        pos = 3 * int(first[i]) + 1
        pushed[i + (d - space.seqs[i, pos]) * space.place(pos)] += weights[i]
    return pushed


def shifted_counter(seqs, pattern, k):
    """Counts a hit when the middle of the next triplet equals D."""
    _, v, matched = _matches(seqs, pattern, k)
    m = matched.shape[1]
    middles = seqs[:, 1:3 * m:3]
    hit = np.zeros_like(matched)
    hit[:, :-1] = matched[:, :-1] & (middles[:, 1:] == pattern.D.flat(k))
    return hit.sum(axis=1), v


class TestSequenceSpace:
    """Tests for enumeration of the sequence space."""

    def test_probabilities_sum_to_one(self, max_model):
        space = build_space(*max_model, 4)
        assert space.size == 256
        assert space.probs.sum() == pytest.approx(1.0)

    def test_lexicographic_order(self, max_model):
        space = build_space(*max_model, 3)
        assert space.seqs[0].tolist() == [0, 0, 0]
        assert space.seqs[1].tolist() == [0, 0, 1]
        assert space.seqs[-1].tolist() == [3, 3, 3]
        assert space.place(0) == 16

    def test_cap(self, max_model):
        with pytest.raises(CapExceeded):
            build_space(*max_model, 6, cap=4 ** 5)

    def test_too_short(self, max_model):
        with pytest.raises(DomainError):
            build_space(*max_model, 2)

    def test_counts_match_summarize(self, max_model):
        space = build_space(*max_model, 6)
        us, vs = count_uv(space.seqs, ONES, 2)
        rng = np.random.default_rng(0)
        for i in rng.integers(space.size, size=50):
            summary = summarize(ChainSample(space.seqs[i], 0, "row", 2), ONES)
            assert (us[i], vs[i]) == (summary.u, summary.v)

    def test_prefix_blocks_tile_the_space(self):
        for partitions in (1, 3, 4, 5, 17):
            blocks = prefix_blocks(4, 5, partitions)
            assert blocks[0][0] == 0
            assert blocks[-1][1] == 4 ** 5
            assert all(a[1] == b[0] for a, b in zip(blocks, blocks[1:]))
            assert len(blocks) == partitions

    @pytest.mark.parametrize("partitions", [3, 5, 16, 64])
    def test_partitions_do_not_change_space(self, max_model, partitions):
        whole = build_space(*max_model, 5)
        split = build_space(*max_model, 5, partitions=partitions)
        assert np.array_equal(split.seqs, whole.seqs)
        assert np.array_equal(split.probs, whole.probs)

    def test_workers_do_not_change_space(self, max_model):
        serial = build_space(*max_model, 6)
        parallel = build_space(*max_model, 6, workers=2, partitions=5)
        assert np.array_equal(parallel.seqs, serial.seqs)
        assert np.array_equal(parallel.probs, serial.probs)


class TestConditionalLaw:
    """Tests for enumerate_conditional."""

    def test_law_normalized(self, max_model):
        law = enumerate_conditional(*max_model, ONES, 6, 1, 2)
        assert law.probs.sum() == pytest.approx(1.0)
        for z, _ in law.sequences()[:20]:
            summary = summarize(z, ONES)
            assert (summary.u, summary.v) == (1, 2)

    def test_empty_condition(self, max_model):
        with pytest.raises(EmptyCondition):
            enumerate_conditional(*max_model, ONES, 6, 3, 2)


class TestTransportChecks:
    """Tests for the exhaustive transport checks and their mutations."""

    @pytest.mark.parametrize("name", ["ind", "max", "min"])
    def test_a3_shipped_models(self, name):
        P = shipped_models()[name]
        report = verify_A3(P, stationary(P), ONES, 6)
        assert report.passed
        assert report.checked > 0
        assert report.max_residual <= 1e-10

    @pytest.mark.slow
    @pytest.mark.parametrize("name", ["ind", "max", "min"])
    def test_a3_n9(self, name):
        P = shipped_models()[name]
        assert verify_A3(P, stationary(P), ONES, 9).passed

    def test_a3_other_pattern(self):
        P = build_min(0.7, 0.7, 0.05)
        report = verify_A3(P, stationary(P), TripletPattern.parse("1,0;0,1;1,1"), 6)
        assert report.passed

    def test_a3_exact(self, max_model):
        report = verify_A3(*max_model, ONES, 6, exact=True)
        assert report.passed
        assert report.max_residual == 0.0

    def test_exact_mode_limits(self, max_model):
        with pytest.raises(DomainError):
            verify_A3(*max_model, ONES, 7, exact=True)

    def test_a3_catches_biased_kernel(self, max_model):
        report = verify_A3(*max_model, ONES, 6, kernel=first_eligible_kernel)
        assert not report.passed
        assert report.max_residual > 1e-3

    def test_uv_independence(self, max_model):
        assert verify_uv_conditional_independence(*max_model, ONES, 6).passed

    def test_uv_catches_shifted_counter(self, max_model):
        report = verify_uv_conditional_independence(*max_model, ONES, 6, counter=shifted_counter)
        assert not report.passed

    def test_combined_equal_q(self):
        P = build_ind(0.7, 0.7)
        report = verify_combined_A3(P, stationary(P), TEN, ONE_ZERO, 6)
        assert report.passed
        assert report.checked > 0

    def test_combined_max_model(self, max_model):
        assert verify_combined_A3(*max_model, TEN, ONE_ZERO, 6).passed

    def test_combined_rejects_same_ends(self, max_model):
        with pytest.raises(DomainError):
            verify_combined_A3(*max_model, ONES, TripletPattern.parse("1,1;1,1;0,0"), 6)

    def test_expected_gain(self, max_model):
        report = verify_expected_gain(*max_model, ONES, 6, ScoringScheme.lcs(2))
        assert report.passed
        assert report.checked > 0

    def test_kernel_preserves_mass(self, max_model):
        space = build_space(*max_model, 6)
        us, vs = count_uv(space.seqs, ONES, 2)
        weights = np.where((us == 0) & (vs == 2), space.probs, 0.0)
        pushed = uniform_kernel(space, weights, ONES)
        assert pushed.sum() == pytest.approx(weights.sum())
        assert total_variation(pushed, pushed) == 0.0

    def test_kernel_matches_row_by_row_push(self, max_model):
        space = build_space(*max_model, 6)
        us, vs = count_uv(space.seqs, ONES, 2)
        weights = np.where((us == 1) & (vs == 2), space.probs, 0.0)
        eligible = _eligible(space.seqs, ONES, 2)
        d = ONES.D.flat(2)
        parts = {}
        for i in np.nonzero(weights)[0].tolist():
            slots = np.nonzero(eligible[i])[0].tolist()
            for t in slots:
                pos = 3 * t + 1
                target = i + (d - int(space.seqs[i, pos])) * space.place(pos)
                parts.setdefault(target, []).append(weights[i] / len(slots))
        expected = np.zeros(space.size)
        for target, values in parts.items():
            expected[target] = math.fsum(values)
        pushed = uniform_kernel(space, weights, ONES)
        assert np.allclose(pushed, expected, rtol=1e-15, atol=0.0)

    def test_parallel_check_matches_serial(self, max_model):
        serial = verify_A3(*max_model, ONES, 6)
        parallel = verify_A3(*max_model, ONES, 6, workers=2)
        assert parallel.details == serial.details

    @pytest.mark.slow
    @pytest.mark.parametrize("name", ["ind", "max", "min"])
    def test_combined_n9(self, name):
        P = shipped_models()[name]
        report = verify_combined_A3(P, stationary(P), TEN, ONE_ZERO, 9)
        assert report.passed
        assert report.checked > 0
        assert report.max_residual <= 1e-10


class TestPropositions:
    """Tests for the Bernoulli and binomial identities."""

    @pytest.mark.parametrize("m,p", [(1, 0.3), (5, 0.5), (8, 0.7)])
    def test_bernoulli(self, m, p):
        report = verify_bernoulli_proposition(m, p)
        assert report.passed
        assert report.checked == m

    def test_bernoulli_domain(self):
        with pytest.raises(DomainError):
            verify_bernoulli_proposition(0, 0.5)

    @pytest.mark.parametrize("v1,v2,q", [(3, 2, 0.5), (5, 4, 0.2), (0, 6, 0.8), (7, 0, 0.3)])
    def test_binomial_identity_exact(self, v1, v2, q):
        report = verify_binomial_identity(v1, v2, q)
        assert report.passed
        assert report.max_residual == 0.0

    def test_binomial_identity_limit(self):
        with pytest.raises(DomainError):
            verify_binomial_identity(30, 11, 0.5)

    def test_clt_sweep_symmetric(self):
        report = clt_sweep(qs=(0.5,), m_max=300)
        assert report.passed
        assert report.details[0]["m_o"] <= 100


class TestVerificationSuite:
    """Tests for VerificationSuite."""

    def test_progress_and_summary(self):
        messages = []
        suite = VerificationSuite(ns=(6,), progress_callback=messages.append)
        suite.run_propositions(ps=(0.5,), qs=(0.5,), m_max=3, v_total=3)
        summary = suite.summary()
        assert suite.passed
        assert summary["failed"] == []
        assert summary["checks"] == len(messages)
        assert all(message.startswith("PASS") for message in messages)

    def test_a3_small(self):
        suite = VerificationSuite(ns=(6,))
        suite.run_a3()
        suite.run_uv()
        assert suite.passed
        assert len(suite.reports) == 6

    def test_combined_skips_unequal_q(self):
        rng = np.random.default_rng(12)
        P = TransitionMatrix(rng.dirichlet(np.ones(4), size=4), 2, "random")
        messages = []
        suite = VerificationSuite(ns=(6,), models={"random": P}, progress_callback=messages.append)
        suite.run_combined()
        assert suite.reports == []
        assert messages and messages[0].startswith("Skipping random")
