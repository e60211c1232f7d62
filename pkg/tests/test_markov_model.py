"""Tests for src/markov_model.py"""

import logging
import math

import numpy as np
import pytest

from src.errors import ConstraintViolation, DomainError, NotIrreducible, NotPrimitive, Unsupported
from src.markov_model import (
    Alphabet,
    MarginalParams,
    PairState,
    TransitionMatrix,
    build_general,
    build_ind,
    build_max,
    build_min,
    check_lumpable,
    coordinate_partition,
    display_order,
    equal_q_conditions,
    is_irreducible,
    mixing_time_bound,
    primitivity_index,
    sample_chain,
    shipped_models,
    stationary,
)


class TestPairState:
    """Tests for PairState and the display order."""

    def test_flat_round_trip(self):
        for index in range(9):
            assert PairState.from_flat(index, 3).flat(3) == index

    def test_flat_outside_alphabet(self):
        with pytest.raises(DomainError):
            PairState(2, 0).flat(2)

    def test_display_order_k2(self):
        assert [PairState.from_flat(i, 2) for i in display_order(2)] == [
            PairState(1, 1), PairState(1, 0), PairState(0, 1), PairState(0, 0)
        ]

    def test_alphabet_too_small(self):
        with pytest.raises(DomainError):
            Alphabet(1)


class TestTransitionMatrix:
    """Tests for TransitionMatrix validation and I/O."""

    def test_alphabet_of_matrix(self):
        P = build_ind(0.7, 0.7)
        assert P.alphabet == Alphabet(2)
        assert P.dim == 4

    def test_single_letter_alphabet_rejected(self):
        with pytest.raises(DomainError):
            TransitionMatrix(np.ones((1, 1)), 1)

    def test_rejects_bad_row_sum(self):
        with pytest.raises(DomainError, match="Row 0"):
            TransitionMatrix(np.full((4, 4), 0.3), 2)

    def test_rejects_negative(self):
        entries = np.full((4, 4), 0.25)
        entries[1, 0], entries[1, 1] = -0.1, 0.6
        with pytest.raises(DomainError, match="Negative"):
            TransitionMatrix(entries, 2)

    def test_rejects_wrong_shape(self):
        with pytest.raises(DomainError):
            TransitionMatrix(np.eye(3), 2)

    def test_display_round_trip(self):
        P = build_max(0.9, 0.7, 0.05)
        again = TransitionMatrix.from_display(P.display(), 2)
        assert np.array_equal(again.entries, P.entries)

    def test_json_round_trip(self, tmp_path):
        import json
        P = build_min(0.7, 0.7, 0.05)
        path = tmp_path / "min.json"
        path.write_text(json.dumps(P.to_json()))
        loaded = TransitionMatrix.from_json(str(path))
        assert loaded.label == P.label
        assert np.array_equal(loaded.entries, P.entries)

    def test_p_accessor(self):
        P = build_max(0.9, 0.7, 0.05)
        assert P.p(PairState(1, 1), PairState(1, 1)) == pytest.approx(0.85)
        assert P.p(PairState(1, 0), PairState(0, 1)) == 0.0


class TestBuilders:
    """Tests for the model constructors."""

    def test_ind_is_product(self):
        P = build_ind(0.7, 0.4)
        d = P.display()
        assert d[0, 0] == pytest.approx(0.49)
        assert d[3, 3] == pytest.approx(0.36)

    def test_ind_rejects_boundary(self):
        with pytest.raises(DomainError):
            build_ind(1.0, 0.5)

    def test_max_first_row(self):
        d = build_max(0.9, 0.7, 0.05).display()
        assert d[0].tolist() == pytest.approx([0.85, 0.05, 0.05, 0.05])

    def test_max_needs_p_at_least_q(self):
        with pytest.raises(DomainError):
            build_max(0.6, 0.7)

    def test_min_unsupported_region(self):
        with pytest.raises(Unsupported):
            build_min(0.3, 0.4)

    def test_min_branches_on_q(self):
        high = build_min(0.9, 0.6, 0.05).display()[3]
        low = build_min(0.9, 0.4, 0.05).display()[3]
        assert high.tolist() == pytest.approx([0.25, 0.35, 0.35, 0.05])
        assert low.tolist() == pytest.approx([0.05, 0.35, 0.35, 0.25])

    def test_general_reports_parameter(self):
        params = MarginalParams.symmetric(0.7, 0.7, 0.3, 0.7, 0.7, 0.7)
        with pytest.raises(ConstraintViolation) as exc:
            build_general(params)
        assert exc.value.parameter == "lambda1"

    def test_general_rows_stochastic(self):
        P = build_general(MarginalParams(0.8, 0.4, 0.6, 0.5, 0.7, 0.6, 0.7, 0.6))
        assert np.allclose(P.entries.sum(axis=1), 1.0)

    def test_general_at_maximal_point(self):
        P = build_general(MarginalParams.symmetric(0.9, 0.7, 1.0, 0.7 / 0.9, 1.0, 1.0))
        assert np.allclose(P.entries, build_max(0.9, 0.7, 0.0).entries, atol=1e-12)
        assert P.display()[3].tolist() == pytest.approx([0.7, 0.0, 0.0, 0.3])

    def test_general_at_uniform_point(self):
        P = build_general(MarginalParams(0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5))
        assert np.allclose(P.entries, 0.25)

    def test_marginal_outside_unit_interval(self):
        with pytest.raises(ConstraintViolation) as exc:
            build_general(MarginalParams(0.7, 0.7, 1.2, 0.7, 0.7, 0.7, 0.7, 0.7))
        assert exc.value.parameter == "p_prime"

    def test_shipped_models(self):
        models = shipped_models()
        assert set(models) == {"ind", "max", "min"}


class TestStationary:
    """Tests for stationary and irreducibility."""

    def test_max_mass_on_11(self):
        pi = stationary(build_max(0.9, 0.7, 0.05))
        assert pi[PairState(1, 1)] == pytest.approx(0.819, abs=1e-3)

    def test_min_mass_on_01(self):
        pi = stationary(build_min(0.7, 0.7, 0.05))
        assert pi[PairState(0, 1)] == pytest.approx(0.28, abs=5e-3)

    def test_ind_is_product_of_marginals(self):
        pi = stationary(build_ind(0.7, 0.7))
        assert pi[PairState(1, 1)] == pytest.approx(0.49)
        assert pi.probs.sum() == pytest.approx(1.0)

    @pytest.mark.parametrize("name", ["ind", "max", "min"])
    def test_balance(self, name):
        P = shipped_models()[name]
        pi = stationary(P)
        assert np.max(np.abs(pi.probs @ P.entries - pi.probs)) < 1e-12
        assert pi.residual < 1e-10

    def test_not_irreducible(self):
        P = TransitionMatrix(np.eye(4), 2)
        assert not is_irreducible(P)
        with pytest.raises(NotIrreducible):
            stationary(P)


class TestLumpability:
    """Tests for coordinate_partition and check_lumpable."""

    def test_partition_blocks(self):
        assert coordinate_partition(2, 0) == [[2, 3], [0, 1]]
        assert coordinate_partition(2, 1) == [[1, 3], [0, 2]]

    @pytest.mark.parametrize("axis", [0, 1])
    def test_ind_lumps_to_marginal(self, axis):
        result = check_lumpable(build_ind(0.7, 0.4), coordinate_partition(2, axis))
        assert result.lumpable
        assert result.matrix.tolist() == pytest.approx([[0.7, 0.3], [0.4, 0.6]])

    def test_max_lumps_on_x(self):
        result = check_lumpable(build_max(0.9, 0.7, 0.05), coordinate_partition(2, 0))
        assert result.lumpable
        assert result.matrix.tolist() == pytest.approx([[0.9, 0.1], [0.7, 0.3]])

    def test_violation_reported(self):
        rng = np.random.default_rng(0)
        rows = rng.dirichlet(np.ones(4), size=4)
        result = check_lumpable(TransitionMatrix(rows, 2), coordinate_partition(2, 0))
        assert not result.lumpable
        assert result.violation is not None
        assert "block" in result.detail

    def test_partition_must_cover(self):
        with pytest.raises(DomainError):
            check_lumpable(build_ind(0.7, 0.7), [[0, 1], [2]])

    def test_small_perturbation_breaks_lumpability(self):
        entries = build_ind(0.7, 0.7).entries.copy()
        # state (1,1) moves mass from (0,0) into its own X-block
        entries[3, 0] -= 1e-3
        entries[3, 3] += 1e-3
        result = check_lumpable(TransitionMatrix(entries, 2), coordinate_partition(2, 0))
        assert not result.lumpable
        assert result.violation == (3, 0)
        assert result.matrix is None


class TestMixing:
    """Tests for primitivity_index and mixing_time_bound."""

    def test_positive_matrix_lag_one(self):
        m, p_o = primitivity_index(build_ind(0.7, 0.7))
        assert m == 1
        assert p_o == pytest.approx(0.09)

    def test_max_needs_two_steps(self):
        m, p_o = primitivity_index(build_max(0.9, 0.7, 0.05))
        assert m == 2
        assert p_o > 0

    def test_periodic_not_primitive(self):
        swap = np.zeros((4, 4))
        swap[0, 3] = swap[3, 0] = swap[1, 2] = swap[2, 1] = 1.0
        with pytest.raises(NotPrimitive):
            primitivity_index(TransitionMatrix(swap, 2))

    def test_ind_mixing_bound(self):
        bound = mixing_time_bound(build_ind(0.7, 0.7))
        assert bound.C == 1.0
        assert bound.rho == pytest.approx(0.64)
        assert bound.t_mix == pytest.approx(math.log(0.25) / math.log(0.64))

    def test_exact_mixing_is_domain_error(self):
        rows = np.tile([0.25, 0.25, 0.25, 0.25], (4, 1))
        with pytest.raises(DomainError):
            mixing_time_bound(TransitionMatrix(rows, 2))

    def test_eps_outside_range(self):
        with pytest.raises(DomainError):
            mixing_time_bound(build_ind(0.7, 0.7), eps=0.0)

    def test_eps_one_is_clamped(self, caplog):
        with caplog.at_level(logging.WARNING, logger="PMC-variance"):
            bound = mixing_time_bound(build_ind(0.7, 0.7), eps=1.0)
        assert bound.t_eps == 1.0
        assert bound.clamped
        assert "t_eps clamped to 1" in bound.notes
        assert "clamped" in caplog.text


class TestEqualQConditions:
    """Tests for equal_q_conditions."""

    @pytest.mark.parametrize("name", ["ind", "max", "min"])
    def test_shipped_models_satisfy(self, name):
        assert equal_q_conditions(shipped_models()[name])

    def test_asymmetric_fails(self):
        rng = np.random.default_rng(1)
        assert not equal_q_conditions(TransitionMatrix(rng.dirichlet(np.ones(4), size=4), 2))


class TestSampleChain:
    """Tests for sample_chain."""

    def test_deterministic(self):
        P = build_max(0.9, 0.7, 0.05)
        pi = stationary(P)
        a = sample_chain(P, pi, 200, 123)
        b = sample_chain(P, pi, 200, 123)
        assert np.array_equal(a.states, b.states)
        assert a.seed == 123

    def test_respects_zero_transitions(self):
        P = build_max(0.9, 0.7, 0.05)
        z = sample_chain(P, stationary(P), 5000, 9)
        s = z.states
        forbidden = (s[:-1] == PairState(1, 0).flat(2)) & (s[1:] == PairState(0, 1).flat(2))
        assert not forbidden.any()

    def test_empirical_frequency(self):
        P = build_max(0.9, 0.7, 0.05)
        z = sample_chain(P, stationary(P), 20000, 5)
        assert np.mean(z.states == 3) == pytest.approx(0.819, abs=0.03)

    def test_coordinates(self):
        P = build_ind(0.7, 0.7)
        z = sample_chain(P, stationary(P), 10, 1)
        assert np.array_equal(z.xs * 2 + z.ys, z.states)

    def test_with_state_copies(self):
        P = build_ind(0.7, 0.7)
        z = sample_chain(P, stationary(P), 10, 1)
        changed = z.with_state(4, 0)
        assert changed.states[4] == 0
        assert (np.delete(changed.states, 4) == np.delete(z.states, 4)).all()

    def test_length_must_be_positive(self):
        P = build_ind(0.7, 0.7)
        with pytest.raises(DomainError):
            sample_chain(P, stationary(P), 0, 1)
