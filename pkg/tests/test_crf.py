"""CRF inference against brute-force enumeration oracles.

The oracle enumerates all K^T tag sequences and scores each one with its
own left-to-right accumulation, independently of the dynamic programs
under test.
"""

import itertools
import math

import numpy as np
import pytest

from ctikit.annotate import LabelSchema, validate_bio
from ctikit.errors import LengthMismatch
from ctikit.model.crf import (
    NEG_INF,
    apply_structural_mask,
    bio_transition_mask,
    forward_backward,
    log_partition,
    make_transitions,
    nll,
    nll_gradients,
    sequence_score,
    viterbi,
)

SCHEMA = LabelSchema()


def brute_force_scores(em: np.ndarray, trans: np.ndarray) -> dict[tuple, float]:
    """Score of every possible tag sequence, by direct re-summation."""
    big_t, k = em.shape
    start, stop = k, k + 1
    scores = {}
    for seq in itertools.product(range(k), repeat=big_t):
        s = trans[start, seq[0]] + em[0, seq[0]]
        for t in range(1, big_t):
            s = s + trans[seq[t - 1], seq[t]] + em[t, seq[t]]
        s = s + trans[seq[-1], stop]
        scores[seq] = float(s)
    return scores


def brute_force_log_partition(em: np.ndarray, trans: np.ndarray) -> float:
    values = list(brute_force_scores(em, trans).values())
    m = max(values)
    return m + math.log(math.fsum(math.exp(v - m) for v in values))


def random_instance(rng: np.random.Generator, big_t: int, k: int):
    em = rng.uniform(-2.0, 2.0, size=(big_t, k))
    trans = rng.uniform(-1.0, 1.0, size=(k + 2, k + 2))
    apply_structural_mask(trans)
    return em, trans


class TestSequenceScore:
    def test_t1_zero_transitions(self):
        em = np.array([[1.5, -0.5]])
        trans = make_transitions(2)
        assert sequence_score(em, trans, [0]) == pytest.approx(1.5)

    def test_all_zero(self):
        em = np.zeros((3, 2))
        trans = make_transitions(2)
        assert sequence_score(em, trans, [0, 1, 0]) == 0.0

    def test_random_instance_term_sum(self):
        rng = np.random.default_rng(42)
        em, trans = random_instance(rng, 4, 3)
        tags = [2, 0, 1, 1]
        expected = (
            trans[3, 2] + em[0, 2]
            + trans[2, 0] + em[1, 0]
            + trans[0, 1] + em[2, 1]
            + trans[1, 1] + em[3, 1]
            + trans[1, 4]
        )
        assert sequence_score(em, trans, tags) == pytest.approx(expected, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            sequence_score(np.zeros((2, 2)), make_transitions(2), [0])


class TestLogPartition:
    def test_t1_is_logsumexp_of_emissions(self):
        em = np.array([[0.3, -1.2, 2.0]])
        trans = make_transitions(3)
        expected = math.log(math.fsum(math.exp(v) for v in em[0]))
        assert log_partition(em, trans) == pytest.approx(expected, abs=1e-12)

    def test_all_zero_is_t_log_k(self):
        for big_t, k in [(1, 2), (3, 4), (5, 3)]:
            em = np.zeros((big_t, k))
            trans = make_transitions(k)
            assert log_partition(em, trans) == pytest.approx(big_t * math.log(k), abs=1e-10)

    def test_matches_brute_force_randomized(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            big_t = int(rng.integers(1, 6))
            k = int(rng.integers(2, 5))
            em, trans = random_instance(rng, big_t, k)
            assert log_partition(em, trans) == pytest.approx(
                brute_force_log_partition(em, trans), abs=1e-8
            )

    def test_normalization_sums_to_one(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            em, trans = random_instance(rng, 4, 3)
            log_z = log_partition(em, trans)
            total = math.fsum(
                math.exp(s - log_z) for s in brute_force_scores(em, trans).values()
            )
            assert total == pytest.approx(1.0, abs=1e-8)


class TestViterbi:
    def test_dominant_emissions(self):
        k = 3
        em = np.zeros((4, k))
        want = [2, 0, 1, 2]
        for t, label in enumerate(want):
            em[t, label] = 100.0
        tags, score = viterbi(em, make_transitions(k))
        assert tags == want
        assert score == pytest.approx(400.0)

    def test_matches_exhaustive_argmax(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            big_t = int(rng.integers(1, 6))
            k = int(rng.integers(2, 5))
            em, trans = random_instance(rng, big_t, k)
            tags, score = viterbi(em, trans)
            oracle = brute_force_scores(em, trans)
            best = max(oracle.values())
            assert score == best  # exact: same addition order along the path
            winners = [seq for seq, s in oracle.items() if s == best]
            if len(winners) == 1:
                assert tuple(tags) == winners[0]

    def test_tie_breaks_to_smaller_label_id(self):
        em = np.zeros((2, 3))
        trans = make_transitions(3)
        tags, score = viterbi(em, trans)
        assert tags == [0, 0]
        assert score == 0.0

    def test_constrained_decode_is_always_bio_valid(self):
        k = SCHEMA.num_labels
        rng = np.random.default_rng(17)
        for _ in range(100):
            big_t = int(rng.integers(1, 8))
            em = rng.uniform(-5.0, 5.0, size=(big_t, k))
            trans = rng.uniform(-1.0, 1.0, size=(k + 2, k + 2))
            apply_structural_mask(trans)
            tags, _ = viterbi(em, trans, label_vocab=SCHEMA.label_vocab, hard_constraints=True)
            assert validate_bio(tags, SCHEMA) == []

    def test_unconstrained_can_violate(self):
        # An emission landscape that pushes a bare I- label wins without masking.
        k = SCHEMA.num_labels
        em = np.full((1, k), -10.0)
        i_ip = SCHEMA.label_id("I-IP")
        em[0, i_ip] = 10.0
        trans = make_transitions(k)
        tags, _ = viterbi(em, trans)
        assert validate_bio(tags, SCHEMA) == [0]
        tags, _ = viterbi(em, trans, label_vocab=SCHEMA.label_vocab, hard_constraints=True)
        assert validate_bio(tags, SCHEMA) == []


class TestBioMask:
    def test_masks_exactly_invalid_cells(self):
        vocab = ("O", "B-X", "I-X", "B-Y", "I-Y")
        mask = bio_transition_mask(vocab)
        i_x, i_y, start = 2, 4, 5
        assert mask[0, i_x]           # O -> I-X
        assert not mask[1, i_x]       # B-X -> I-X
        assert not mask[i_x, i_x]     # I-X -> I-X
        assert mask[3, i_x]           # B-Y -> I-X
        assert mask[start, i_x] and mask[start, i_y]
        assert not mask[0, 1]         # O -> B-X stays legal
        assert not mask[start, 0]


class TestNll:
    def test_single_label_vocabulary_is_exactly_zero(self):
        em = np.array([[0.7], [1.3], [-0.2]])
        trans = make_transitions(1)
        assert nll(em, trans, [0, 0, 0]) == 0.0

    def test_saturated_margins_near_zero(self):
        k = 4
        gold = [1, 3, 0, 2]
        em = np.zeros((4, k))
        for t, label in enumerate(gold):
            em[t, label] = 100.0
        trans = make_transitions(k)
        value = nll(em, trans, gold)
        assert 0.0 <= value < 1e-3

    def test_nll_is_logz_minus_score(self):
        rng = np.random.default_rng(3)
        em, trans = random_instance(rng, 5, 4)
        tags = [int(i) for i in rng.integers(0, 4, size=5)]
        expected = brute_force_log_partition(em, trans) - sequence_score(em, trans, tags)
        assert nll(em, trans, tags) == pytest.approx(expected, abs=1e-8)

    def test_non_negativity_randomized(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            big_t = int(rng.integers(1, 6))
            k = int(rng.integers(2, 5))
            em, trans = random_instance(rng, big_t, k)
            tags = [int(i) for i in rng.integers(0, k, size=big_t)]
            assert nll(em, trans, tags) >= -1e-9


class TestShiftInvariance:
    def test_constant_emission_shift(self):
        rng = np.random.default_rng(23)
        em, trans = random_instance(rng, 5, 4)
        tags = [int(i) for i in rng.integers(0, 4, size=5)]
        c = 3.7
        shifted = em + c

        base_tags, base_score = viterbi(em, trans)
        new_tags, new_score = viterbi(shifted, trans)
        assert new_tags == base_tags
        assert new_score == pytest.approx(base_score + 5 * c, abs=1e-9)

        assert log_partition(shifted, trans) == pytest.approx(
            log_partition(em, trans) + 5 * c, abs=1e-8
        )
        assert nll(shifted, trans, tags) == pytest.approx(
            nll(em, trans, tags), abs=1e-6
        )


class TestGradientIdentities:
    def test_emission_gradient_rows_sum_to_zero(self):
        rng = np.random.default_rng(29)
        em, trans = random_instance(rng, 5, 4)
        tags = [int(i) for i in rng.integers(0, 4, size=5)]
        _, d_em, _ = nll_gradients(em, trans, tags)
        np.testing.assert_allclose(d_em.sum(axis=1), 0.0, atol=1e-10)

    def test_single_label_zero_gradients(self):
        em = np.array([[0.7], [1.3]])
        trans = make_transitions(1)
        value, d_em, d_trans = nll_gradients(em, trans, [0, 0])
        assert value == 0.0
        np.testing.assert_allclose(d_em, 0.0, atol=1e-12)
        np.testing.assert_allclose(d_trans, 0.0, atol=1e-12)

    def test_masked_cells_get_zero_gradient(self):
        rng = np.random.default_rng(31)
        em, trans = random_instance(rng, 4, 3)
        tags = [0, 1, 2, 0]
        _, _, d_trans = nll_gradients(em, trans, tags)
        k = 3
        assert np.all(d_trans[:, k] == 0.0)      # into START
        assert np.all(d_trans[k + 1, :] == 0.0)  # out of STOP

    def test_forward_backward_consistent_with_log_partition(self):
        rng = np.random.default_rng(37)
        em, trans = random_instance(rng, 6, 4)
        alpha, beta, log_z = forward_backward(em, trans)
        assert log_z == pytest.approx(log_partition(em, trans), abs=1e-10)
        # alpha+beta renormalizes at every time step
        for t in range(em.shape[0]):
            from scipy.special import logsumexp

            assert logsumexp(alpha[t] + beta[t]) == pytest.approx(log_z, abs=1e-8)

    def test_pairwise_marginals_match_brute_force(self):
        rng = np.random.default_rng(41)
        em, trans = random_instance(rng, 4, 3)
        tags = [0, 0, 0, 0]
        _, d_em, _ = nll_gradients(em, trans, tags)
        scores = brute_force_scores(em, trans)
        log_z = brute_force_log_partition(em, trans)
        # unary marginal at (t=2, k=1) by enumeration
        p = math.fsum(
            math.exp(s - log_z) for seq, s in scores.items() if seq[2] == 1
        )
        assert d_em[2, 1] == pytest.approx(p, abs=1e-8)


def test_neg_inf_truly_dominates():
    # masked transitions keep arithmetic total but can never win
    em = np.zeros((2, 2))
    trans = make_transitions(2)
    tags, score = viterbi(em, trans)
    assert score > NEG_INF / 2
