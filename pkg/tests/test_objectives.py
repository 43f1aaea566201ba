import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import finite_diff, max_rel_err
from datforge.errors import ConfigError, DimensionError
from datforge.gradcore import Parameter, Tape
from datforge.objectives import (
    bce_domain_loss,
    ce_domain_loss,
    entropy_domain_loss,
    task_loss,
)


def one_hot(labels, k):
    eye = np.eye(k)
    return eye[np.asarray(labels)]


class TestBce:
    def test_half_probabilities_give_log2(self):
        tape = Tape()
        p = tape.const(np.full(4, 0.5))
        loss = bce_domain_loss(tape, p, np.array([0, 1, 0, 1]))
        assert np.isclose(loss.value, np.log(2.0), atol=1e-12)

    def test_confident_correct_is_near_zero(self):
        tape = Tape()
        p = tape.const(np.array([1.0, 0.0]))
        loss = bce_domain_loss(tape, p, np.array([1, 0]))
        assert abs(float(loss.value)) < 1e-6

    def test_hand_computed_value(self):
        p = np.array([0.9, 0.2])
        d = np.array([1, 0])
        expected = -(np.log(0.9) + np.log(0.8)) / 2
        tape = Tape()
        loss = bce_domain_loss(tape, tape.const(p), d)
        assert np.isclose(loss.value, expected, atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        p0 = np.array([0.3, 0.7, 0.55])
        d = np.array([0, 1, 1])

        def loss_of(pv):
            tape = Tape()
            return float(bce_domain_loss(tape, tape.const(pv), d).value)

        pp = Parameter(p0.copy(), "aux", "p")
        tape = Tape()
        tape.backward(bce_domain_loss(tape, tape.param(pp), d))
        assert max_rel_err(pp.grad, finite_diff(loss_of, p0)) < 1e-4

    def test_rejects_non_binary_labels(self):
        tape = Tape()
        with pytest.raises(ConfigError):
            bce_domain_loss(tape, tape.const(np.array([0.5])), np.array([2]))

    def test_rejects_empty_batch(self):
        tape = Tape()
        with pytest.raises(DimensionError):
            bce_domain_loss(tape, tape.const(np.zeros(0)), np.zeros(0, dtype=int))


class TestCe:
    def test_perfect_prediction_is_zero_within_tolerance(self):
        tape = Tape()
        probs = tape.const(one_hot([0, 2, 1], 3))
        loss = ce_domain_loss(tape, probs, one_hot([0, 2, 1], 3))
        assert abs(float(loss.value)) < 1e-9

    def test_uniform_prediction_is_log_k(self):
        k = 4
        tape = Tape()
        probs = tape.const(np.full((5, k), 1.0 / k))
        loss = ce_domain_loss(tape, probs, one_hot([0, 1, 2, 3, 0], k))
        assert np.isclose(loss.value, np.log(k), atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        raw = rng.uniform(0.1, 1.0, size=(3, 4))
        p0 = raw / raw.sum(axis=1, keepdims=True)
        targets = one_hot([1, 3, 0], 4)

        def loss_of(pv):
            tape = Tape()
            return float(ce_domain_loss(tape, tape.const(pv), targets).value)

        pp = Parameter(p0.copy(), "aux", "p")
        tape = Tape()
        tape.backward(ce_domain_loss(tape, tape.param(pp), targets))
        assert max_rel_err(pp.grad, finite_diff(loss_of, p0)) < 1e-4

    def test_rejects_non_one_hot_targets(self):
        tape = Tape()
        probs = tape.const(np.full((1, 3), 1 / 3))
        with pytest.raises(ConfigError):
            ce_domain_loss(tape, probs, np.array([[0.5, 0.5, 0.0]]))


class TestEntropy:
    def test_one_hot_entropy_is_zero_within_tolerance(self):
        tape = Tape()
        loss = entropy_domain_loss(tape, tape.const(one_hot([0, 1, 2], 3)))
        assert abs(float(loss.value)) < 1e-9

    def test_uniform_entropy_is_log_k(self):
        for k in (2, 3, 5):
            tape = Tape()
            loss = entropy_domain_loss(tape, tape.const(np.full((4, k), 1.0 / k)))
            assert np.isclose(loss.value, np.log(k), atol=1e-9), k

    def test_entropy_between_zero_and_log_k(self):
        rng = np.random.default_rng(2)
        raw = rng.uniform(0.01, 1.0, size=(6, 4))
        probs = raw / raw.sum(axis=1, keepdims=True)
        tape = Tape()
        loss = float(entropy_domain_loss(tape, tape.const(probs)).value)
        assert 0.0 <= loss <= np.log(4) + 1e-12

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        raw = rng.uniform(0.1, 1.0, size=(3, 3))
        p0 = raw / raw.sum(axis=1, keepdims=True)

        def loss_of(pv):
            tape = Tape()
            return float(entropy_domain_loss(tape, tape.const(pv)).value)

        pp = Parameter(p0.copy(), "aux", "p")
        tape = Tape()
        tape.backward(entropy_domain_loss(tape, tape.param(pp)))
        assert max_rel_err(pp.grad, finite_diff(loss_of, p0)) < 1e-4


class TestTaskLoss:
    def test_matches_manual_log_softmax(self):
        logits = np.array([[2.0, 1.0, 0.5, -1.0], [0.0, 0.0, 0.0, 0.0]])
        labels = np.array([0, 3])
        shifted = logits - logits.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        expected = -(logp[0, 0] + logp[1, 3]) / 2
        tape = Tape()
        loss = task_loss(tape, tape.const(logits), labels)
        assert np.isclose(loss.value, expected, atol=1e-12)

    def test_confident_correct_logits_give_small_loss(self):
        logits = np.array([[20.0, 0.0], [0.0, 20.0]])
        tape = Tape()
        loss = task_loss(tape, tape.const(logits), np.array([0, 1]))
        assert float(loss.value) < 1e-8

    def test_gradient_is_softmax_minus_onehot(self):
        rng = np.random.default_rng(8)
        logits0 = rng.normal(size=(4, 3))
        labels = np.array([2, 0, 1, 1])

        pp = Parameter(logits0.copy(), "aux", "z")
        tape = Tape()
        tape.backward(task_loss(tape, tape.param(pp), labels))
        shifted = logits0 - logits0.max(axis=1, keepdims=True)
        soft = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
        expected = (soft - one_hot(labels, 3)) / len(labels)
        assert np.allclose(pp.grad, expected, atol=1e-10)

    def test_rejects_out_of_range_labels(self):
        tape = Tape()
        with pytest.raises(ConfigError):
            task_loss(tape, tape.const(np.zeros((1, 3))), np.array([3]))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_entropy_maximized_by_uniform(k, batch, seed):
    rng = np.random.default_rng(seed)
    raw = rng.uniform(0.05, 1.0, size=(batch, k))
    probs = raw / raw.sum(axis=1, keepdims=True)
    tape = Tape()
    h = float(entropy_domain_loss(tape, tape.const(probs)).value)
    tape2 = Tape()
    h_uniform = float(entropy_domain_loss(tape2, tape2.const(np.full((batch, k), 1.0 / k))).value)
    assert h <= h_uniform + 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_ce_lower_bounded_by_entropy_of_target_match(k, batch, seed):
    rng = np.random.default_rng(seed)
    raw = rng.uniform(0.05, 1.0, size=(batch, k))
    probs = raw / raw.sum(axis=1, keepdims=True)
    labels = rng.integers(0, k, size=batch)
    tape = Tape()
    ce = float(ce_domain_loss(tape, tape.const(probs), one_hot(labels, k)).value)
    assert ce >= 0.0
