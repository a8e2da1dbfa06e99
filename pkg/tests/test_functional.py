"""Activation and loss head tests against independent oracles.

Derived expectations come from extended-precision (longdouble) evaluation
or central finite differences; trivial ones are asserted directly.
"""

import numpy as np
import pytest

from infocam.nn.functional import (cross_entropy_loss, log_sum_exp,
                                   pc_cross_entropy_loss, pc_softmax,
                                   sigmoid_heads_loss, softmax)


def lse_longdouble(values):
    """Extended-precision reference for log-sum-exp."""
    v = np.asarray(values, dtype=np.longdouble)
    return float(np.log(np.sum(np.exp(v))))


class TestLogSumExp:
    def test_uniform_zeros(self):
        assert log_sum_exp(np.zeros(5)) == pytest.approx(np.log(5), abs=1e-12)

    def test_no_overflow(self):
        assert log_sum_exp(np.array([1000.0, 0.0])) == pytest.approx(
            1000.0, abs=1e-12)
        assert np.isfinite(log_sum_exp(np.array([1e300, -1e300])))

    def test_matches_extended_precision(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            v = rng.uniform(-30, 30, size=5)
            assert log_sum_exp(v) == pytest.approx(
                lse_longdouble(v), abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            log_sum_exp(np.array([]))

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            log_sum_exp(np.array([1.0, np.nan]))


class TestSoftmax:
    def test_two_zeros(self):
        np.testing.assert_allclose(softmax(np.zeros(2)), [0.5, 0.5],
                                   atol=1e-15)

    def test_log_ratio(self):
        np.testing.assert_allclose(
            softmax(np.log(np.array([1.0, 3.0]))), [0.25, 0.75], atol=1e-12)

    def test_sums_to_one_and_shift_invariant(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            l = rng.uniform(-50, 50, size=rng.integers(2, 12))
            s = softmax(l)
            assert abs(s.sum() - 1.0) < 1e-12
            np.testing.assert_allclose(s, softmax(l + 123.456), atol=1e-10)

    def test_argmax_preserved(self):
        rng = np.random.default_rng(13)
        for _ in range(1000):
            l = rng.normal(size=6)
            assert np.argmax(softmax(l)) == np.argmax(l)


class TestPcSoftmax:
    def test_uniform_prior_scales_softmax(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            m = int(rng.integers(2, 9))
            l = rng.normal(size=m)
            np.testing.assert_allclose(
                pc_softmax(l, np.full(m, 1.0 / m)), m * softmax(l),
                rtol=1e-12)
            np.testing.assert_allclose(
                np.log(pc_softmax(l, np.full(m, 1.0 / m))),
                np.log(softmax(l)) + np.log(m), atol=1e-12)

    def test_zero_logits_give_ones(self):
        prior = np.array([0.07, 0.13, 0.20, 0.27, 0.33])
        prior = prior / prior.sum()
        np.testing.assert_allclose(
            pc_softmax(np.zeros(5), prior), np.ones(5), atol=1e-12)

    def test_matches_naive_formula(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            m = int(rng.integers(2, 8))
            l = rng.uniform(-8, 8, size=m)
            p = rng.uniform(0.05, 1.0, size=m)
            p /= p.sum()
            naive = np.exp(l) / np.sum(p * np.exp(l))
            np.testing.assert_allclose(pc_softmax(l, p), naive, rtol=1e-12)

    def test_zero_prior_rejected(self):
        with pytest.raises(ValueError):
            pc_softmax(np.zeros(3), np.array([0.0, 0.5, 0.5]))

    def test_argmax_equals_logit_argmax(self):
        rng = np.random.default_rng(23)
        for _ in range(300):
            l = rng.normal(size=5) * 3
            p = rng.uniform(0.05, 1.0, size=5)
            p /= p.sum()
            assert np.argmax(pc_softmax(l, p)) == np.argmax(l)


def central_diff(fn, x, eps=1e-6):
    grad = np.zeros_like(x)
    for i in range(x.size):
        bump = np.zeros_like(x)
        bump.flat[i] = eps
        grad.flat[i] = (fn(x + bump) - fn(x - bump)) / (2 * eps)
    return grad


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss, _ = cross_entropy_loss(np.zeros(5), 2)
        assert loss == pytest.approx(np.log(5), abs=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            cross_entropy_loss(np.zeros(5), 5)
        with pytest.raises(ValueError):
            cross_entropy_loss(np.zeros(5), -1)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            l = rng.normal(size=6) * 2
            label = int(rng.integers(6))
            _, grad = cross_entropy_loss(l, label)
            numeric = central_diff(
                lambda v: cross_entropy_loss(v, label)[0], l)
            np.testing.assert_allclose(grad, numeric, rtol=1e-6, atol=1e-9)

    def test_gradient_is_softmax_minus_onehot(self):
        l = np.array([0.3, -1.2, 2.0])
        _, grad = cross_entropy_loss(l, 1)
        expected = softmax(l)
        expected[1] -= 1
        np.testing.assert_allclose(grad, expected, atol=1e-14)


class TestPcCrossEntropy:
    def test_uniform_prior_offset(self):
        rng = np.random.default_rng(29)
        for _ in range(100):
            m = int(rng.integers(2, 8))
            l = rng.normal(size=m)
            label = int(rng.integers(m))
            plain, _ = cross_entropy_loss(l, label)
            pc, _ = pc_cross_entropy_loss(l, label, np.full(m, 1.0 / m))
            assert pc == pytest.approx(plain - np.log(m), abs=1e-12)

    def test_zero_logits_zero_loss(self):
        p = np.array([0.1, 0.2, 0.3, 0.4])
        for label in range(4):
            loss, _ = pc_cross_entropy_loss(np.zeros(4), label, p)
            assert loss == pytest.approx(0.0, abs=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(31)
        for _ in range(50):
            m = int(rng.integers(2, 7))
            l = rng.normal(size=m) * 2
            p = rng.uniform(0.05, 1.0, size=m)
            p /= p.sum()
            label = int(rng.integers(m))
            _, grad = pc_cross_entropy_loss(l, label, p)
            numeric = central_diff(
                lambda v: pc_cross_entropy_loss(v, label, p)[0], l)
            np.testing.assert_allclose(grad, numeric, rtol=1e-6, atol=1e-9)


class TestSigmoidHeads:
    def test_zero_logit_present_label(self):
        loss, _ = sigmoid_heads_loss(np.zeros(1), np.ones(1))
        assert loss == pytest.approx(np.log(2), abs=1e-12)

    def test_half_prior_shifts_by_log2(self):
        rng = np.random.default_rng(37)
        for _ in range(50):
            l = rng.normal(size=4) * 3
            b = (rng.random(4) < 0.5).astype(float)
            plain, g_plain = sigmoid_heads_loss(l, b)
            corrected, g_corr = sigmoid_heads_loss(
                l, b, priors=np.full(4, 0.5), corrected=True)
            assert corrected == pytest.approx(plain - 4 * np.log(2),
                                              abs=1e-10)
            np.testing.assert_allclose(g_corr, g_plain, atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(41)
        for corrected in (False, True):
            for _ in range(30):
                l = rng.normal(size=5) * 2
                b = (rng.random(5) < 0.4).astype(float)
                p = rng.uniform(0.05, 0.95, size=5)
                _, grad = sigmoid_heads_loss(l, b, p, corrected=corrected)
                numeric = central_diff(
                    lambda v: sigmoid_heads_loss(v, b, p,
                                                 corrected=corrected)[0], l)
                np.testing.assert_allclose(grad, numeric, rtol=1e-6,
                                           atol=1e-9)

    def test_degenerate_prior_rejected(self):
        for bad in (0.0, 1.0):
            with pytest.raises(ValueError):
                sigmoid_heads_loss(np.zeros(2), np.ones(2),
                                   priors=np.array([bad, 0.5]),
                                   corrected=True)
