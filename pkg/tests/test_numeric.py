"""Elementwise activation, softmax, and affine helper checks."""
import math

import numpy as np
import pytest

from drnn import affine, init_matrix, sigmoid, softmax, tanh_act

from .oracles import scalar_matvec, scalar_sigmoid


class TestSigmoid:
    def test_spot_values(self):
        assert sigmoid(np.array([0.0]))[0] == 0.5
        np.testing.assert_allclose(sigmoid(np.array([3.0]))[0],
                                   0.9525741268224334, rtol=0, atol=1e-16)
        np.testing.assert_allclose(sigmoid(np.array([-3.0]))[0],
                                   0.04742587317756678, rtol=0, atol=1e-16)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            x = rng.uniform(-30, 30, size=7)
            expected = [scalar_sigmoid(v) for v in x]
            np.testing.assert_allclose(sigmoid(x), expected, rtol=1e-15)

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(1000) * 5
        np.testing.assert_allclose(sigmoid(-x), 1.0 - sigmoid(x), atol=1e-15)

    def test_extreme_arguments_saturate_without_overflow(self):
        out = sigmoid(np.array([-1000.0, 1000.0]))
        assert np.all(np.isfinite(out))
        assert out[0] == 0.0 and out[1] == 1.0

    def test_range_and_monotonicity(self):
        x = np.linspace(-20, 20, 4001)
        y = sigmoid(x)
        assert np.all(y > 0) and np.all(y < 1)
        assert np.all(np.diff(y) >= 0)


class TestTanh:
    def test_spot_value(self):
        np.testing.assert_allclose(tanh_act(np.array([1.0]))[0],
                                   0.7615941559557649, rtol=0, atol=1e-16)

    def test_odd_and_bounded(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal(500) * 4
        np.testing.assert_allclose(tanh_act(-x), -tanh_act(x), atol=1e-15)
        assert np.all(np.abs(tanh_act(x)) < 1)


class TestSoftmax:
    def test_normalizes(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            z = rng.standard_normal(rng.integers(1, 9)) * 10
            y = softmax(z)
            assert abs(float(y.sum()) - 1.0) < 1e-12
            assert np.all(y > 0)

    def test_shift_invariance(self):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            z = rng.standard_normal(6) * 10
            c = rng.uniform(-100, 100)
            np.testing.assert_allclose(softmax(z + c), softmax(z), atol=1e-12)

    def test_known_two_class_value(self):
        y = softmax(np.array([0.0, math.log(2.0)]))
        np.testing.assert_allclose(y, [1.0 / 3.0, 2.0 / 3.0], rtol=1e-15)

    def test_extreme_logits_stay_finite(self):
        y = softmax(np.array([1000.0, -1000.0, 0.0]))
        assert np.all(np.isfinite(y))
        assert abs(float(y.sum()) - 1.0) < 1e-12
        assert y[0] > 0.999

    def test_single_logit(self):
        np.testing.assert_array_equal(softmax(np.array([4.2])), [1.0])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            softmax(np.array([]))


class TestAffine:
    def test_known_value(self):
        W = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = affine(W, np.array([1.0, 1.0]), np.array([0.0, 0.0]))
        np.testing.assert_array_equal(out, [3.0, 7.0])

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            rows, cols = rng.integers(1, 7, size=2)
            W = rng.standard_normal((rows, cols))
            x = rng.standard_normal(cols)
            b = rng.standard_normal(rows)
            expected = [m + bv for m, bv in zip(scalar_matvec(W.tolist(), x.tolist()),
                                                b.tolist())]
            np.testing.assert_allclose(affine(W, x, b), expected, rtol=1e-13,
                                       atol=1e-14)

    def test_shape_mismatch_named(self):
        W = np.zeros((2, 3))
        with pytest.raises(ValueError):
            affine(W, np.zeros(4), np.zeros(2))
        with pytest.raises(ValueError):
            affine(W, np.zeros(3), np.zeros(5))


class TestInitMatrix:
    def test_bounds_and_shape(self):
        rng = np.random.default_rng(6)
        M = init_matrix(40, 30, 0.25, rng)
        assert M.shape == (40, 30)
        assert np.all(np.abs(M) <= 0.25)

    def test_deterministic_per_generator_state(self):
        a = init_matrix(5, 5, 0.1, np.random.default_rng(7))
        b = init_matrix(5, 5, 0.1, np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)
