import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cvib.core import EPS, DomainError, bce, entropy, gaussian_kl, sigmoid, xent

# frozen from a 50-digit mpmath evaluation
XENT_09_01 = 2.0828626352604237
ENTROPY_075 = 0.56233514461880835
KL_SIGMA_2 = 0.65342640972002735

probs = st.floats(min_value=EPS, max_value=1 - EPS)


class TestSigmoid:
    def test_zero(self):
        assert sigmoid(0.0) == 0.5

    def test_saturates_at_clamp(self):
        assert sigmoid(1e9) == 1 - EPS
        assert sigmoid(-1e9) == EPS

    def test_log_three(self):
        assert sigmoid(math.log(3)) == pytest.approx(0.75, abs=1e-15)

    @pytest.mark.parametrize("bad", [float("nan"), float("inf"), -float("inf")])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(DomainError):
            sigmoid(bad)

    def test_vectorized(self):
        out = sigmoid(np.array([-2.0, 0.0, 2.0]))
        np.testing.assert_allclose(out[0] + out[2], 1.0, atol=1e-15)

    @given(st.floats(-50, 50), st.floats(-50, 50))
    def test_monotone(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert sigmoid(lo) <= sigmoid(hi)


class TestCrossEntropies:
    def test_bce_perfect(self):
        assert bce(1, 1 - EPS) == pytest.approx(0.0, abs=1e-6)

    def test_bce_uninformative(self):
        assert bce(0, 0.5) == pytest.approx(math.log(2), abs=1e-15)

    def test_bce_three_quarters(self):
        assert bce(1, 0.75) == pytest.approx(math.log(4 / 3), abs=1e-15)

    def test_xent_half(self):
        assert xent(0.5, 0.5) == pytest.approx(math.log(2), abs=1e-15)

    def test_xent_asymmetric(self):
        assert xent(0.9, 0.1) == pytest.approx(XENT_09_01, abs=1e-12)

    def test_entropy_values(self):
        assert entropy(0.5) == pytest.approx(math.log(2), abs=1e-15)
        assert entropy(1 - EPS) == pytest.approx(0.0, abs=1e-5)
        assert entropy(0.75) == pytest.approx(ENTROPY_075, abs=1e-12)

    @given(probs)
    def test_xent_self_is_entropy(self, q):
        assert abs(xent(q, q) - entropy(q)) <= 1e-12

    @given(probs)
    def test_entropy_range(self, q):
        assert -1e-15 <= entropy(q) <= math.log(2) + 1e-15

    @given(st.floats(0.01, 0.99))
    def test_xent_minimized_at_target(self, q_a):
        grid = np.linspace(0.001, 0.999, 999)
        values = xent(q_a, grid)
        assert abs(grid[np.argmin(values)] - q_a) <= 0.001

    @given(st.sampled_from([0, 1]), probs)
    def test_bce_matches_xent_with_clamped_label(self, y, q):
        label = min(max(float(y), EPS), 1 - EPS)
        # clamping the label moves the value by at most EPS * |log odds|
        assert abs(bce(y, q) - xent(label, q)) <= EPS * (abs(math.log(q)) + abs(math.log1p(-q))) + 1e-12


class TestGaussianKL:
    def test_zero_mean_unit_sigma(self):
        for dim in (1, 3, 8):
            assert gaussian_kl(np.zeros(dim), np.ones(dim)) == 0.0

    def test_l2_reduction(self):
        assert gaussian_kl(np.array([1.0, 1.0]), np.ones(2)) == 2.0

    def test_sigma_two(self):
        assert gaussian_kl(np.zeros(1), np.array([2.0])) == pytest.approx(KL_SIGMA_2, abs=1e-12)

    def test_rejects_non_positive_sigma(self):
        with pytest.raises(DomainError):
            gaussian_kl(np.zeros(2), np.array([1.0, 0.0]))

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=6))
    def test_unit_sigma_is_squared_norm(self, e):
        e = np.array(e)
        assert gaussian_kl(e, np.ones_like(e)) == np.sum(e * e)

    def test_batched_rows(self):
        e = np.array([[1.0, 0.0], [0.0, 2.0]])
        np.testing.assert_array_equal(gaussian_kl(e, np.ones_like(e)), [1.0, 4.0])
