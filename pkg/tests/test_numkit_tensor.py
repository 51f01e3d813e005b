"""Forward-value tests for the tensor kernel."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srmtlab import numkit as nk
from srmtlab.errors import ContractError, DimensionError, NumericError


class TestMatmul:
    def test_identity(self):
        m = np.arange(9.0).reshape(3, 3)
        out = nk.matmul(nk.Tensor(np.eye(3)), nk.Tensor(m))
        np.testing.assert_array_equal(out.data, m)

    def test_hand_product(self):
        a = nk.Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = nk.Tensor([[1.0], [1.0]])
        np.testing.assert_array_equal(nk.matmul(a, b).data, [[3.0], [7.0]])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            nk.matmul(nk.Tensor(np.ones((2, 3))), nk.Tensor(np.ones((2, 3))))

    def test_batched_matches_loop(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((4, 2, 3, 5))
        b = rng.standard_normal((4, 2, 5, 2))
        out = nk.matmul(nk.Tensor(a), nk.Tensor(b)).data
        np.testing.assert_allclose(out, np.matmul(a, b), atol=1e-12)

    def test_grad_of_sum_is_ones_times_bt(self):
        rng = np.random.default_rng(0)
        a = nk.parameter(rng.standard_normal((4, 5)))
        b = nk.Tensor(rng.standard_normal((5, 2)))
        with nk.Tape() as tape:
            loss = nk.tsum(nk.matmul(a, b))
        nk.backward(tape, loss)
        np.testing.assert_allclose(a.grad, np.ones((4, 2)) @ b.data.T, atol=1e-12)


class TestConv2d:
    def test_zero_input_zero_output(self):
        x = nk.Tensor(np.zeros((1, 4, 4)))
        k = nk.Tensor(np.random.default_rng(1).standard_normal((2, 1, 3, 3)))
        assert np.all(nk.conv2d(x, k).data == 0.0)

    def test_ones_overlap_counts(self):
        x = nk.Tensor(np.ones((1, 3, 3)))
        k = nk.Tensor(np.ones((1, 1, 3, 3)))
        out = nk.conv2d(x, k).data[0]
        assert out[1, 1] == 9.0
        assert out[0, 0] == 4.0
        assert out[0, 1] == 6.0

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            nk.conv2d(nk.Tensor(np.ones((2, 4, 4))), nk.Tensor(np.ones((3, 1, 3, 3))))


class TestSoftmax:
    def test_uniform(self):
        out = nk.softmax(nk.Tensor([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)

    def test_no_overflow(self):
        out = nk.softmax(nk.Tensor([1000.0, 0.0]))
        np.testing.assert_allclose(out.data, [1.0, 0.0], atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(min_value=-1e4, max_value=1e4), min_size=1, max_size=12))
    def test_rows_sum_to_one(self, row):
        out = nk.softmax(nk.Tensor(row)).data
        assert np.all(out >= 0.0)
        assert abs(out.sum() - 1.0) < 1e-9


class TestLayerNorm:
    def test_constant_row_is_zeros(self):
        x = nk.Tensor(np.full((3, 4), 7.0))
        out = nk.layer_norm(x, nk.Tensor(np.ones(4)), nk.Tensor(np.zeros(4)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-10)

    def test_mean_and_variance(self):
        # Normalized rows have zero mean and unit variance, so across many
        # random rows the output mean approaches the bias mean and the
        # centered second moment approaches mean(gain^2).
        rng = np.random.default_rng(5)
        gain = rng.standard_normal(8)
        bias = rng.standard_normal(8)
        x = nk.Tensor(rng.standard_normal((8192, 8)) * 3.0 + 1.0)
        out = nk.layer_norm(x, nk.Tensor(gain), nk.Tensor(bias)).data
        assert abs(out.mean() - bias.mean()) < 0.05
        np.testing.assert_allclose(((out - bias) ** 2).mean(), np.mean(gain ** 2), rtol=0.05)


class TestBackward:
    def test_sum_grad_is_ones(self):
        x = nk.parameter(np.random.default_rng(0).standard_normal((3, 4)))
        with nk.Tape() as tape:
            loss = nk.tsum(x)
        nk.backward(tape, loss)
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_quadratic_grad(self):
        x = nk.parameter(np.random.default_rng(1).standard_normal(5))
        with nk.Tape() as tape:
            loss = nk.tsum(nk.mul(x, x))
        nk.backward(tape, loss)
        np.testing.assert_allclose(x.grad, 2.0 * x.data, atol=1e-12)

    def test_non_scalar_loss_rejected(self):
        x = nk.parameter(np.ones(3))
        with nk.Tape() as tape:
            y = nk.mul(x, 2.0)
        with pytest.raises(ContractError):
            nk.backward(tape, y)

    def test_tape_single_use(self):
        x = nk.parameter(np.ones(3))
        with nk.Tape() as tape:
            loss = nk.tsum(x)
        nk.backward(tape, loss)
        with pytest.raises(ContractError):
            nk.backward(tape, loss)

    def test_unreachable_leaf_reads_zero(self):
        x = nk.parameter(np.ones(3))
        other = nk.parameter(np.ones(3))
        with nk.Tape() as tape:
            loss = nk.tsum(x)
        nk.backward(tape, loss)
        np.testing.assert_array_equal(nk.grad_or_zeros(other), np.zeros(3))

    def test_grad_accumulates_over_reuse(self):
        x = nk.parameter(np.array([2.0]))
        with nk.Tape() as tape:
            loss = nk.tsum(nk.add(nk.mul(x, x), x))
        nk.backward(tape, loss)
        np.testing.assert_allclose(x.grad, [5.0])


class TestFiniteGuard:
    def test_nan_rejected(self):
        with pytest.raises(NumericError):
            nk.Tensor([np.nan, 1.0])

    def test_inf_from_kernel_rejected(self):
        with pytest.raises(NumericError):
            nk.exp(nk.Tensor([1e4]))


class TestDeterminism:
    def test_kernels_deterministic(self):
        rng = np.random.default_rng(9)
        a, b = rng.standard_normal((8, 8)), rng.standard_normal((8, 8))
        one = nk.matmul(nk.Tensor(a), nk.Tensor(b)).data
        two = nk.matmul(nk.Tensor(a), nk.Tensor(b)).data
        assert np.array_equal(one, two)
