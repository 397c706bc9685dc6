"""Tensor engine: forward semantics against plain-numpy oracles, hand-derived
backward values, tape mechanics, and structural ops."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import xstereo.tensor as T
from xstereo.tensor import Tensor, backward, float64_scope, no_grad


# ---------------------------------------------------------------------------
# independent convolution oracles (naive loops, written against the plain
# textbook definitions -- no shortcuts shared with the implementation)
# ---------------------------------------------------------------------------

def naive_conv2d(x, w, b=None, stride=1, padding=0):
    B, Cin, H, W = x.shape
    Cout, Cin2, K, _ = w.shape
    assert Cin == Cin2
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Ho = (H + 2 * padding - K) // stride + 1
    Wo = (W + 2 * padding - K) // stride + 1
    out = np.zeros((B, Cout, Ho, Wo), dtype=np.float64)
    for n in range(B):
        for o in range(Cout):
            for i in range(Ho):
                for j in range(Wo):
                    patch = xp[n, :, i * stride:i * stride + K, j * stride:j * stride + K]
                    out[n, o, i, j] = np.sum(patch * w[o])
            if b is not None:
                out[n, o] += b[o]
    return out


def naive_conv_transpose2d(x, w, b=None, stride=2, padding=1, output_padding=1):
    """Direct scatter-sum of the fractionally-strided convolution.

    The package keeps the kernel in plain cross-correlation orientation and
    runs it over the dilated input, which in scatter form means input pixel
    (i, j) deposits x * w[o, c, K-1-di, K-1-dj] at (i*s - p + di, j*s - p + dj).
    """
    B, Cin, H, W = x.shape
    Cout = w.shape[0]
    K = w.shape[2]
    Ho = (H - 1) * stride - 2 * padding + K + output_padding
    Wo = (W - 1) * stride - 2 * padding + K + output_padding
    out = np.zeros((B, Cout, Ho, Wo), dtype=np.float64)
    for n in range(B):
        for c in range(Cin):
            for i in range(H):
                for j in range(W):
                    for o in range(Cout):
                        for di in range(K):
                            for dj in range(K):
                                oi = i * stride - padding + di
                                oj = j * stride - padding + dj
                                if 0 <= oi < Ho and 0 <= oj < Wo:
                                    out[n, o, oi, oj] += (
                                        x[n, c, i, j] * w[o, c, K - 1 - di, K - 1 - dj])
    if b is not None:
        out += b[None, :, None, None]
    return out


# ---------------------------------------------------------------------------
# tensor construction and tape mechanics
# ---------------------------------------------------------------------------

class TestTape:
    def test_default_dtype_is_float32(self):
        t = Tensor([1.0, 2.0])
        assert t.data.dtype == np.float32

    def test_float64_scope_switches_dtype(self):
        with float64_scope():
            assert Tensor([1.0]).data.dtype == np.float64
        assert Tensor([1.0]).data.dtype == np.float32

    def test_no_grad_blocks_taping(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        before = len(T.active_tape().entries)
        with no_grad():
            y = T.mul(x, x)
        assert len(T.active_tape().entries) == before
        assert not y.requires_grad

    def test_untracked_inputs_are_not_taped(self):
        x = Tensor([1.0, 2.0])  # requires_grad False
        before = len(T.active_tape().entries)
        T.mul(x, x)
        assert len(T.active_tape().entries) == before

    def test_backward_clears_tape(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = T.tsum(T.mul(x, x))
        assert len(T.active_tape().entries) > 0
        backward(loss)
        assert len(T.active_tape().entries) == 0

    def test_retain_tape_allows_second_backward(self):
        x = Tensor([3.0], requires_grad=True)
        y = T.mul(x, x)
        loss = T.tsum(y)
        backward(loss, retain_tape=True)
        g1 = x.grad.copy()
        # grads accumulate everywhere along the chain, so a replay needs every
        # involved tensor cleared, not just the leaf
        T.clear_grads([x, y, loss])
        backward(loss, retain_tape=True)
        np.testing.assert_array_equal(x.grad, g1)
        T.active_tape().clear()

    def test_grad_accumulates_across_uses(self):
        x = Tensor([2.0], requires_grad=True)
        # y = x + x -> dy/dx = 2
        backward(T.tsum(T.add(x, x)))
        np.testing.assert_allclose(x.grad, [2.0])

    def test_detach_severs_gradient(self):
        x = Tensor([2.0], requires_grad=True)
        y = T.mul(x, 3.0)
        loss = T.tsum(T.mul(y.detach(), x))
        backward(loss)
        # d/dx of (const 6) * x = 6; no second-path contribution through y
        np.testing.assert_allclose(x.grad, [6.0])

    def test_operator_sugar_matches_functions(self, rng):
        a = Tensor(rng.normal(size=(2, 3)).astype(np.float32))
        b = Tensor(rng.normal(size=(2, 3)).astype(np.float32))
        np.testing.assert_array_equal((a + b).data, T.add(a, b).data)
        np.testing.assert_array_equal((a - b).data, T.sub(a, b).data)
        np.testing.assert_array_equal((a * b).data, T.mul(a, b).data)
        np.testing.assert_array_equal((1.0 - a).data, T.rsub(a, 1.0).data)
        np.testing.assert_array_equal((2.0 / (a + 10.0)).data,
                                      T.rdiv(T.add(a, 10.0), 2.0).data)
        np.testing.assert_array_equal((-a).data, T.neg(a).data)


# ---------------------------------------------------------------------------
# elementwise forward values vs numpy
# ---------------------------------------------------------------------------

finite_arrays = st.integers(0, 2 ** 32 - 1).map(
    lambda s: np.random.default_rng(s).uniform(-3.0, 3.0, size=(2, 3, 4, 5)).astype(np.float32))


class TestElementwiseForward:
    @given(finite_arrays, finite_arrays)
    def test_binary_ops_match_numpy(self, a, b):
        ta, tb = Tensor(a), Tensor(b)
        np.testing.assert_array_equal(T.add(ta, tb).data, a + b)
        np.testing.assert_array_equal(T.sub(ta, tb).data, a - b)
        np.testing.assert_array_equal(T.mul(ta, tb).data, a * b)
        denom = np.abs(b) + 0.5
        np.testing.assert_array_equal(T.div(ta, Tensor(denom)).data,
                                      a / denom.astype(np.float32))

    @given(finite_arrays)
    def test_unary_ops_match_numpy(self, a):
        t = Tensor(a)
        np.testing.assert_array_equal(T.neg(t).data, -a)
        np.testing.assert_array_equal(T.tabs(t).data, np.abs(a))
        np.testing.assert_allclose(T.exp(t).data, np.exp(a), rtol=1e-6)
        np.testing.assert_allclose(T.tanh(t).data, np.tanh(a), rtol=1e-6)
        np.testing.assert_array_equal(T.relu(t).data, np.maximum(a, 0))
        np.testing.assert_allclose(T.leaky_relu(t, 0.1).data,
                                   np.where(a > 0, a, 0.1 * a), rtol=1e-6)
        np.testing.assert_array_equal(T.clamp(t, -1.0, 1.0).data, np.clip(a, -1, 1))

    @given(finite_arrays)
    def test_sigmoid_range_and_value(self, a):
        s = T.sigmoid(Tensor(a)).data
        np.testing.assert_allclose(s, 1.0 / (1.0 + np.exp(-a.astype(np.float64))),
                                   atol=1e-6)
        assert np.all(s > 0) and np.all(s < 1)

    @given(finite_arrays)
    def test_reductions_match_numpy(self, a):
        t = Tensor(a)
        np.testing.assert_allclose(T.tsum(t).data, a.sum(), rtol=1e-4)
        np.testing.assert_allclose(T.tmean(t).data, a.mean(), rtol=1e-4)
        np.testing.assert_allclose(T.tsum(t, axis=1, keepdims=True).data,
                                   a.sum(axis=1, keepdims=True), rtol=1e-4)
        np.testing.assert_allclose(T.tmean(t, axis=1, keepdims=True).data,
                                   a.mean(axis=1, keepdims=True), rtol=1e-4)

    def test_scalar_operand_broadcast(self):
        x = Tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(T.add(x, 1.0).data, [[2, 3], [4, 5]])
        np.testing.assert_array_equal(T.mul(x, 2.0).data, [[2, 4], [6, 8]])
        np.testing.assert_array_equal(T.rsub(x, 10.0).data, [[9, 8], [7, 6]])
        np.testing.assert_array_equal(T.rdiv(x, 12.0).data, [[12, 6], [4, 3]])


# ---------------------------------------------------------------------------
# hand-derived backward values
# ---------------------------------------------------------------------------

class TestBackwardValues:
    def test_square_sum(self):
        x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
        backward(T.tsum(T.mul(x, x)))
        np.testing.assert_allclose(x.grad, [2.0, -4.0, 6.0])

    def test_mean_spreads_one_over_n(self):
        x = Tensor(np.ones((2, 5), dtype=np.float32), requires_grad=True)
        backward(T.tmean(x))
        np.testing.assert_allclose(x.grad, np.full((2, 5), 0.1))

    def test_chain_rule_through_affine(self):
        # loss = sum(3x + 1) -> grad 3
        x = Tensor([0.5, 1.5], requires_grad=True)
        backward(T.tsum(T.add(T.mul(x, 3.0), 1.0)))
        np.testing.assert_allclose(x.grad, [3.0, 3.0])

    def test_div_quotient_rule(self):
        x = Tensor([2.0], requires_grad=True)
        y = Tensor([4.0], requires_grad=True)
        backward(T.tsum(T.div(x, y)))
        np.testing.assert_allclose(x.grad, [0.25])       # 1/y
        np.testing.assert_allclose(y.grad, [-0.125])     # -x/y^2

    def test_rsub_and_rdiv_grads(self):
        x = Tensor([2.0], requires_grad=True)
        backward(T.tsum(T.rsub(x, 1.0)))                 # 1 - x
        np.testing.assert_allclose(x.grad, [-1.0])
        x2 = Tensor([2.0], requires_grad=True)
        backward(T.tsum(T.rdiv(x2, 8.0)))                # 8/x -> -8/x^2
        np.testing.assert_allclose(x2.grad, [-2.0])

    def test_abs_sign_away_from_zero(self):
        x = Tensor([-3.0, 2.0], requires_grad=True)
        backward(T.tsum(T.tabs(x)))
        np.testing.assert_allclose(x.grad, [-1.0, 1.0])

    def test_clamp_blocks_gradient_outside(self):
        x = Tensor([-2.0, 0.5, 2.0], requires_grad=True)
        backward(T.tsum(T.clamp(x, -1.0, 1.0)))
        np.testing.assert_allclose(x.grad, [0.0, 1.0, 0.0])

    def test_sigmoid_derivative(self):
        x = Tensor([0.0], requires_grad=True)
        backward(T.tsum(T.sigmoid(x)))
        np.testing.assert_allclose(x.grad, [0.25], atol=1e-6)  # s(1-s) at 0

    def test_tanh_derivative(self):
        x = Tensor([0.0], requires_grad=True)
        backward(T.tsum(T.tanh(x)))
        np.testing.assert_allclose(x.grad, [1.0], atol=1e-6)   # 1 - tanh^2 at 0


# ---------------------------------------------------------------------------
# structural ops vs numpy oracles
# ---------------------------------------------------------------------------

class TestStructuralOps:
    def test_pad_zero_matches_numpy(self, rng):
        a = rng.normal(size=(1, 2, 3, 4)).astype(np.float32)
        out = T.pad_zero(Tensor(a), ((1, 2), (0, 3)))
        np.testing.assert_array_equal(
            out.data, np.pad(a, ((0, 0), (0, 0), (1, 2), (0, 3))))

    def test_pad_zero_backward_crops(self):
        a = Tensor(np.ones((1, 1, 2, 2), dtype=np.float32), requires_grad=True)
        backward(T.tsum(T.pad_zero(a, ((1, 1), (1, 1)))))
        np.testing.assert_array_equal(a.grad, np.ones((1, 1, 2, 2)))

    def test_pad_reflect_matches_numpy(self, rng):
        a = rng.normal(size=(1, 2, 4, 5)).astype(np.float32)
        out = T.pad_reflect(Tensor(a), 2)
        np.testing.assert_array_equal(
            out.data, np.pad(a, ((0, 0), (0, 0), (2, 2), (2, 2)), mode="reflect"))

    def test_pad_reflect_backward_folds_counts(self):
        # every interior contribution folds back; total gradient mass preserved
        a = Tensor(np.zeros((1, 1, 4, 4), dtype=np.float32), requires_grad=True)
        out = T.pad_reflect(a, 1)
        backward(T.tsum(out))
        assert a.grad.sum() == out.data.size

    def test_pad_reflect_rejects_oversize_pad(self):
        with pytest.raises(ValueError):
            T.pad_reflect(Tensor(np.zeros((1, 1, 3, 3))), 3)

    def test_dilate2d_pattern(self):
        a = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        out = T.dilate2d(a, 2)
        np.testing.assert_array_equal(out.data[0, 0],
                                      [[1, 0, 2], [0, 0, 0], [3, 0, 4]])

    def test_avg_pool_values(self):
        a = Tensor(np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4))
        out = T.avg_pool(a, 2, 2)
        np.testing.assert_array_equal(out.data[0, 0], [[2.5, 4.5], [10.5, 12.5]])

    def test_avg_pool_stride_one_window(self, rng):
        a = rng.normal(size=(1, 1, 5, 5)).astype(np.float32)
        out = T.avg_pool(Tensor(a), 3, 1)
        expected = np.zeros((3, 3))
        for i in range(3):
            for j in range(3):
                expected[i, j] = a[0, 0, i:i + 3, j:j + 3].mean()
        np.testing.assert_allclose(out.data[0, 0], expected, atol=1e-6)

    def test_avg_pool_backward_uniform(self):
        a = Tensor(np.zeros((1, 1, 4, 4), dtype=np.float32), requires_grad=True)
        backward(T.tsum(T.avg_pool(a, 2, 2)))
        np.testing.assert_allclose(a.grad, np.full((1, 1, 4, 4), 0.25))

    def test_upsample_two_to_four_anchors(self):
        a = Tensor(np.array([[[[0.0, 1.0]]]]))
        out = T.upsample_bilinear(a, 1, 4)
        np.testing.assert_allclose(out.data[0, 0, 0], [0.0, 0.25, 0.75, 1.0])

    def test_upsample_same_size_identity(self, rng):
        a = rng.normal(size=(1, 2, 3, 4)).astype(np.float32)
        out = T.upsample_bilinear(Tensor(a), 3, 4)
        np.testing.assert_array_equal(out.data, a)

    def test_upsample_preserves_constants(self):
        a = Tensor(np.full((1, 1, 2, 2), 0.7, dtype=np.float32))
        out = T.upsample_bilinear(a, 8, 8)
        np.testing.assert_allclose(out.data, 0.7, atol=1e-6)

    def test_concat_slice_roundtrip(self, rng):
        a = Tensor(rng.normal(size=(1, 2, 3, 3)).astype(np.float32))
        b = Tensor(rng.normal(size=(1, 3, 3, 3)).astype(np.float32))
        cat = T.concat_channels([a, b])
        assert cat.data.shape == (1, 5, 3, 3)
        np.testing.assert_array_equal(T.channel_slice(cat, 0, 2).data, a.data)
        np.testing.assert_array_equal(T.channel_slice(cat, 2, 5).data, b.data)

    def test_concat_backward_splits(self):
        a = Tensor(np.ones((1, 1, 2, 2), dtype=np.float32), requires_grad=True)
        b = Tensor(np.ones((1, 2, 2, 2), dtype=np.float32), requires_grad=True)
        cat = T.concat_channels([a, b])
        backward(T.tsum(T.mul(cat, Tensor(np.arange(12, dtype=np.float32).reshape(1, 3, 2, 2)))))
        np.testing.assert_array_equal(a.grad, np.arange(4).reshape(1, 1, 2, 2))
        np.testing.assert_array_equal(b.grad, np.arange(4, 12).reshape(1, 2, 2, 2))

    def test_repeat_channels(self, rng):
        a = rng.normal(size=(1, 1, 2, 2)).astype(np.float32)
        out = T.repeat_channels(Tensor(a), 3)
        assert out.data.shape == (1, 3, 2, 2)
        for c in range(3):
            np.testing.assert_array_equal(out.data[:, c:c + 1], a)

    def test_repeat_channels_backward_sums(self):
        a = Tensor(np.zeros((1, 1, 2, 2), dtype=np.float32), requires_grad=True)
        backward(T.tsum(T.repeat_channels(a, 4)))
        np.testing.assert_allclose(a.grad, np.full((1, 1, 2, 2), 4.0))

    def test_spatial_slice_values(self, rng):
        a = rng.normal(size=(1, 1, 4, 6)).astype(np.float32)
        out = T.spatial_slice(Tensor(a), slice(1, 3), slice(2, 5))
        np.testing.assert_array_equal(out.data, a[:, :, 1:3, 2:5])

    def test_instance_norm_two_pixel_closed_form(self):
        # plane with values (a, b): mean (a+b)/2, var ((a-b)/2)^2
        a, b, eps = 3.0, 1.0, 1e-5
        x = Tensor(np.array([[[[a, b]]]], dtype=np.float32))
        out = T.instance_norm(x, eps=eps)
        half = (a - b) / 2.0
        expected = half / np.sqrt(half ** 2 + eps)
        np.testing.assert_allclose(out.data[0, 0, 0], [expected, -expected],
                                   rtol=1e-5)

    def test_instance_norm_statistics(self, rng):
        x = Tensor(rng.normal(2.0, 3.0, size=(2, 3, 8, 8)).astype(np.float32))
        out = T.instance_norm(x).data.astype(np.float64)
        means = out.mean(axis=(2, 3))
        stds = out.std(axis=(2, 3))
        np.testing.assert_allclose(means, 0.0, atol=1e-5)
        np.testing.assert_allclose(stds, 1.0, atol=1e-3)

    def test_instance_norm_shift_scale_invariance(self, rng):
        x = rng.normal(size=(1, 2, 6, 6)).astype(np.float32)
        base = T.instance_norm(Tensor(x)).data
        moved = T.instance_norm(Tensor(2.5 * x + 1.25)).data
        np.testing.assert_allclose(moved, base, atol=1e-4)


# ---------------------------------------------------------------------------
# convolutions vs the naive oracles
# ---------------------------------------------------------------------------

class TestConv:
    @pytest.mark.parametrize("stride,padding,k", [(1, 0, 3), (1, 1, 3), (2, 1, 3),
                                                  (2, 2, 5), (1, 3, 7)])
    def test_conv2d_matches_naive(self, rng, stride, padding, k):
        x = rng.normal(size=(2, 3, 8, 8)).astype(np.float32)
        w = rng.normal(size=(4, 3, k, k)).astype(np.float32) * 0.2
        b = rng.normal(size=(4,)).astype(np.float32)
        out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding)
        expected = naive_conv2d(x.astype(np.float64), w.astype(np.float64),
                                b.astype(np.float64), stride, padding)
        assert out.data.shape == expected.shape
        np.testing.assert_allclose(out.data, expected, atol=1e-4)

    def test_conv2d_linearity_in_input(self, rng):
        x = rng.normal(size=(1, 2, 6, 6)).astype(np.float32)
        w = Tensor(rng.normal(size=(3, 2, 3, 3)).astype(np.float32))
        one = T.conv2d(Tensor(x), w, stride=1, padding=1).data
        three = T.conv2d(Tensor(3.0 * x), w, stride=1, padding=1).data
        np.testing.assert_allclose(three, 3.0 * one, atol=1e-4)

    @pytest.mark.parametrize("stride,padding,output_padding", [(2, 1, 1), (2, 1, 0),
                                                               (1, 1, 0), (2, 0, 1)])
    def test_conv_transpose2d_matches_naive(self, rng, stride, padding, output_padding):
        x = rng.normal(size=(1, 3, 4, 4)).astype(np.float32)
        w = rng.normal(size=(2, 3, 3, 3)).astype(np.float32) * 0.3
        b = rng.normal(size=(2,)).astype(np.float32)
        out = T.conv_transpose2d(Tensor(x), Tensor(w), Tensor(b), stride=stride,
                                 padding=padding, output_padding=output_padding)
        expected = naive_conv_transpose2d(x.astype(np.float64), w.astype(np.float64),
                                          b.astype(np.float64), stride, padding,
                                          output_padding)
        assert out.data.shape == expected.shape
        np.testing.assert_allclose(out.data, expected, atol=1e-4)

    def test_conv_transpose_doubles_spatial_size(self, rng):
        x = Tensor(rng.normal(size=(1, 4, 5, 7)).astype(np.float32))
        w = Tensor(rng.normal(size=(2, 4, 3, 3)).astype(np.float32))
        out = T.conv_transpose2d(x, w, stride=2, padding=1, output_padding=1)
        assert out.data.shape == (1, 2, 10, 14)

    def test_conv2d_bias_grad_counts_positions(self, rng):
        x = Tensor(rng.normal(size=(2, 1, 4, 4)).astype(np.float32))
        w = Tensor(rng.normal(size=(1, 1, 3, 3)).astype(np.float32))
        b = Tensor(np.zeros(1, dtype=np.float32), requires_grad=True)
        out = T.conv2d(x, w, b, stride=1, padding=1)
        backward(T.tsum(out))
        # bias reaches every output position: B * Ho * Wo = 2 * 4 * 4
        np.testing.assert_allclose(b.grad, [32.0])
