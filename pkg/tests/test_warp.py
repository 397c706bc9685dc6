"""Horizontal warp: hand-computed micro-oracles, roll equivalence, linearity,
validity masking, and gradient masking."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import xstereo.tensor as T
from xstereo.tensor import Tensor, backward
from xstereo.warp import LEFT_FROM_RIGHT, RIGHT_FROM_LEFT, masked_mean, warp_horizontal


def row(values):
    return Tensor(np.asarray(values, dtype=np.float32).reshape(1, 1, 1, -1))


def const_disp(value, w):
    return Tensor(np.full((1, 1, 1, w), value, dtype=np.float32))


class TestWarpValues:
    def test_integer_shift_left_from_right(self):
        # output[x] = source[x - 1]; x = 0 falls outside
        res = warp_horizontal(row([1, 2, 3, 4]), const_disp(1.0, 4), LEFT_FROM_RIGHT)
        np.testing.assert_array_equal(res.warped.data[0, 0, 0], [0, 1, 2, 3])
        np.testing.assert_array_equal(res.valid_mask.data[0, 0, 0], [0, 1, 1, 1])

    def test_integer_shift_right_from_left(self):
        # output[x] = source[x + 1]; x = 3 falls outside
        res = warp_horizontal(row([1, 2, 3, 4]), const_disp(1.0, 4), RIGHT_FROM_LEFT)
        np.testing.assert_array_equal(res.warped.data[0, 0, 0], [2, 3, 4, 0])
        np.testing.assert_array_equal(res.valid_mask.data[0, 0, 0], [1, 1, 1, 0])

    def test_fractional_shift_interpolates(self):
        res = warp_horizontal(row([1, 2, 3, 4]), const_disp(0.5, 4), LEFT_FROM_RIGHT)
        np.testing.assert_allclose(res.warped.data[0, 0, 0], [0, 1.5, 2.5, 3.5])
        np.testing.assert_array_equal(res.valid_mask.data[0, 0, 0], [0, 1, 1, 1])

    def test_zero_disparity_is_bitwise_identity(self, rng):
        src = Tensor(rng.normal(size=(2, 3, 4, 7)).astype(np.float32))
        for direction in (LEFT_FROM_RIGHT, RIGHT_FROM_LEFT):
            res = warp_horizontal(src, Tensor(np.zeros((2, 1, 4, 7), dtype=np.float32)),
                                  direction)
            np.testing.assert_array_equal(res.warped.data, src.data)
            np.testing.assert_array_equal(res.valid_mask.data, 1.0)

    def test_linear_ramp_sampled_exactly(self):
        # source[x] = 2x + 1 is linear, so interpolation is exact: out = 2(x-d)+1
        w = 8
        src = row([2.0 * x + 1.0 for x in range(w)])
        d = 1.75
        res = warp_horizontal(src, const_disp(d, w), LEFT_FROM_RIGHT)
        xs = np.arange(w)
        expected = np.where(xs - d >= 0, 2.0 * (xs - d) + 1.0, 0.0)
        np.testing.assert_allclose(res.warped.data[0, 0, 0], expected, atol=1e-5)

    @given(st.integers(0, 6), st.sampled_from([LEFT_FROM_RIGHT, RIGHT_FROM_LEFT]),
           st.integers(0, 2 ** 31 - 1))
    def test_integer_shift_equals_roll_with_masked_edges(self, k, direction, seed):
        w = 7
        src_np = np.random.default_rng(seed).normal(size=(1, 2, 3, w)).astype(np.float32)
        disp = Tensor(np.full((1, 1, 3, w), float(k), dtype=np.float32))
        res = warp_horizontal(Tensor(src_np), disp, direction)
        xs = np.arange(w)
        pos = xs - k if direction == LEFT_FROM_RIGHT else xs + k
        inside = (pos >= 0) & (pos <= w - 1)
        expected = np.zeros_like(src_np)
        expected[..., inside] = src_np[..., pos[inside]]
        np.testing.assert_array_equal(res.warped.data, expected)
        np.testing.assert_array_equal(res.valid_mask.data[0, 0, 0], inside.astype(np.float32))

    def test_warp_is_linear_in_source(self, rng):
        a = rng.normal(size=(1, 2, 2, 6)).astype(np.float32)
        b = rng.normal(size=(1, 2, 2, 6)).astype(np.float32)
        d = Tensor(rng.uniform(0.3, 2.7, size=(1, 1, 2, 6)).astype(np.float32))
        wa = warp_horizontal(Tensor(a), d, LEFT_FROM_RIGHT).warped.data
        wb = warp_horizontal(Tensor(b), d, LEFT_FROM_RIGHT).warped.data
        wab = warp_horizontal(Tensor(2.0 * a + 3.0 * b), d, LEFT_FROM_RIGHT).warped.data
        np.testing.assert_allclose(wab, 2.0 * wa + 3.0 * wb, atol=1e-4)

    def test_negative_disparity_rejected(self):
        with pytest.raises(ValueError):
            warp_horizontal(row([1, 2, 3]), const_disp(-0.5, 3), LEFT_FROM_RIGHT)

    def test_unknown_direction_rejected(self):
        with pytest.raises(ValueError):
            warp_horizontal(row([1, 2, 3]), const_disp(0.0, 3), "sideways")

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            warp_horizontal(row([1, 2, 3]), const_disp(0.0, 4), LEFT_FROM_RIGHT)

    def test_multichannel_disparity_rejected(self):
        src = Tensor(np.zeros((1, 3, 2, 4), dtype=np.float32))
        d = Tensor(np.zeros((1, 3, 2, 4), dtype=np.float32))
        with pytest.raises(ValueError):
            warp_horizontal(src, d, LEFT_FROM_RIGHT)


class TestWarpGradients:
    def test_disparity_gradient_is_negative_source_slope(self):
        # o(x) = s(x - d) with s(x) = 2x + 1  =>  do/dd = -2 on valid pixels
        w = 8
        src = row([2.0 * x + 1.0 for x in range(w)])
        d = Tensor(np.full((1, 1, 1, w), 2.5, dtype=np.float32), requires_grad=True)
        res = warp_horizontal(src, d, LEFT_FROM_RIGHT)
        backward(T.tsum(res.warped))
        valid = res.valid_mask.data[0, 0, 0] > 0
        np.testing.assert_allclose(d.grad[0, 0, 0][valid], -2.0, atol=1e-5)
        np.testing.assert_array_equal(d.grad[0, 0, 0][~valid], 0.0)

    def test_disparity_gradient_sign_flips_with_direction(self):
        w = 8
        src = row([2.0 * x + 1.0 for x in range(w)])
        d = Tensor(np.full((1, 1, 1, w), 2.5, dtype=np.float32), requires_grad=True)
        res = warp_horizontal(src, d, RIGHT_FROM_LEFT)
        backward(T.tsum(res.warped))
        valid = res.valid_mask.data[0, 0, 0] > 0
        np.testing.assert_allclose(d.grad[0, 0, 0][valid], 2.0, atol=1e-5)

    def test_source_gradient_skips_unsampled_pixels(self):
        # constant integer shift: each valid output reads exactly one source
        # pixel, so source pixels nobody samples receive zero gradient
        w = 6
        src = Tensor(np.arange(w, dtype=np.float32).reshape(1, 1, 1, w),
                     requires_grad=True)
        d = const_disp(2.0, w)
        res = warp_horizontal(src, d, LEFT_FROM_RIGHT)
        backward(T.tsum(res.warped))
        # outputs x = 2..5 sample sources 0..3; sources 4, 5 are never read
        np.testing.assert_array_equal(src.grad[0, 0, 0], [1, 1, 1, 1, 0, 0])

    def test_valid_mask_not_tracked(self):
        src = row([1, 2, 3, 4])
        d = Tensor(np.full((1, 1, 1, 4), 1.0, dtype=np.float32), requires_grad=True)
        res = warp_horizontal(src, d, LEFT_FROM_RIGHT)
        assert not res.valid_mask.requires_grad


class TestMaskedMean:
    def test_half_mask(self):
        values = Tensor(np.array([[[[2.0, 4.0, 6.0, 8.0]]]], dtype=np.float32))
        mask = Tensor(np.array([[[[1.0, 1.0, 0.0, 0.0]]]], dtype=np.float32))
        assert masked_mean(values, mask).data == pytest.approx(3.0)

    def test_full_mask_is_plain_mean(self, rng):
        v = rng.normal(size=(1, 1, 3, 4)).astype(np.float32)
        out = masked_mean(Tensor(v), Tensor(np.ones((1, 1, 3, 4), dtype=np.float32)))
        assert out.data == pytest.approx(v.mean(), abs=1e-6)

    def test_empty_mask_returns_zero(self):
        v = Tensor(np.ones((1, 1, 2, 2), dtype=np.float32))
        out = masked_mean(v, Tensor(np.zeros((1, 1, 2, 2), dtype=np.float32)))
        assert float(out.data) == 0.0

    def test_multichannel_values_single_channel_mask(self):
        v = Tensor(np.stack([np.full((2, 2), 1.0), np.full((2, 2), 3.0)])[None].astype(np.float32))
        mask = np.zeros((1, 1, 2, 2), dtype=np.float32)
        mask[0, 0, 0, 0] = 1.0
        # the mask tiles across channels and the denominator counts every
        # masked element, so this is the plain mean of the entries {1, 3}
        out = masked_mean(v, Tensor(mask))
        assert float(out.data) == pytest.approx(2.0)

    def test_gradient_restricted_to_mask(self):
        v = Tensor(np.ones((1, 1, 1, 4), dtype=np.float32), requires_grad=True)
        mask = Tensor(np.array([[[[1.0, 0.0, 1.0, 0.0]]]], dtype=np.float32))
        backward(masked_mean(v, mask))
        np.testing.assert_allclose(v.grad[0, 0, 0], [0.5, 0.0, 0.5, 0.0])
