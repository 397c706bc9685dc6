"""Differentiable horizontal disparity warping.

The rectified correspondence convention is: left pixel (x, y) matches right
pixel (x - d(x, y), y) with d >= 0. Reconstructing the left view therefore
samples the source at x - d ("left_from_right"); reconstructing the right
view samples at x + d ("right_from_left"). The direction switch exists so
both readings of the correspondence are available.

Sampling is linear along the row. Pixels whose source coordinate falls
outside [0, W - 1] produce 0 output, a 0 mask entry, and no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _record, _diffop, repeat_channels, tsum, mul, div

LEFT_FROM_RIGHT = "left_from_right"
RIGHT_FROM_LEFT = "right_from_left"


@dataclass
class WarpResult:
    warped: Tensor      # B x C x H x W, zeros where invalid
    valid_mask: Tensor  # B x 1 x H x W, values in {0, 1}, never tracked


@_diffop("warp_horizontal")
def warp_horizontal(source: Tensor, disparity: Tensor, direction: str) -> WarpResult:
    """Resample source along rows by a per-pixel disparity map.

    Args:
        source: B x C x H x W image to sample from.
        disparity: B x 1 x H x W, non-negative disparities in pixels.
        direction: LEFT_FROM_RIGHT samples at x - d, RIGHT_FROM_LEFT at x + d.
    """
    if direction == LEFT_FROM_RIGHT:
        sign = -1.0
    elif direction == RIGHT_FROM_LEFT:
        sign = 1.0
    else:
        raise ValueError(f"unknown warp direction {direction!r}")
    if source.data.ndim != 4 or disparity.data.ndim != 4:
        raise ValueError("warp_horizontal expects rank-4 tensors")
    if disparity.data.shape[1] != 1:
        raise ValueError(f"disparity must have 1 channel, got {disparity.data.shape[1]}")
    B, C, H, W = source.data.shape
    if disparity.data.shape != (B, 1, H, W):
        raise ValueError(f"disparity shape {disparity.data.shape} does not match source {source.data.shape}")
    dmin = float(disparity.data.min()) if disparity.data.size else 0.0
    if dmin < 0:
        raise ValueError(f"negative disparity {dmin} rejected; disparities are non-negative by convention")

    dt = source.data.dtype
    xs = np.arange(W, dtype=dt)[None, None, None, :] + dt.type(sign) * disparity.data
    valid = (xs >= 0.0) & (xs <= W - 1.0)
    xs_c = np.clip(xs, 0.0, W - 1.0)
    x0 = np.floor(xs_c).astype(np.int64)
    np.minimum(x0, W - 1, out=x0)
    frac = (xs_c - x0).astype(dt)
    x1 = np.minimum(x0 + 1, W - 1)

    idx0 = np.broadcast_to(x0, (B, C, H, W))
    idx1 = np.broadcast_to(x1, (B, C, H, W))
    s0 = np.take_along_axis(source.data, idx0, axis=3)
    s1 = np.take_along_axis(source.data, idx1, axis=3)
    vmask = valid.astype(dt)
    warped_data = (s0 * (1.0 - frac) + s1 * frac) * vmask

    warped = Tensor(warped_data)
    src_needs = source.requires_grad
    disp_needs = disparity.requires_grad

    def bwd(g):
        gv = g * vmask
        d_src = None
        if src_needs:
            d_src = np.zeros_like(source.data)
            bz = np.arange(B)[:, None, None, None]
            cz = np.arange(C)[None, :, None, None]
            yz = np.arange(H)[None, None, :, None]
            np.add.at(d_src, (bz, cz, yz, idx0), gv * (1.0 - frac))
            np.add.at(d_src, (bz, cz, yz, idx1), gv * frac)
        d_disp = None
        if disp_needs:
            d_disp = (gv * (s1 - s0)).sum(axis=1, keepdims=True) * dt.type(sign)
        return (d_src, d_disp)

    _record(warped, (source, disparity), bwd)
    # xs came from the 1-channel disparity, so vmask is already B x 1 x H x W
    return WarpResult(warped=warped, valid_mask=Tensor(vmask.copy()))


def masked_mean(values: Tensor, mask: Tensor) -> Tensor:
    """Mean of values over pixels where mask is 1.

    mask is B x 1 x H x W with entries in {0, 1}; if values has C > 1 channels
    the mask is tiled across channels and the denominator counts every masked
    element, so the result is the plain mean of all unmasked entries. An
    all-zero mask yields 0 (denominator floored at 1).
    """
    if values.data.shape[0] != mask.data.shape[0] or values.data.shape[2:] != mask.data.shape[2:]:
        raise ValueError(f"masked_mean: values {values.data.shape} and mask {mask.data.shape} disagree")
    if mask.data.shape[1] != 1:
        raise ValueError(f"mask must have 1 channel, got {mask.data.shape[1]}")
    c = values.data.shape[1]
    m = repeat_channels(mask, c) if c > 1 else mask
    total = tsum(mul(values, m))
    count = max(1.0, float(m.data.sum()))
    return div(total, count)
