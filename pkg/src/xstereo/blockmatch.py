"""Brute-force block matching with a sum-of-absolute-differences cost.

This is the classical, non-learned reference matcher: for every left pixel it
scans integer disparities, scores each with a box-windowed SAD against the
shifted right image, and picks the minimum (with optional parabolic sub-pixel
refinement). It has no trainable state, so it serves as an independent oracle
for the learned matcher on same-spectrum scenes — and as a demonstration of
why raw intensity costs break down across spectra.
"""

from __future__ import annotations

import numpy as np


def _box_sum(a: np.ndarray, radius: int) -> np.ndarray:
    """Sum of a (H, W) array over a (2r+1)^2 window, zero-padded at borders."""
    H, W = a.shape
    ii = np.zeros((H + 1, W + 1), dtype=np.float64)
    ii[1:, 1:] = a.cumsum(axis=0).cumsum(axis=1)
    r = radius
    y0 = np.clip(np.arange(H) - r, 0, H)
    y1 = np.clip(np.arange(H) + r + 1, 0, H)
    x0 = np.clip(np.arange(W) - r, 0, W)
    x1 = np.clip(np.arange(W) + r + 1, 0, W)
    return (ii[y1[:, None], x1[None, :]] - ii[y0[:, None], x1[None, :]]
            - ii[y1[:, None], x0[None, :]] + ii[y0[:, None], x0[None, :]])


def block_match(left: np.ndarray, right: np.ndarray, max_disparity: int,
                window: int = 7, subpixel: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Estimate left-view disparity by exhaustive SAD search.

    left, right: (C, H, W) arrays on the same scale.
    Returns (disparity float64 H x W, valid bool H x W); a pixel is invalid
    when no candidate disparity keeps its match inside the frame.
    """
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    if left.ndim != 3 or right.shape != left.shape:
        raise ValueError(f"expected matching (C, H, W) inputs, got {left.shape} vs {right.shape}")
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd and positive, got {window}")
    if max_disparity < 0:
        raise ValueError("max_disparity must be non-negative")
    C, H, W = left.shape
    r = window // 2
    ndisp = int(max_disparity) + 1

    cost = np.full((ndisp, H, W), np.inf)
    counts = _box_sum(np.ones((H, W)), r)
    for d in range(ndisp):
        # left pixel x matches right pixel x - d
        if d == 0:
            ad = np.abs(left - right).sum(axis=0)
        else:
            ad = np.zeros((H, W))
            ad[:, d:] = np.abs(left[:, :, d:] - right[:, :, :-d]).sum(axis=0)
        score = _box_sum(ad, r) / counts
        score[:, :d] = np.inf
        cost[d] = score

    best = np.argmin(cost, axis=0)
    valid = np.isfinite(cost[best, np.arange(H)[:, None], np.arange(W)[None, :]])
    disp = best.astype(np.float64)

    if subpixel and ndisp >= 3:
        yy = np.arange(H)[:, None]
        xx = np.arange(W)[None, :]
        interior = (best >= 1) & (best <= ndisp - 2) & valid
        c0 = cost[np.clip(best - 1, 0, ndisp - 1), yy, xx]
        c1 = cost[best, yy, xx]
        c2 = cost[np.clip(best + 1, 0, ndisp - 1), yy, xx]
        denom = c0 - 2.0 * c1 + c2
        ok = interior & np.isfinite(c0) & np.isfinite(c2) & (denom > 1e-12)
        shift = np.zeros((H, W))
        shift[ok] = 0.5 * (c0[ok] - c2[ok]) / denom[ok]
        disp = disp + np.clip(shift, -0.5, 0.5)

    disp[~valid] = 0.0
    return disp, valid
