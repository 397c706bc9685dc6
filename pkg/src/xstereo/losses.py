"""Training objectives for the translation and matching networks.

Conventions used throughout:
  - images live in [0, 1], shapes B x C x H x W
  - disparity maps are B x 1 x H x W in pixels of their own scale
  - cycle / reconstruction / auxiliary L1 terms sum over channels per pixel,
    the appearance term averages over channels per pixel
  - every mean over a warped quantity excludes invalid pixels via masked_mean
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

from . import tensor as T
from .tensor import Tensor
from .warp import LEFT_FROM_RIGHT, RIGHT_FROM_LEFT, masked_mean, warp_horizontal

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass
class LossWeights:
    cycle_weight: float = 10.0
    reconstruction_weight: float = 5.0
    adversarial_weight: float = 1.0
    discriminator_weight: float = 1.0
    appearance_weight: float = 1.0
    smoothness_weight: float = 0.2
    lr_weight: float = 0.1
    aux_weight: float = 20.0
    ssim_alpha: float = 0.9
    ssim_window: int = 5


@dataclass
class StnForwardBundle:
    """Everything one translation forward pass produces (both spectra)."""
    input_a: Tensor
    input_b: Tensor
    feat_a: Tensor
    feat_b: Tensor
    fake_b: Tensor  # A rendered as spectrum B
    fake_a: Tensor  # B rendered as spectrum A
    cyc_a: Tensor   # A -> B -> A
    cyc_b: Tensor   # B -> A -> B
    rec_a: Tensor   # A -> A
    rec_b: Tensor   # B -> B


class AdversarialLosses(NamedTuple):
    loss_d: Tensor
    loss_g: Tensor


def ssim(a: Tensor, b: Tensor, window: int = 5) -> Tensor:
    """Per-pixel SSIM map in [-1, 1], same spatial size as the inputs.

    Local statistics come from a window x window mean over reflect-padded
    inputs, so ssim(x, x) is exactly 1 everywhere.
    """
    if window % 2 != 1 or window < 3:
        raise ValueError(f"ssim window must be odd and >= 3, got {window}")
    pad = window // 2

    def stats(x):
        xp = T.pad_reflect(x, pad)
        mu = T.avg_pool(xp, window, 1)
        sq = T.avg_pool(T.mul(xp, xp), window, 1)
        return xp, mu, T.sub(sq, T.mul(mu, mu))

    ap, mu_a, var_a = stats(a)
    bp, mu_b, var_b = stats(b)
    cov = T.sub(T.avg_pool(T.mul(ap, bp), window, 1), T.mul(mu_a, mu_b))
    num = T.mul(T.add(T.mul(T.mul(mu_a, mu_b), 2.0), SSIM_C1),
                T.add(T.mul(cov, 2.0), SSIM_C2))
    den = T.mul(T.add(T.add(T.mul(mu_a, mu_a), T.mul(mu_b, mu_b)), SSIM_C1),
                T.add(T.add(var_a, var_b), SSIM_C2))
    return T.div(num, den)


def appearance_loss(orig: Tensor, recon: Tensor, mask: Tensor, w: LossWeights) -> Tensor:
    """Masked mean of alpha * (1 - SSIM) / 2 + (1 - alpha) * |orig - recon|.

    Both terms are per-pixel channel means; the mask marks valid warp pixels.
    """
    alpha = w.ssim_alpha
    ssim_map = ssim(orig, recon, w.ssim_window)
    struct = T.mul(T.rsub(ssim_map, 1.0), 0.5 * alpha)
    photo = T.mul(T.tabs(T.sub(orig, recon)), 1.0 - alpha)
    per_pixel = T.tmean(T.add(struct, photo), axis=1, keepdims=True)
    return masked_mean(per_pixel, mask)


def smoothness_loss(disp: Tensor, image: Tensor) -> Tensor:
    """Edge-aware first-order smoothness of a disparity map.

    Forward differences along x and y; each absolute disparity gradient is
    damped by exp(-mean_c |grad image|). The last column (x term) and last
    row (y term) have no forward difference and are excluded.
    """
    if disp.data.shape[2:] != image.data.shape[2:]:
        raise ValueError(f"smoothness_loss: disparity {disp.data.shape} and image {image.data.shape} sizes differ")

    def diff_x(t):
        return T.sub(T.spatial_slice(t, slice(None), slice(1, None)),
                     T.spatial_slice(t, slice(None), slice(0, -1)))

    def diff_y(t):
        return T.sub(T.spatial_slice(t, slice(1, None), slice(None)),
                     T.spatial_slice(t, slice(0, -1), slice(None)))

    wx = T.exp(T.neg(T.tmean(T.tabs(diff_x(image)), axis=1, keepdims=True)))
    wy = T.exp(T.neg(T.tmean(T.tabs(diff_y(image)), axis=1, keepdims=True)))
    term_x = T.tmean(T.mul(T.tabs(diff_x(disp)), wx))
    term_y = T.tmean(T.mul(T.tabs(diff_y(disp)), wy))
    return T.add(term_x, term_y)


def lr_consistency_loss(disp_a: Tensor, disp_b: Tensor, direction: str = LEFT_FROM_RIGHT) -> Tensor:
    """Masked mean |disp_a - warp(disp_b by disp_a)|.

    With the default direction this is the left-view consistency term; call
    with (disp_right, disp_left, RIGHT_FROM_LEFT) for the right-view term.
    """
    res = warp_horizontal(disp_b, disp_a, direction)
    return masked_mean(T.tabs(T.sub(disp_a, res.warped)), res.valid_mask)


def _downsample_half(img: Tensor) -> Tensor:
    # exact 2x2 area averaging
    return T.avg_pool(img, 2, 2)


def smn_total(left_image: Tensor, right_image: Tensor, scales, w: LossWeights,
              supervision_mode: str = "nir_only",
              fake_nir_left: Tensor | None = None,
              fake_vis_right: Tensor | None = None) -> Tensor:
    """Total matching objective summed over prediction scales.

    Args:
        left_image / right_image: original full-resolution views.
        scales: list of (disp_left, disp_right), finest first; each level
            halves the resolution and its disparities are in its own pixels.
        supervision_mode: "nir_only" supervises with (fake-NIR left,
            real-NIR right); "both" averages that pair with (real-VIS left,
            fake-VIS right). When no translated images are given the
            originals supervise directly (matcher-only training).
    """
    if fake_nir_left is None:
        pairs = [(left_image, right_image)]
    elif supervision_mode == "nir_only":
        pairs = [(fake_nir_left, right_image)]
    elif supervision_mode == "both":
        if fake_vis_right is None:
            raise ValueError("supervision_mode 'both' needs fake_vis_right")
        pairs = [(fake_nir_left, right_image), (left_image, fake_vis_right)]
    else:
        raise ValueError(f"unknown supervision_mode {supervision_mode!r}")

    total = None
    for disp_l, disp_r in scales:
        th, tw = disp_l.data.shape[2:]
        while pairs[0][0].data.shape[2] > th:
            pairs = [(_downsample_half(li), _downsample_half(ri)) for li, ri in pairs]
        if pairs[0][0].data.shape[2:] != (th, tw):
            raise ValueError(f"cannot reach scale {(th, tw)} by halving from {pairs[0][0].data.shape[2:]}")

        ap = None
        ds = None
        for li, ri in pairs:
            wl = warp_horizontal(ri, disp_l, LEFT_FROM_RIGHT)
            wr = warp_horizontal(li, disp_r, RIGHT_FROM_LEFT)
            ap_pair = T.add(appearance_loss(li, wl.warped, wl.valid_mask, w),
                            appearance_loss(ri, wr.warped, wr.valid_mask, w))
            ds_pair = T.add(smoothness_loss(disp_l, li), smoothness_loss(disp_r, ri))
            ap = ap_pair if ap is None else T.add(ap, ap_pair)
            ds = ds_pair if ds is None else T.add(ds, ds_pair)
        inv = 1.0 / len(pairs)
        lr = T.add(lr_consistency_loss(disp_l, disp_r, LEFT_FROM_RIGHT),
                   lr_consistency_loss(disp_r, disp_l, RIGHT_FROM_LEFT))
        level = T.add(T.add(T.mul(ap, w.appearance_weight * inv),
                            T.mul(ds, w.smoothness_weight * inv)),
                      T.mul(lr, w.lr_weight))
        total = level if total is None else T.add(total, level)
    return total


def _l1_channel_sum_mean(x: Tensor, y: Tensor) -> Tensor:
    # per-pixel L1 summed over channels, averaged over batch and pixels
    return T.tmean(T.tsum(T.tabs(T.sub(x, y)), axis=1))


def cycle_loss(bundle: StnForwardBundle) -> Tensor:
    """L1 between each input and its round-trip translation, both spectra."""
    return T.add(_l1_channel_sum_mean(bundle.cyc_a, bundle.input_a),
                 _l1_channel_sum_mean(bundle.cyc_b, bundle.input_b))


def reconstruction_loss(bundle: StnForwardBundle) -> Tensor:
    """L1 between each input and its same-spectrum decoding, both spectra."""
    return T.add(_l1_channel_sum_mean(bundle.rec_a, bundle.input_a),
                 _l1_channel_sum_mean(bundle.rec_b, bundle.input_b))


def adversarial_losses(d_real: Tensor, d_fake: Tensor) -> AdversarialLosses:
    """Least-squares adversarial pair from two patch maps.

    loss_d treats d_fake as coming from a detached sample; loss_g is the
    generator's objective on the same map. Callers pick the one matching how
    the fake was produced.
    """
    loss_d = T.add(T.tmean(_square(T.sub(d_real, 1.0))), T.tmean(_square(d_fake)))
    loss_g = T.tmean(_square(T.sub(d_fake, 1.0)))
    return AdversarialLosses(loss_d=loss_d, loss_g=loss_g)


def _square(x: Tensor) -> Tensor:
    return T.mul(x, x)


def stn_generator_total(l_cycle: Tensor, l_rec: Tensor, l_adv_g: Tensor, w: LossWeights) -> Tensor:
    return T.add(T.add(T.mul(l_cycle, w.cycle_weight), T.mul(l_rec, w.reconstruction_weight)),
                 T.mul(l_adv_g, w.adversarial_weight))


def stn_discriminator_total(loss_d_a: Tensor, loss_d_b: Tensor, w: LossWeights) -> Tensor:
    return T.mul(T.add(loss_d_a, loss_d_b), w.discriminator_weight)


def auxiliary_loss(fake_nir_left: Tensor, fake_vis_right: Tensor,
                   warped_left: Tensor, mask_left: Tensor,
                   warped_right: Tensor, mask_right: Tensor,
                   w: LossWeights) -> Tensor:
    """Cross-view translation consistency with frozen disparities.

    warped_left is the original right view resampled to the left frame (so it
    should look like the fake-NIR left image); warped_right mirrors it. The
    per-pixel L1 sums over channels and each term averages over its own valid
    mask.
    """
    term_l = T.tsum(T.tabs(T.sub(fake_nir_left, warped_left)), axis=1, keepdims=True)
    term_r = T.tsum(T.tabs(T.sub(fake_vis_right, warped_right)), axis=1, keepdims=True)
    return T.mul(T.add(masked_mean(term_l, mask_left), masked_mean(term_r, mask_right)),
                 w.aux_weight)


def generator_adversarial_loss(d_fake: Tensor) -> Tensor:
    """The generator's half of the least-squares game, without the real term."""
    return T.tmean(_square(T.sub(d_fake, 1.0)))
