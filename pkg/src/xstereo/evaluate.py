"""Disparity metrics, region breakdowns, and visual diagnostics.

Metrics are plain numpy over (H, W) maps. Region masks slice a scene into
occluded, highlight-corrupted, textureless, and unambiguous pixels so
failure modes show up separately instead of washing out in one average.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .blockmatch import _box_sum
from .config import TrainConfig
from .data import (SpectralPair, SyntheticScene, prepare_smn_inputs,
                   resize_bilinear_np, save_image_png, visible_mask)
from .networks import Networks, f_encode, g_decode, smn_predict
from .tensor import Tensor, no_grad

LUMA = (0.2126, 0.7152, 0.0722)
HIGHLIGHT_LUMINANCE = 0.9
TEXTURELESS_VARIANCE = 1e-4


def _as_map(x) -> np.ndarray:
    a = x.data if isinstance(x, Tensor) else np.asarray(x)
    a = np.squeeze(a)
    if a.ndim != 2:
        raise ValueError(f"expected a single (H, W) map, got shape {a.shape}")
    return a.astype(np.float64)


def mean_abs_error(pred, gt, mask=None) -> float:
    p, g = _as_map(pred), _as_map(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    m = np.ones(p.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not m.any():
        raise ValueError("empty evaluation mask")
    return float(np.abs(p - g)[m].mean())


def rmse(pred, gt, mask=None) -> float:
    p, g = _as_map(pred), _as_map(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    m = np.ones(p.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not m.any():
        raise ValueError("empty evaluation mask")
    return float(np.sqrt(((p - g) ** 2)[m].mean()))


def upscale_prediction(disp, out_h: int, out_w: int) -> np.ndarray:
    """Resize a disparity map and rescale its values by the width ratio."""
    d = _as_map(disp)
    return resize_bilinear_np(d, out_h, out_w) * (out_w / d.shape[1])


def _luminance(img: np.ndarray) -> np.ndarray:
    return (LUMA[0] * img[0] + LUMA[1] * img[1] + LUMA[2] * img[2])


def _sample_x(arr: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Row-wise linear sampling of (H, W) arr at per-pixel positions (H, W)."""
    H, W = arr.shape
    p = np.clip(pos, 0.0, W - 1.0)
    i0 = np.minimum(np.floor(p).astype(np.int64), W - 1)
    frac = p - i0
    i1 = np.minimum(i0 + 1, W - 1)
    rows = np.arange(H)[:, None]
    return arr[rows, i0] * (1.0 - frac) + arr[rows, i1] * frac


def region_masks(gt_left, left_image, right_image) -> dict[str, np.ndarray]:
    """Left-frame region masks for a scene with ground truth.

    occluded:    z-buffer says the match is hidden or out of frame
    highlight:   the matched right-view pixel is blown out
    textureless: the left neighborhood has almost no intensity variation
    common:      visible, not highlight, not textureless
    """
    gt = _as_map(gt_left)
    li = left_image.data[0] if isinstance(left_image, Tensor) else np.asarray(left_image)
    ri = right_image.data[0] if isinstance(right_image, Tensor) else np.asarray(right_image)
    H, W = gt.shape
    vis = visible_mask(gt)

    lum_r = _luminance(ri.astype(np.float64))
    xs = np.arange(W, dtype=np.float64)[None, :].repeat(H, axis=0)
    matched = _sample_x(lum_r, xs - gt)
    highlight = (matched > HIGHLIGHT_LUMINANCE) & vis

    lum_l = _luminance(li.astype(np.float64))
    n = _box_sum(np.ones((H, W)), 2)
    mean = _box_sum(lum_l, 2) / n
    var = _box_sum(lum_l * lum_l, 2) / n - mean * mean
    textureless = (var < TEXTURELESS_VARIANCE) & vis

    return {
        "all": np.ones((H, W), dtype=bool),
        "visible": vis,
        "occluded": ~vis,
        "highlight": highlight,
        "textureless": textureless,
        "common": vis & ~highlight & ~textureless,
    }


@dataclass
class EvalReport:
    rmse_overall: float
    mae_overall: float
    region_rmse: dict[str, float] = field(default_factory=dict)
    coverage: float = 1.0
    num_pairs: int = 0

    @property
    def region_mean(self) -> float:
        """Unweighted mean of the per-region errors (empty regions excluded)."""
        vals = [v for v in self.region_rmse.values() if np.isfinite(v)]
        return float(np.mean(vals)) if vals else float("nan")

    def lines(self) -> list[str]:
        out = [f"pairs      {self.num_pairs}",
               f"coverage   {self.coverage:.4f}",
               f"rmse       {self.rmse_overall:.4f}",
               f"mae        {self.mae_overall:.4f}"]
        for k in sorted(self.region_rmse):
            out.append(f"rmse[{k}]  {self.region_rmse[k]:.4f}")
        return out


def evaluate_predictions(preds: list[np.ndarray], gts: list[np.ndarray],
                         masks_per_pair: list[dict[str, np.ndarray]] | None = None,
                         valids: list[np.ndarray] | None = None) -> EvalReport:
    """Pool squared/absolute errors over pairs, overall and per region."""
    if len(preds) != len(gts) or not preds:
        raise ValueError("need equal, non-empty prediction and ground-truth lists")
    sq: dict[str, float] = {}
    cnt: dict[str, int] = {}
    abs_sum = 0.0
    n_all = 0
    n_valid = 0
    n_total = 0
    for i, (p, g) in enumerate(zip(preds, gts)):
        p, g = _as_map(p), _as_map(g)
        valid = np.ones(p.shape, dtype=bool) if valids is None else np.asarray(valids[i], dtype=bool)
        err = p - g
        regions = {"all": np.ones(p.shape, dtype=bool)}
        if masks_per_pair is not None:
            regions.update(masks_per_pair[i])
        for name, m in regions.items():
            mm = m & valid
            sq[name] = sq.get(name, 0.0) + float((err[mm] ** 2).sum())
            cnt[name] = cnt.get(name, 0) + int(mm.sum())
        mm = valid
        abs_sum += float(np.abs(err[mm]).sum())
        n_all += int(mm.sum())
        n_valid += int(valid.sum())
        n_total += valid.size
    if n_all == 0:
        raise ValueError("no valid pixels to evaluate")
    region_rmse = {k: (np.sqrt(sq[k] / cnt[k]) if cnt[k] else float("nan")) for k in sq}
    return EvalReport(rmse_overall=float(region_rmse["all"]),
                      mae_overall=abs_sum / n_all,
                      region_rmse={k: float(v) for k, v in region_rmse.items() if k != "all"},
                      coverage=n_valid / n_total,
                      num_pairs=len(preds))


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

def predict_disparity(pair: SpectralPair, nets: Networks, cfg: TrainConfig,
                      return_right: bool = False):
    """Full-resolution left-view disparity for one pair (numpy H x W)."""
    with no_grad():
        fnl = fvr = None
        input_mode = cfg.input_mode if nets.has_stn else "ori"
        if nets.has_stn:
            fnl = g_decode(f_encode(pair.left, nets.f), nets.g_b)
            fvr = g_decode(f_encode(pair.right, nets.f), nets.g_a)
        li, ri = prepare_smn_inputs(pair.left, pair.right, input_mode,
                                    fake_nir_left=fnl, fake_vis_right=fvr)
        d_l, d_r = smn_predict(li, ri, nets.smn, nets.spec, cfg.eta)[0]
    if return_right:
        return d_l.data[0, 0].copy(), d_r.data[0, 0].copy()
    return d_l.data[0, 0].copy()


def evaluate_dataset(pairs: list[SpectralPair], nets: Networks, cfg: TrainConfig) -> EvalReport:
    preds, gts, masks = [], [], []
    for pair in pairs:
        if pair.gt_disparity is None:
            continue
        preds.append(predict_disparity(pair, nets, cfg))
        gts.append(pair.gt_disparity.data[0, 0])
        masks.append(region_masks(gts[-1], pair.left, pair.right))
    if not preds:
        raise ValueError("no pairs with ground truth to evaluate")
    return evaluate_predictions(preds, gts, masks)


# ---------------------------------------------------------------------------
# visualization
# ---------------------------------------------------------------------------

# anchors of a monotone-luminance ramp: dark violet -> ember -> pale sand
_RAMP = np.array([
    [0.05, 0.02, 0.12],
    [0.45, 0.10, 0.30],
    [0.85, 0.45, 0.15],
    [0.98, 0.93, 0.85],
])


def colorize_disparity(disp, max_value: float | None = None) -> np.ndarray:
    """Map a disparity map to (3, H, W) colors; luminance grows with value."""
    d = _as_map(disp)
    top = float(max_value) if max_value else max(float(d.max()), 1e-6)
    t = np.clip(d / top, 0.0, 1.0) * (len(_RAMP) - 1)
    i0 = np.minimum(t.astype(np.int64), len(_RAMP) - 2)
    frac = t - i0
    lo = _RAMP[i0]           # (H, W, 3)
    hi = _RAMP[i0 + 1]
    rgb = lo + frac[..., None] * (hi - lo)
    return rgb.transpose(2, 0, 1)


def error_map_image(pred, gt, clip_at: float = 3.0) -> np.ndarray:
    e = np.abs(_as_map(pred) - _as_map(gt))
    g = np.clip(e / clip_at, 0.0, 1.0)
    return np.stack([g, g, g], axis=0)


def emit_diagnostics(pair: SpectralPair, nets: Networks, cfg: TrainConfig,
                     out_dir, max_disparity: float | None = None) -> list[str]:
    """Write the visual bundle for one pair; returns the file paths.

    Both views, both translations (when the translation stack exists), the
    colorized prediction, and an error map when ground truth is available.
    """
    os.makedirs(out_dir, exist_ok=True)
    stem = pair.pair_id or "pair"
    written = []

    def put(suffix: str, img: np.ndarray) -> None:
        p = os.path.join(out_dir, f"{stem}_{suffix}.png")
        save_image_png(p, img)
        written.append(p)

    put("left_vis", pair.left.data[0])
    put("right_nir", pair.right.data[0])
    if nets.has_stn:
        with no_grad():
            fnl = g_decode(f_encode(pair.left, nets.f), nets.g_b)
            fvr = g_decode(f_encode(pair.right, nets.f), nets.g_a)
        put("fake_nir", fnl.data[0])
        put("fake_vis", fvr.data[0])
    pred = predict_disparity(pair, nets, cfg)
    put("disparity", colorize_disparity(pred, max_disparity))
    if pair.gt_disparity is not None:
        put("error", error_map_image(pred, pair.gt_disparity.data[0, 0]))
    return written
