"""Data synthesis, image io, and network input preparation.

Synthetic scenes are layered random textures: a full-frame background plus
rectangular foreground layers, each carrying one disparity. The right view
resamples every layer's texture at x + d (the left pixel at x matches the
right pixel at x - d), and nearer layers occlude farther ones. The right view
then passes through a parametric spectral transform (channel mixing, gamma,
highlight blow-out) that mimics a different sensor band; the left view stays
untouched. Ground truth is exact per layer and visibility is computed by an
independent z-buffer pass.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import tensor as T
from .tensor import Tensor


@dataclass
class SpectralPair:
    left: Tensor                      # 1 x 3 x H x W, spectrum A
    right: Tensor                     # 1 x 3 x H x W, spectrum B
    gt_disparity: Tensor | None = None  # 1 x 1 x H x W, left view, pixels
    pair_id: str = ""


@dataclass
class SyntheticSceneSpec:
    texture_seed: int = 0
    layer_disparities: tuple[float, ...] = (2.0,)  # [0] is the background
    mix_matrix: tuple[tuple[float, float, float], ...] | None = None
    gammas: tuple[float, float, float] = (1.0, 1.0, 1.0)
    highlight_threshold: float = 1.0
    highlight_gain: float = 0.0
    # 0 = every channel shares one spatial pattern (band mixing is then a pure
    # per-channel rescale); 1 = fully material-like independent channels
    channel_independence: float = 0.0

    def validate(self) -> None:
        if len(self.layer_disparities) < 1:
            raise ValueError("need at least the background layer")
        for d in self.layer_disparities:
            if d < 0:
                raise ValueError(f"layer disparity {d} must be non-negative")
        if self.mix_matrix is not None:
            m = np.asarray(self.mix_matrix, dtype=np.float64)
            if m.shape != (3, 3):
                raise ValueError(f"mix_matrix must be 3x3, got {m.shape}")
            if not np.allclose(m.sum(axis=1), 1.0, atol=1e-6):
                raise ValueError(f"mix_matrix rows must sum to 1, got {m.sum(axis=1)}")
        if len(self.gammas) != 3 or any(g <= 0 for g in self.gammas):
            raise ValueError(f"gammas must be 3 positive values, got {self.gammas}")
        if self.highlight_gain < 0:
            raise ValueError("highlight_gain must be non-negative")
        if not 0.0 <= self.channel_independence <= 1.0:
            raise ValueError(
                f"channel_independence must be in [0, 1], got {self.channel_independence}")

    @property
    def max_disparity(self) -> float:
        return max(self.layer_disparities)

    def is_identity_transform(self) -> bool:
        ident = self.mix_matrix is None or np.allclose(np.asarray(self.mix_matrix), np.eye(3))
        return ident and tuple(self.gammas) == (1.0, 1.0, 1.0) and self.highlight_gain == 0.0


@dataclass
class SyntheticScene:
    pair: SpectralPair
    gt_right: Tensor          # 1 x 1 x H x W, right view
    visible_left: np.ndarray  # H x W bool, true where the left pixel is seen in the right view


def nir_like_spectral_spec(texture_seed: int = 0,
                           layer_disparities: tuple[float, ...] = (2.0,)) -> SyntheticSceneSpec:
    """A strong non-linear band shift: heavy channel mixing, split gammas,
    and highlight blow-out that saturates bright texture to white."""
    return SyntheticSceneSpec(
        texture_seed=texture_seed,
        layer_disparities=layer_disparities,
        mix_matrix=((0.1, 0.3, 0.6), (0.5, 0.2, 0.3), (0.25, 0.6, 0.15)),
        gammas=(0.45, 1.0, 1.8),
        highlight_threshold=0.72,
        highlight_gain=2.5,
    )


# ---------------------------------------------------------------------------
# plain-numpy resize (half-pixel centers, matches the tensor op)
# ---------------------------------------------------------------------------

def _axis_coords(in_size: int, out_size: int):
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0.0, in_size - 1.0)
    i0 = np.minimum(np.floor(src).astype(np.int64), in_size - 1)
    frac = src - i0
    i1 = np.minimum(i0 + 1, in_size - 1)
    return i0, i1, frac


def resize_bilinear_np(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a (..., H, W) array."""
    H, W = arr.shape[-2:]
    if (H, W) == (out_h, out_w):
        return arr.copy()
    y0, y1, fy = _axis_coords(H, out_h)
    x0, x1, fx = _axis_coords(W, out_w)
    rows = arr[..., y0, :] * (1.0 - fy)[:, None] + arr[..., y1, :] * fy[:, None]
    out = rows[..., x0] * (1.0 - fx) + rows[..., x1] * fx
    return out.astype(arr.dtype, copy=False)


def _sample_rows(arr: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Linear sample of a (..., W) array at fractional positions (clamped)."""
    W = arr.shape[-1]
    p = np.clip(pos, 0.0, W - 1.0)
    i0 = np.minimum(np.floor(p).astype(np.int64), W - 1)
    frac = p - i0
    i1 = np.minimum(i0 + 1, W - 1)
    return arr[..., i0] * (1.0 - frac) + arr[..., i1] * frac


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------

def _smooth_noise(rng: np.random.Generator, h: int, w: int, cell: int) -> np.ndarray:
    gh = max(2, h // cell + 1)
    gw = max(2, w // cell + 1)
    return resize_bilinear_np(rng.uniform(0.0, 1.0, size=(gh, gw)), h, w)


def _layer_texture(rng: np.random.Generator, h: int, w: int,
                   channel_independence: float = 0.0) -> np.ndarray:
    base = rng.uniform(0.25, 0.9, size=3)
    tint = rng.uniform(0.8, 1.2, size=3)
    lum = 0.6 * _smooth_noise(rng, h, w, 9) + 0.4 * _smooth_noise(rng, h, w, 3)
    fine = rng.normal(0.0, 0.035, size=(h, w))
    shade = (0.3 + 0.7 * lum + fine)[None]
    if channel_independence > 0.0:
        # material-like texture: each channel carries its own spatial pattern,
        # so band mixing genuinely scrambles local contrast between the views
        # (a shared pattern scaled per channel would pass through any mix
        # matrix unchanged). Draws happen only on this branch, which keeps the
        # default texture stream bit-identical to the rho=0 case.
        own = np.stack([0.6 * _smooth_noise(rng, h, w, 9)
                        + 0.4 * _smooth_noise(rng, h, w, 3) for _ in range(3)])
        own_fine = rng.normal(0.0, 0.035, size=(3, h, w))
        rho = float(channel_independence)
        shade = (1.0 - rho) * shade + rho * (0.3 + 0.7 * own + own_fine)
    tex = (base * tint)[:, None, None] * shade
    for _ in range(int(rng.integers(1, 4))):
        cx = rng.uniform(0, w)
        cy = rng.uniform(0, h)
        sig = rng.uniform(2.0, 5.0)
        amp = rng.uniform(0.35, 0.8)
        yy = np.arange(h)[:, None]
        xx = np.arange(w)[None, :]
        tex += amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sig * sig))
    return np.clip(tex, 0.02, 1.0)


def apply_spectral_transform(rgb: np.ndarray, spec: SyntheticSceneSpec) -> np.ndarray:
    """Map a (3, H, W) image in [0, 1] to the simulated second band."""
    y = rgb
    if spec.mix_matrix is not None:
        m = np.asarray(spec.mix_matrix, dtype=rgb.dtype)
        y = np.tensordot(m, rgb, axes=1)
    y = np.clip(y, 0.0, None)
    g = np.asarray(spec.gammas, dtype=y.dtype)[:, None, None]
    y = y ** g
    if spec.highlight_gain > 0:
        y = y + spec.highlight_gain * np.maximum(y - spec.highlight_threshold, 0.0)
    return np.clip(y, 0.0, 1.0).astype(rgb.dtype, copy=False)


def visible_mask(gt_left: np.ndarray) -> np.ndarray:
    """Z-buffer visibility of left-view pixels in the right view.

    A pixel is visible when its match x - d lands in frame and no nearer
    surface claims the same right-view cell.
    """
    H, W = gt_left.shape
    x = np.arange(W)[None, :].repeat(H, axis=0)
    target = np.rint(x - gt_left).astype(np.int64)
    inb = target >= 0
    best = np.full((H, W), -np.inf)
    rows = np.arange(H)[:, None].repeat(W, axis=1)
    np.maximum.at(best, (rows[inb], target[inb]), gt_left[inb])
    safe = np.clip(target, 0, W - 1)
    return inb & (gt_left >= best[rows, safe] - 0.5)


def render_scene(spec: SyntheticSceneSpec, size: tuple[int, int]) -> SyntheticScene:
    """Render a full scene: both views, both gt maps, and visibility."""
    spec.validate()
    H, W = size
    ext = W + int(math.ceil(spec.max_disparity)) + 2
    rng = np.random.default_rng([spec.texture_seed, 101])

    layers = []
    for i, d in enumerate(spec.layer_disparities):
        tex = _layer_texture(rng, H, ext, spec.channel_independence)
        if i == 0:
            support = np.ones((H, W), dtype=np.float64)
        else:
            rh = int(rng.uniform(0.25, 0.55) * H)
            rw = int(rng.uniform(0.25, 0.55) * W)
            rh, rw = max(rh, 4), max(rw, 4)
            ry = int(rng.uniform(0, H - rh))
            rx = int(rng.uniform(0, W - rw))
            support = np.zeros((H, W), dtype=np.float64)
            support[ry:ry + rh, rx:rx + rw] = 1.0
        layers.append((float(d), tex, support))

    # draw far to near so nearer layers overwrite
    order = sorted(range(len(layers)), key=lambda i: (layers[i][0], i))
    left = np.zeros((3, H, W))
    right = np.zeros((3, H, W))
    gt_l = np.zeros((H, W))
    gt_r = np.zeros((H, W))
    xs = np.arange(W, dtype=np.float64)
    # extend support to the texture canvas so right-view sampling past the
    # image edge still reads layer coverage
    for idx in order:
        d, tex, support = layers[idx]
        m_l = support > 0.5
        left[:, m_l] = tex[:, :, :W][:, m_l]
        gt_l[m_l] = d

        support_ext = np.zeros((H, ext))
        support_ext[:, :W] = support
        if idx == 0:
            support_ext[:, W:] = 1.0  # background covers the whole canvas
        pos = xs + d
        cov = _sample_rows(support_ext, pos)
        tex_r = _sample_rows(tex, pos)
        m_r = cov > 0.5
        right[:, m_r] = tex_r[:, m_r]
        gt_r[m_r] = d

    right = apply_spectral_transform(right.astype(np.float64), spec)
    vis = visible_mask(gt_l)

    dt = T.default_dtype()
    pair = SpectralPair(
        left=Tensor(left[None].astype(dt)),
        right=Tensor(right[None].astype(dt)),
        gt_disparity=Tensor(gt_l[None, None].astype(dt)),
        pair_id=f"syn{spec.texture_seed:04d}",
    )
    return SyntheticScene(pair=pair, gt_right=Tensor(gt_r[None, None].astype(dt)), visible_left=vis)


def generate_synthetic(spec: SyntheticSceneSpec, size: tuple[int, int]) -> SpectralPair:
    return render_scene(spec, size).pair


# ---------------------------------------------------------------------------
# raster io and manifests
# ---------------------------------------------------------------------------

def save_image_png(path, img: np.ndarray) -> None:
    """img is (3, H, W) or (1, H, W) float in [0, 1]."""
    a = np.clip(np.asarray(img), 0.0, 1.0)
    a = np.rint(a * 255.0).astype(np.uint8)
    if a.shape[0] == 1:
        Image.fromarray(a[0], mode="L").save(path)
    else:
        Image.fromarray(a.transpose(1, 2, 0), mode="RGB").save(path)


def load_image_png(path) -> np.ndarray:
    """Returns (3, H, W) float32 in [0, 1]; grayscale replicates to 3 channels."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        a = np.asarray(im, dtype=np.float32) / 255.0
    if a.ndim == 2:
        a = np.stack([a, a, a], axis=0)
    else:
        a = a.transpose(2, 0, 1)
    return np.ascontiguousarray(a)


def save_disparity_png(path, disp: np.ndarray) -> None:
    """16-bit fixed point: stored value = round(d * 256); 0 means no data."""
    q = np.rint(np.asarray(disp, dtype=np.float64) * 256.0)
    if q.min() < 0:
        raise ValueError("negative disparities cannot be stored")
    Image.fromarray(np.clip(q, 0, 65535).astype(np.uint16)).save(path)


def load_disparity_png(path) -> tuple[np.ndarray, np.ndarray]:
    """Returns (disparity float32 H x W, valid bool H x W)."""
    with Image.open(path) as im:
        q = np.asarray(im)
    if q.dtype != np.uint16:
        raise ValueError(f"{path}: expected a 16-bit raster, got {q.dtype}")
    valid = q != 0
    return (q.astype(np.float32) / 256.0), valid


def load_pair(left_path, right_path, gt_path=None, pair_id: str = "") -> SpectralPair:
    left = load_image_png(left_path)
    right = load_image_png(right_path)
    gt = None
    if gt_path is not None:
        d, valid = load_disparity_png(gt_path)
        gt = Tensor((d * valid).astype(T.default_dtype())[None, None])
    if not pair_id:
        pair_id = os.path.splitext(os.path.basename(left_path))[0]
        if pair_id.endswith("_left"):
            pair_id = pair_id[: -len("_left")]
    return SpectralPair(left=Tensor(left.astype(T.default_dtype())[None]),
                        right=Tensor(right.astype(T.default_dtype())[None]),
                        gt_disparity=gt, pair_id=pair_id)


def write_manifest(path, entries) -> None:
    """entries: iterable of (left_path, right_path) or (left, right, gt).

    Paths are stored relative to the manifest's own directory, so the whole
    dataset directory can be moved as a unit.
    """
    base = os.path.dirname(os.path.abspath(path))

    def rel(p) -> str:
        try:
            return os.path.relpath(os.path.abspath(str(p)), base)
        except ValueError:  # different drive: keep it absolute
            return os.path.abspath(str(p))

    with open(path, "w", encoding="utf-8") as f:
        for e in entries:
            f.write("\t".join(rel(p) for p in e if p is not None) + "\n")


def read_manifest(path) -> list[tuple[str, str, str | None]]:
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset manifest not found: {path}")
    out = []
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(base, p)

    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise ValueError(f"{path}:{lineno}: expected 2 or 3 tab-separated paths, got {len(parts)}")
            left, right = resolve(parts[0]), resolve(parts[1])
            gt = resolve(parts[2]) if len(parts) == 3 else None
            out.append((left, right, gt))
    return out


def load_dataset(manifest_path, image_size: tuple[int, int] | None = None) -> list[SpectralPair]:
    pairs = []
    for left, right, gt in read_manifest(manifest_path):
        pair = load_pair(left, right, gt)
        if image_size is not None and pair.left.data.shape[2:] != tuple(image_size):
            pair = resize_pair(pair, image_size)
        pairs.append(pair)
    return pairs


def resize_pair(pair: SpectralPair, size: tuple[int, int]) -> SpectralPair:
    oh, ow = size
    H, W = pair.left.data.shape[2:]
    gt = pair.gt_disparity
    if gt is not None:
        scaled = resize_bilinear_np(gt.data, oh, ow) * (ow / W)
        gt = Tensor(scaled)
    return SpectralPair(
        left=Tensor(resize_bilinear_np(pair.left.data, oh, ow)),
        right=Tensor(resize_bilinear_np(pair.right.data, oh, ow)),
        gt_disparity=gt,
        pair_id=pair.pair_id,
    )


def save_pair(pair: SpectralPair, out_dir, stem: str | None = None) -> tuple[str, str, str | None]:
    os.makedirs(out_dir, exist_ok=True)
    stem = stem or pair.pair_id or "pair"
    lp = os.path.join(out_dir, f"{stem}_left.png")
    rp = os.path.join(out_dir, f"{stem}_right.png")
    save_image_png(lp, pair.left.data[0])
    save_image_png(rp, pair.right.data[0])
    gp = None
    if pair.gt_disparity is not None:
        gp = os.path.join(out_dir, f"{stem}_disp.png")
        save_disparity_png(gp, pair.gt_disparity.data[0, 0])
    return lp, rp, gp


# ---------------------------------------------------------------------------
# training-stream helpers
# ---------------------------------------------------------------------------

def augment_flip(pair: SpectralPair, probability: float, rng: np.random.Generator) -> SpectralPair:
    """Mirror both images with the given probability.

    Only for the translation stream: the flipped copy drops its gt disparity
    because mirroring breaks the left/right correspondence sign.
    """
    if not 0.0 <= probability <= 1.0:
        raise ValueError(f"flip probability {probability} outside [0, 1]")
    if rng.random() >= probability:
        return pair
    return SpectralPair(
        left=Tensor(np.ascontiguousarray(pair.left.data[:, :, :, ::-1])),
        right=Tensor(np.ascontiguousarray(pair.right.data[:, :, :, ::-1])),
        gt_disparity=None,
        pair_id=pair.pair_id + "_flip",
    )


def collate(pairs: list[SpectralPair]) -> tuple[Tensor, Tensor, Tensor | None]:
    left = Tensor(np.concatenate([p.left.data for p in pairs], axis=0))
    right = Tensor(np.concatenate([p.right.data for p in pairs], axis=0))
    gt = None
    if all(p.gt_disparity is not None for p in pairs):
        gt = Tensor(np.concatenate([p.gt_disparity.data for p in pairs], axis=0))
    return left, right, gt


def _maybe_resize(t: Tensor, size: tuple[int, int] | None) -> Tensor:
    if size is None or t.data.shape[2:] == tuple(size):
        return t
    return T.upsample_bilinear(t, size[0], size[1])


def prepare_smn_inputs(left: Tensor, right: Tensor, input_mode: str,
                       fake_nir_left: Tensor | None = None,
                       fake_vis_right: Tensor | None = None,
                       image_size: tuple[int, int] | None = None) -> tuple[Tensor, Tensor]:
    """Instance-normalized matcher inputs for each side.

    concat mode stacks (original, translated) per side: the left side gets
    (left, fake-NIR left) and the right side gets (fake-VIS right, right).
    ori mode uses the originals alone.
    """
    if input_mode == "concat":
        if fake_nir_left is None or fake_vis_right is None:
            raise ValueError("concat input mode needs both translated images")
        li = T.concat_channels([_maybe_resize(left, image_size), _maybe_resize(fake_nir_left, image_size)])
        ri = T.concat_channels([_maybe_resize(fake_vis_right, image_size), _maybe_resize(right, image_size)])
    elif input_mode == "ori":
        li = _maybe_resize(left, image_size)
        ri = _maybe_resize(right, image_size)
    else:
        raise ValueError(f"unknown input_mode {input_mode!r}")
    return T.instance_norm(li), T.instance_norm(ri)
