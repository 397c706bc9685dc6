"""Network definitions: shared encoder, per-spectrum decoders, patch
discriminators, and the multi-scale stereo matcher.

Parameters live in plain name -> Tensor maps (ParameterSet) together with
their Adam moments; forwards are free functions over those maps, so partial
updates and step isolation are explicit rather than hidden in module state.

Desk-scale defaults: base_width 16, 4 residual blocks, 4 matcher scales.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .losses import StnForwardBundle

DIRECTION_A2B = "a2b"
DIRECTION_B2A = "b2a"


@dataclass
class NetworkSpec:
    base_width: int = 16
    num_residual_blocks: int = 4
    num_smn_scales: int = 4

    def validate(self) -> None:
        if self.base_width < 4:
            raise ValueError(f"base_width must be >= 4, got {self.base_width}")
        if self.num_residual_blocks < 1:
            raise ValueError(f"num_residual_blocks must be >= 1, got {self.num_residual_blocks}")
        if not 1 <= self.num_smn_scales <= 4:
            raise ValueError(f"num_smn_scales must be in [1, 4], got {self.num_smn_scales}")


class ParameterSet:
    """Named parameter tensors plus per-parameter Adam moments."""

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, key: str, data: np.ndarray) -> Tensor:
        if key in self.params:
            raise ValueError(f"duplicate parameter {self.name}/{key}")
        t = Tensor(np.ascontiguousarray(data, dtype=T.default_dtype()))
        t.requires_grad = True
        self.params[key] = t
        self.m[key] = np.zeros_like(t.data)
        self.v[key] = np.zeros_like(t.data)
        return t

    def __getitem__(self, key: str) -> Tensor:
        return self.params[key]

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.grad = None

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def grad_norm(self) -> float:
        total = 0.0
        for t in self.params.values():
            if t.grad is not None:
                total += float((t.grad.astype(np.float64) ** 2).sum())
        return math.sqrt(total)


def _init_conv(ps: ParameterSet, key: str, in_c: int, out_c: int, k: int,
               scheme: str, rng: np.random.Generator) -> None:
    if scheme == "gaussian":
        std = 0.02
    elif scheme == "kaiming":
        std = math.sqrt(2.0 / (in_c * k * k))
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    ps.add(key + ".w", rng.normal(0.0, std, size=(out_c, in_c, k, k)))
    ps.add(key + ".b", np.zeros(out_c))


def _conv(ps: ParameterSet, key: str, x: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    return T.conv2d(x, ps[key + ".w"], ps[key + ".b"], stride=stride, padding=padding)


def _conv_t(ps: ParameterSet, key: str, x: Tensor) -> Tensor:
    return T.conv_transpose2d(x, ps[key + ".w"], ps[key + ".b"], stride=2, padding=1, output_padding=1)


# ---------------------------------------------------------------------------
# shared encoder F
# ---------------------------------------------------------------------------

def build_f(spec: NetworkSpec, rng: np.random.Generator) -> ParameterSet:
    w = spec.base_width
    ps = ParameterSet("f")
    _init_conv(ps, "stem", 3, w, 7, "gaussian", rng)
    _init_conv(ps, "down1", w, 2 * w, 3, "gaussian", rng)
    _init_conv(ps, "down2", 2 * w, 4 * w, 3, "gaussian", rng)
    for i in range(spec.num_residual_blocks):
        _init_conv(ps, f"res{i}.conv1", 4 * w, 4 * w, 3, "gaussian", rng)
        _init_conv(ps, f"res{i}.conv2", 4 * w, 4 * w, 3, "gaussian", rng)
    return ps


def f_encode(image: Tensor, ps: ParameterSet) -> Tensor:
    """Shared spectral encoder: B x 3 x H x W -> B x 4w x H/4 x W/4."""
    if image.data.ndim != 4 or image.data.shape[1] != 3:
        raise ValueError(f"f_encode expects B x 3 x H x W, got {image.data.shape}")
    H, W = image.data.shape[2:]
    if H % 4 or W % 4:
        raise ValueError(f"f_encode needs H, W divisible by 4, got {H}x{W}")
    x = T.relu(T.instance_norm(_conv(ps, "stem", image, 1, 3)))
    x = T.relu(T.instance_norm(_conv(ps, "down1", x, 2, 1)))
    x = T.relu(T.instance_norm(_conv(ps, "down2", x, 2, 1)))
    n_blocks = sum(1 for k in ps.params if k.startswith("res") and k.endswith(".conv1.w"))
    for i in range(n_blocks):
        # residual branch uses reflection padding; identity if conv2 is zero
        h = T.relu(T.instance_norm(_conv(ps, f"res{i}.conv1", T.pad_reflect(x, 1), 1, 0)))
        h = T.instance_norm(_conv(ps, f"res{i}.conv2", T.pad_reflect(h, 1), 1, 0))
        x = T.add(x, h)
    return x


# ---------------------------------------------------------------------------
# per-spectrum decoders G
# ---------------------------------------------------------------------------

def build_g(spec: NetworkSpec, name: str, rng: np.random.Generator) -> ParameterSet:
    w = spec.base_width
    ps = ParameterSet(name)
    _init_conv(ps, "up1", 4 * w, 2 * w, 3, "gaussian", rng)
    _init_conv(ps, "up2", 2 * w, w, 3, "gaussian", rng)
    _init_conv(ps, "out", w, 3, 7, "gaussian", rng)
    return ps


def g_decode(feature: Tensor, ps: ParameterSet) -> Tensor:
    """Decode shared features to an image in [0, 1] at 4x the feature size."""
    x = T.relu(T.instance_norm(_conv_t(ps, "up1", feature)))
    x = T.relu(T.instance_norm(_conv_t(ps, "up2", x)))
    x = _conv(ps, "out", x, 1, 3)
    return T.mul(T.add(T.tanh(x), 1.0), 0.5)


# ---------------------------------------------------------------------------
# patch discriminators D
# ---------------------------------------------------------------------------

def build_d(spec: NetworkSpec, name: str, rng: np.random.Generator) -> ParameterSet:
    w = spec.base_width
    ps = ParameterSet(name)
    _init_conv(ps, "c1", 3, w, 4, "gaussian", rng)
    _init_conv(ps, "c2", w, 2 * w, 4, "gaussian", rng)
    _init_conv(ps, "c3", 2 * w, 4 * w, 4, "gaussian", rng)
    _init_conv(ps, "out", 4 * w, 1, 3, "gaussian", rng)
    return ps


def discriminate(image: Tensor, ps: ParameterSet) -> Tensor:
    """Patch scores at 1/8 resolution; no squashing on the output."""
    if image.data.ndim != 4 or image.data.shape[1] != 3:
        raise ValueError(f"discriminate expects B x 3 x H x W, got {image.data.shape}")
    x = T.leaky_relu(_conv(ps, "c1", image, 2, 1), 0.2)
    x = T.leaky_relu(T.instance_norm(_conv(ps, "c2", x, 2, 1)), 0.2)
    x = T.leaky_relu(T.instance_norm(_conv(ps, "c3", x, 2, 1)), 0.2)
    return _conv(ps, "out", x, 1, 1)


# ---------------------------------------------------------------------------
# stereo matching network
# ---------------------------------------------------------------------------

_SMN_ENC_KERNELS = (7, 5, 3, 3)


def _smn_widths(spec: NetworkSpec) -> list[int]:
    return [spec.base_width * (1 << i) for i in range(spec.num_smn_scales)]


def build_smn(spec: NetworkSpec, in_channels: int, rng: np.random.Generator) -> ParameterSet:
    s = spec.num_smn_scales
    widths = _smn_widths(spec)
    ps = ParameterSet("smn")
    prev = in_channels
    for i in range(s):
        k = _SMN_ENC_KERNELS[i]
        _init_conv(ps, f"enc{i + 1}", prev, widths[i], k, "kaiming", rng)
        prev = widths[i]
    for level in range(s - 1, -1, -1):
        dec_out = widths[max(level - 1, 0)]
        in_c = prev
        if level >= 1:
            in_c += widths[level - 1]      # encoder skip
        if level < s - 1:
            in_c += 2                       # upsampled coarser prediction
        _init_conv(ps, f"dec{level}", in_c, dec_out, 3, "kaiming", rng)
        _init_conv(ps, f"pred{level}", dec_out, 2, 3, "kaiming", rng)
        prev = dec_out
    return ps


def smn_predict(left_input: Tensor, right_input: Tensor, ps: ParameterSet,
                spec: NetworkSpec, eta: float) -> list[tuple[Tensor, Tensor]]:
    """Predict left/right disparities at every scale, finest first.

    Raw head outputs pass through a sigmoid, scale by eta * W_scale, and are
    clamped to [0, W_scale]; each level's values are in its own pixel units.
    """
    if left_input.data.shape != right_input.data.shape:
        raise ValueError(f"side shapes differ: {left_input.data.shape} vs {right_input.data.shape}")
    s = spec.num_smn_scales
    H, W = left_input.data.shape[2:]
    if H % (1 << s) or W % (1 << s):
        raise ValueError(f"matcher with {s} scales needs H, W divisible by {1 << s}, got {H}x{W}")
    x = T.concat_channels([left_input, right_input])
    expected = ps["enc1.w"].data.shape[1]
    if x.data.shape[1] != expected:
        raise ValueError(f"matcher was built for {expected} input channels, got {x.data.shape[1]}")

    skips = []
    for i in range(s):
        k = _SMN_ENC_KERNELS[i]
        x = T.leaky_relu(_conv(ps, f"enc{i + 1}", x, 2, k // 2), 0.1)
        skips.append(x)

    preds: list[tuple[Tensor, Tensor]] = []
    feat = skips[-1]
    prev_norm = None
    for level in range(s - 1, -1, -1):
        th, tw = H >> level, W >> level
        parts = [T.upsample_bilinear(feat, th, tw)]
        if level >= 1:
            parts.append(skips[level - 1])
        if prev_norm is not None:
            parts.append(T.upsample_bilinear(prev_norm, th, tw))
        feat = T.leaky_relu(_conv(ps, f"dec{level}", T.concat_channels(parts), 1, 1), 0.1)
        prev_norm = T.sigmoid(_conv(ps, f"pred{level}", feat, 1, 1))
        disp = T.clamp(T.mul(prev_norm, eta * tw), 0.0, float(tw))
        preds.append((T.channel_slice(disp, 0, 1), T.channel_slice(disp, 1, 2)))
    preds.reverse()
    return preds


# ---------------------------------------------------------------------------
# bundles
# ---------------------------------------------------------------------------

@dataclass
class Networks:
    spec: NetworkSpec
    smn: ParameterSet
    f: ParameterSet | None = None
    g_a: ParameterSet | None = None
    g_b: ParameterSet | None = None
    d_a: ParameterSet | None = None
    d_b: ParameterSet | None = None

    @property
    def has_stn(self) -> bool:
        return self.f is not None

    def all_sets(self) -> list[ParameterSet]:
        sets = [s for s in (self.d_a, self.d_b, self.f, self.g_a, self.g_b) if s is not None]
        return sets + [self.smn]

    def stn_generator_sets(self) -> list[ParameterSet]:
        return [self.f, self.g_a, self.g_b]

    def num_parameters(self) -> int:
        return sum(s.num_parameters() for s in self.all_sets())


def smn_input_channels(input_mode: str) -> int:
    if input_mode == "concat":
        return 12
    if input_mode == "ori":
        return 6
    raise ValueError(f"unknown input_mode {input_mode!r}")


def build_networks(spec: NetworkSpec, input_mode: str, seed: int, use_stn: bool = True) -> Networks:
    spec.validate()
    rng = np.random.default_rng([seed, 0])
    smn = build_smn(spec, smn_input_channels(input_mode if use_stn else "ori"), rng)
    if not use_stn:
        return Networks(spec=spec, smn=smn)
    return Networks(
        spec=spec,
        smn=smn,
        f=build_f(spec, rng),
        g_a=build_g(spec, "g_a", rng),
        g_b=build_g(spec, "g_b", rng),
        d_a=build_d(spec, "d_a", rng),
        d_b=build_d(spec, "d_b", rng),
    )


def stn_forward(input_a: Tensor, input_b: Tensor, nets: Networks) -> StnForwardBundle:
    """Full translation pass: fakes, cycles, and same-spectrum decodings."""
    feat_a = f_encode(input_a, nets.f)
    feat_b = f_encode(input_b, nets.f)
    fake_b = g_decode(feat_a, nets.g_b)
    fake_a = g_decode(feat_b, nets.g_a)
    cyc_a = g_decode(f_encode(fake_b, nets.f), nets.g_a)
    cyc_b = g_decode(f_encode(fake_a, nets.f), nets.g_b)
    rec_a = g_decode(feat_a, nets.g_a)
    rec_b = g_decode(feat_b, nets.g_b)
    return StnForwardBundle(input_a=input_a, input_b=input_b, feat_a=feat_a, feat_b=feat_b,
                            fake_b=fake_b, fake_a=fake_a, cyc_a=cyc_a, cyc_b=cyc_b,
                            rec_a=rec_a, rec_b=rec_b)


def translate_image(image: Tensor, nets: Networks, direction: str) -> Tensor:
    if not nets.has_stn:
        raise ValueError("these networks have no translation stack")
    if direction == DIRECTION_A2B:
        return g_decode(f_encode(image, nets.f), nets.g_b)
    if direction == DIRECTION_B2A:
        return g_decode(f_encode(image, nets.f), nets.g_a)
    raise ValueError(f"unknown direction {direction!r}, expected a2b or b2a")
