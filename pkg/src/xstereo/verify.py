"""Verification harness: finite-difference gradient checks, analytic
invariants, and classical-matcher oracle comparisons.

Gradient checks cover every registered differentiable operation (the
coverage check fails if one lacks a case) plus the composite losses. Each
case builds small random inputs whose non-smooth points (abs/relu kinks,
clamp edges, bilinear cell boundaries, validity-mask flips) are kept at a
safe margin from the evaluation point, so central differences measure the
true derivative instead of a kink.

Analytic error per element is |fd - grad| / max(1, |grad|); the scalar probe
contraction for the finite-difference side runs in float64 so the comparison
measures the engine's backward pass, not the reduction's rounding.
"""

from __future__ import annotations

import contextlib
import time
import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses as L
from . import tensor as T
from .blockmatch import block_match
from .data import SyntheticSceneSpec, nir_like_spectral_spec, render_scene
from .tensor import DIFFERENTIABLE_OPS, Tensor, backward, float64_scope, no_grad
from .warp import LEFT_FROM_RIGHT, RIGHT_FROM_LEFT, masked_mean, warp_horizontal

GRAD_SEEDS = (0, 1, 2)
FLOAT32_STEP, FLOAT32_TOL = 1e-3, 1e-3
FLOAT64_STEP, FLOAT64_TOL = 1e-6, 1e-6


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


@dataclass
class GradCase:
    name: str
    op: str | None  # registry op this case covers; None for composite losses
    build: Callable[[np.random.Generator], tuple[list[Tensor], Callable[[], Tensor]]]
    # precisions this case runs under; every registry op keeps both,
    # composites may be float64-only when their float32 forward noise at the
    # mandated step size exceeds the tolerance (the primitives inside them
    # are still individually checked in float32)
    precisions: tuple[str, ...] = ("float32", "float64")


# ---------------------------------------------------------------------------
# input constructors with kink margins
# ---------------------------------------------------------------------------

def _leaf(rng: np.random.Generator, shape, lo: float = -1.0, hi: float = 1.0) -> Tensor:
    t = Tensor(np.ascontiguousarray(rng.uniform(lo, hi, size=shape), dtype=T.default_dtype()))
    t.requires_grad = True
    return t


def _leaf_away(rng: np.random.Generator, shape, lo: float = 0.3, hi: float = 1.2) -> Tensor:
    mag = rng.uniform(lo, hi, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    t = Tensor(np.ascontiguousarray(mag * sign, dtype=T.default_dtype()))
    t.requires_grad = True
    return t


def _leaf_from(arr: np.ndarray) -> Tensor:
    t = Tensor(np.ascontiguousarray(arr, dtype=T.default_dtype()))
    t.requires_grad = True
    return t


def _img_shape(rng: np.random.Generator, cmax: int = 3):
    return (int(rng.integers(1, 3)), int(rng.integers(1, cmax + 1)),
            int(rng.integers(4, 7)), int(rng.integers(4, 8)))


def _safe_disparity(rng: np.random.Generator, b: int, h: int, w: int,
                    base: float = 1.0) -> Tensor:
    """Disparities of base + [0.3, 0.7]: every sampling position sits at least
    0.3 from both integer grid lines and validity flips."""
    d = base + rng.uniform(0.3, 0.7, size=(b, 1, h, w))
    t = Tensor(np.ascontiguousarray(d, dtype=T.default_dtype()))
    t.requires_grad = True
    return t


def _checker(h: int, w: int, low: float, high: float, jitter: float,
             rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    base = np.where((yy + xx) % 2 == 0, low, high).astype(np.float64)
    return base + rng.uniform(-jitter, jitter, size=(h, w))


# ---------------------------------------------------------------------------
# the case registry
# ---------------------------------------------------------------------------

def gradient_cases() -> list[GradCase]:
    cases: list[GradCase] = []

    def case(name, op, precisions=("float32", "float64")):
        def deco(fn):
            cases.append(GradCase(name=name, op=op, build=fn, precisions=precisions))
            return fn
        return deco

    @case("add_tensor", "add")
    def _(rng):
        a, b = _leaf(rng, _img_shape(rng)), None
        b = _leaf_from(rng.uniform(-1, 1, a.data.shape))
        return [a, b], lambda: T.add(a, b)

    @case("add_scalar", "add")
    def _(rng):
        a = _leaf(rng, _img_shape(rng))
        s = float(rng.uniform(-2, 2))
        return [a], lambda: T.add(a, s)

    @case("sub_tensor", "sub")
    def _(rng):
        a = _leaf(rng, _img_shape(rng))
        b = _leaf_from(rng.uniform(-1, 1, a.data.shape))
        return [a, b], lambda: T.sub(a, b)

    @case("sub_scalar", "sub")
    def _(rng):
        a = _leaf(rng, _img_shape(rng))
        s = float(rng.uniform(-2, 2))
        return [a], lambda: T.sub(a, s)

    @case("rsub_scalar", "rsub")
    def _(rng):
        a = _leaf(rng, _img_shape(rng))
        s = float(rng.uniform(-2, 2))
        return [a], lambda: T.rsub(a, s)

    @case("mul_tensor", "mul")
    def _(rng):
        a = _leaf(rng, _img_shape(rng))
        b = _leaf_from(rng.uniform(-1, 1, a.data.shape))
        return [a, b], lambda: T.mul(a, b)

    @case("mul_scalar", "mul")
    def _(rng):
        a = _leaf(rng, _img_shape(rng))
        s = float(rng.uniform(-2, 2))
        return [a], lambda: T.mul(a, s)

    @case("div_tensor", "div")
    def _(rng):
        a = _leaf(rng, _img_shape(rng))
        b = _leaf_away(rng, a.data.shape, 0.5, 1.5)
        return [a, b], lambda: T.div(a, b)

    @case("div_scalar", "div")
    def _(rng):
        a = _leaf(rng, _img_shape(rng))
        s = float(rng.uniform(0.5, 2.0)) * (1 if rng.random() < 0.5 else -1)
        return [a], lambda: T.div(a, s)

    @case("rdiv_scalar", "rdiv")
    def _(rng):
        a = _leaf_away(rng, _img_shape(rng), 0.5, 1.5)
        s = float(rng.uniform(0.5, 2.0))
        return [a], lambda: T.rdiv(a, s)

    @case("neg", "neg")
    def _(rng):
        a = _leaf(rng, _img_shape(rng))
        return [a], lambda: T.neg(a)

    @case("abs_margined", "abs")
    def _(rng):
        a = _leaf_away(rng, _img_shape(rng), 0.2, 1.0)
        return [a], lambda: T.tabs(a)

    @case("exp", "exp")
    def _(rng):
        a = _leaf(rng, _img_shape(rng), -1.5, 1.5)
        return [a], lambda: T.exp(a)

    @case("tanh", "tanh")
    def _(rng):
        a = _leaf(rng, _img_shape(rng), -2.0, 2.0)
        return [a], lambda: T.tanh(a)

    @case("sigmoid_both_branches", "sigmoid")
    def _(rng):
        a = _leaf_away(rng, _img_shape(rng), 0.5, 6.0)
        return [a], lambda: T.sigmoid(a)

    @case("relu_margined", "relu")
    def _(rng):
        a = _leaf_away(rng, _img_shape(rng), 0.2, 1.0)
        return [a], lambda: T.relu(a)

    @case("leaky_relu_margined", "leaky_relu")
    def _(rng):
        a = _leaf_away(rng, _img_shape(rng), 0.2, 1.0)
        slope = float(rng.choice([0.1, 0.2]))
        return [a], lambda: T.leaky_relu(a, slope)

    @case("clamp_three_regions", "clamp")
    def _(rng):
        shape = _img_shape(rng)
        u = rng.random(shape)
        vals = np.where(u < 0.3, rng.uniform(0.0, 0.15, shape),
                        np.where(u < 0.7, rng.uniform(0.26, 0.74, shape),
                                 rng.uniform(0.86, 1.0, shape)))
        a = _leaf_from(vals)
        return [a], lambda: T.clamp(a, 0.2, 0.8)

    @case("sum_all", "sum")
    def _(rng):
        a = _leaf(rng, _img_shape(rng))
        return [a], lambda: T.tsum(a)

    @case("sum_axis1_keepdims", "sum")
    def _(rng):
        a = _leaf(rng, _img_shape(rng))
        return [a], lambda: T.tsum(a, axis=1, keepdims=True)

    @case("mean_all", "mean")
    def _(rng):
        a = _leaf(rng, _img_shape(rng))
        return [a], lambda: T.tmean(a)

    @case("mean_axis1", "mean")
    def _(rng):
        a = _leaf(rng, _img_shape(rng))
        return [a], lambda: T.tmean(a, axis=1, keepdims=True)

    @case("concat_channels", "concat_channels")
    def _(rng):
        b, _, h, w = _img_shape(rng)
        parts = [_leaf(rng, (b, int(rng.integers(1, 3)), h, w)) for _ in range(3)]
        return parts, lambda: T.concat_channels(parts)

    @case("repeat_channels", "repeat_channels")
    def _(rng):
        b, _, h, w = _img_shape(rng)
        a = _leaf(rng, (b, 1, h, w))
        return [a], lambda: T.repeat_channels(a, 3)

    @case("channel_slice", "channel_slice")
    def _(rng):
        b, _, h, w = _img_shape(rng)
        a = _leaf(rng, (b, 4, h, w))
        return [a], lambda: T.channel_slice(a, 1, 3)

    @case("spatial_slice", "spatial_slice")
    def _(rng):
        a = _leaf(rng, (1, 2, 6, 7))
        return [a], lambda: T.spatial_slice(a, slice(1, 5), slice(2, 6))

    @case("pad_zero", "pad_zero")
    def _(rng):
        a = _leaf(rng, _img_shape(rng))
        return [a], lambda: T.pad_zero(a, ((1, 2), (0, 3)))

    @case("pad_reflect_k1", "pad_reflect")
    def _(rng):
        a = _leaf(rng, _img_shape(rng))
        return [a], lambda: T.pad_reflect(a, 1)

    @case("pad_reflect_k2", "pad_reflect")
    def _(rng):
        b, c, _, _ = _img_shape(rng)
        a = _leaf(rng, (b, c, int(rng.integers(3, 6)), int(rng.integers(3, 6))))
        return [a], lambda: T.pad_reflect(a, 2)

    @case("dilate2d", "dilate2d")
    def _(rng):
        a = _leaf(rng, (1, 2, 3, 4))
        s = int(rng.integers(2, 4))
        return [a], lambda: T.dilate2d(a, s)

    @case("avg_pool_2x2", "avg_pool")
    def _(rng):
        a = _leaf(rng, (1, 2, 6, 4))
        return [a], lambda: T.avg_pool(a, 2)

    @case("avg_pool_3_stride1", "avg_pool")
    def _(rng):
        a = _leaf(rng, (1, 2, 5, 6))
        return [a], lambda: T.avg_pool(a, 3, 1)

    @case("upsample_bilinear_up", "upsample_bilinear")
    def _(rng):
        a = _leaf(rng, (1, 2, 5, 7))
        return [a], lambda: T.upsample_bilinear(a, 8, 10)

    @case("upsample_bilinear_down", "upsample_bilinear")
    def _(rng):
        a = _leaf(rng, (1, 1, 6, 6))
        return [a], lambda: T.upsample_bilinear(a, 4, 4)

    @case("conv2d_k3_s1_p1", "conv2d")
    def _(rng):
        x = _leaf(rng, (1, 2, 5, 6))
        w = _leaf(rng, (3, 2, 3, 3), -0.5, 0.5)
        b = _leaf(rng, (3,), -0.2, 0.2)
        return [x, w, b], lambda: T.conv2d(x, w, b, stride=1, padding=1)

    @case("conv2d_k4_s2_p1", "conv2d")
    def _(rng):
        x = _leaf(rng, (1, 2, 6, 6))
        w = _leaf(rng, (2, 2, 4, 4), -0.5, 0.5)
        b = _leaf(rng, (2,), -0.2, 0.2)
        return [x, w, b], lambda: T.conv2d(x, w, b, stride=2, padding=1)

    @case("conv2d_k7_s1_p3", "conv2d")
    def _(rng):
        x = _leaf(rng, (1, 1, 5, 5))
        w = _leaf(rng, (1, 1, 7, 7), -0.3, 0.3)
        return [x, w], lambda: T.conv2d(x, w, None, stride=1, padding=3)

    @case("conv_transpose_k3_s2", "conv_transpose2d")
    def _(rng):
        x = _leaf(rng, (1, 3, 3, 4))
        w = _leaf(rng, (2, 3, 3, 3), -0.5, 0.5)
        b = _leaf(rng, (2,), -0.2, 0.2)
        return [x, w, b], lambda: T.conv_transpose2d(x, w, b, stride=2, padding=1, output_padding=1)

    @case("conv_transpose_k4_op0", "conv_transpose2d")
    def _(rng):
        x = _leaf(rng, (1, 2, 4, 3))
        w = _leaf(rng, (2, 2, 4, 4), -0.5, 0.5)
        return [x, w], lambda: T.conv_transpose2d(x, w, None, stride=2, padding=1, output_padding=0)

    @case("instance_norm", "instance_norm")
    def _(rng):
        a = _leaf(rng, (1, 2, 5, 5), -1.0, 1.0)
        return [a], lambda: T.instance_norm(a)

    @case("warp_left_from_right", "warp_horizontal")
    def _(rng):
        w = int(rng.integers(5, 8))
        src = _leaf(rng, (1, 2, 4, w), 0.1, 0.9)
        d = _safe_disparity(rng, 1, 4, w)
        return [src, d], lambda: warp_horizontal(src, d, LEFT_FROM_RIGHT).warped

    @case("warp_right_from_left", "warp_horizontal")
    def _(rng):
        w = int(rng.integers(5, 8))
        src = _leaf(rng, (1, 2, 4, w), 0.1, 0.9)
        d = _safe_disparity(rng, 1, 4, w)
        return [src, d], lambda: warp_horizontal(src, d, RIGHT_FROM_LEFT).warped

    # ---- composite losses (op=None: extra coverage beyond the registry) ----

    @case("masked_mean", None)
    def _(rng):
        vals = _leaf(rng, (1, 3, 5, 5))
        m = (rng.random((1, 1, 5, 5)) < 0.6).astype(T.default_dtype())
        m.flat[0] = 1.0
        mask = Tensor(m)
        return [vals], lambda: masked_mean(vals, mask)

    # float64-only: the structural-similarity map's float32 forward rounding
    # at the mandated 1e-3 step is itself ~2e-3 relative, swamping the
    # derivative; float64 resolves it to ~1e-9
    @case("ssim_window3", None, precisions=("float64",))
    def _(rng):
        a = _leaf(rng, (1, 2, 6, 6), -0.4, 0.4)
        b = _leaf(rng, (1, 2, 6, 6), -0.4, 0.4)
        return [a, b], lambda: L.ssim(a, b, window=3)

    @case("appearance_loss", None)
    def _(rng):
        o = rng.uniform(0.2, 0.7, size=(1, 3, 6, 6))
        delta = rng.uniform(0.05, 0.2, size=o.shape) * np.where(rng.random(o.shape) < 0.5, -1, 1)
        orig = _leaf_from(o)
        recon = _leaf_from(o + delta)
        mask = Tensor(np.ones((1, 1, 6, 6), dtype=T.default_dtype()))
        w = L.LossWeights(ssim_window=3)
        return [orig, recon], lambda: L.appearance_loss(orig, recon, mask, w)

    @case("smoothness_loss", None)
    def _(rng):
        d = 2.0 + 0.5 * _checker(6, 6, 0.0, 1.0, 0.1, rng)
        img3 = np.stack([_checker(6, 6, 0.5, 0.75, 0.05, rng) for _ in range(3)])
        disp = _leaf_from(d[None, None])
        image = Tensor(np.ascontiguousarray(img3[None], dtype=T.default_dtype()))
        return [disp], lambda: L.smoothness_loss(disp, image)

    @case("lr_consistency", None)
    def _(rng):
        d_a = _safe_disparity(rng, 1, 4, 6, base=1.0)
        d_b = _safe_disparity(rng, 1, 4, 6, base=2.0)
        return [d_a, d_b], lambda: L.lr_consistency_loss(d_a, d_b, LEFT_FROM_RIGHT)

    @case("auxiliary_loss", None)
    def _(rng):
        # moderate weight and offsets keep the loss value small enough that
        # float32 forward rounding stays well under the FD tolerance; the
        # default 20x weight is a plain scalar multiply covered by "mul"
        shape = (1, 3, 5, 5)
        f1 = rng.uniform(0.2, 0.7, size=shape)
        f2 = rng.uniform(0.2, 0.7, size=shape)
        off = lambda a: a + rng.uniform(0.05, 0.12, size=shape) * np.where(rng.random(shape) < 0.5, -1, 1)
        fnl, fvr = _leaf_from(f1), _leaf_from(f2)
        wl, wr = Tensor(off(f1).astype(T.default_dtype())), Tensor(off(f2).astype(T.default_dtype()))
        ones = Tensor(np.ones((1, 1, 5, 5), dtype=T.default_dtype()))
        w = L.LossWeights(aux_weight=4.0)
        return [fnl, fvr], lambda: L.auxiliary_loss(fnl, fvr, wl, ones, wr, ones, w)

    @case("matcher_total_two_scales", None)
    def _(rng):
        # dim images keep the SSIM variance term well-conditioned in float32
        # (see ssim_window3); the 0.2 brightness gap keeps every per-pixel L1
        # difference far from its |.| kink under the probe step
        H, W = 8, 8
        left = Tensor(np.ascontiguousarray(
            0.30 + 0.06 * _checker(H, W, -1.0, 1.0, 0.2, rng)[None].repeat(3, 0)[None],
            dtype=T.default_dtype()))
        right = Tensor(np.ascontiguousarray(
            0.10 + 0.04 * _checker(H, W, -1.0, 1.0, 0.2, rng)[None].repeat(3, 0)[None],
            dtype=T.default_dtype()))

        def disp(h, w):
            base = 1.5 + 0.15 * _checker(h, w, -0.5, 0.5, 0.1, rng)
            return _leaf_from(base[None, None])

        d_l0, d_r0 = disp(H, W), disp(H, W)
        d_l1, d_r1 = disp(H // 2, W // 2), disp(H // 2, W // 2)
        w = L.LossWeights(ssim_window=3)
        scales = [(d_l0, d_r0), (d_l1, d_r1)]
        return [d_l0, d_r0, d_l1, d_r1], lambda: L.smn_total(left, right, scales, w)

    return cases


def registry_coverage_gap() -> set[str]:
    covered = {c.op for c in gradient_cases() if c.op is not None}
    return set(DIFFERENTIABLE_OPS) - covered


# ---------------------------------------------------------------------------
# the finite-difference harness
# ---------------------------------------------------------------------------

def check_case_gradients(case: GradCase, seed: int, h: float) -> tuple[float, int]:
    """Worst relative gradient error over every input element of one case."""
    # crc32 keyes the stream stably across processes (hash() is salted)
    rng = np.random.default_rng([seed, zlib.crc32(case.name.encode())])
    wrt, out_fn = case.build(rng)

    with no_grad():
        out0 = out_fn()
    if out0.data.size == 1:
        probe = None
    else:
        probe = rng.uniform(-1.0, 1.0, size=out0.data.shape)

    def value() -> float:
        with no_grad():
            o = out_fn().data.astype(np.float64)
        return float((o * probe).sum()) if probe is not None else float(o)

    out = out_fn()
    loss = out if probe is None else T.tsum(T.mul(out, Tensor(probe.astype(T.default_dtype()))))
    backward(loss)
    grads = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in wrt]
    for t in wrt:
        t.grad = None

    worst = 0.0
    n = 0
    for t, g in zip(wrt, grads):
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = value()
            flat[i] = orig - h
            fm = value()
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            ana = float(gflat[i])
            err = abs(num - ana) / max(1.0, abs(ana))
            worst = max(worst, err)
            n += 1
    return worst, n


def run_gradient_checks(precision: str = "float32",
                        seeds: tuple[int, ...] = GRAD_SEEDS) -> list[CheckResult]:
    if precision == "float32":
        h, tol, scope = FLOAT32_STEP, FLOAT32_TOL, contextlib.nullcontext()
    elif precision == "float64":
        h, tol, scope = FLOAT64_STEP, FLOAT64_TOL, float64_scope()
    else:
        raise ValueError(f"unknown precision {precision!r}")

    results: list[CheckResult] = []
    t0 = time.monotonic()
    gap = registry_coverage_gap()
    results.append(CheckResult(
        name=f"grad_coverage_{precision}",
        passed=not gap,
        detail="every differentiable op has a case" if not gap else f"uncovered ops: {sorted(gap)}",
        seconds=time.monotonic() - t0,
    ))
    with scope:
        for case in gradient_cases():
            if precision not in case.precisions:
                continue
            t0 = time.monotonic()
            worst_all = 0.0
            n_all = 0
            for seed in seeds:
                worst, n = check_case_gradients(case, seed, h)
                worst_all = max(worst_all, worst)
                n_all += n
            results.append(CheckResult(
                name=f"grad_{case.name}_{precision}",
                passed=worst_all <= tol,
                detail=f"worst rel err {worst_all:.3e} over {n_all} elements ({len(seeds)} seeds, h={h:g}, tol={tol:g})",
                seconds=time.monotonic() - t0,
            ))
    return results


# ---------------------------------------------------------------------------
# analytic invariants
# ---------------------------------------------------------------------------

def _result(name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    t0 = time.monotonic()
    try:
        ok, detail = fn()
    except Exception as exc:  # a crash is a failure, not an abort
        ok, detail = False, f"raised {type(exc).__name__}: {exc}"
    return CheckResult(name=name, passed=ok, detail=detail, seconds=time.monotonic() - t0)


def run_invariant_checks() -> list[CheckResult]:
    rng = np.random.default_rng(123)
    checks: list[tuple[str, Callable[[], tuple[bool, str]]]] = []

    def inv(name):
        def deco(fn):
            checks.append((name, fn))
            return fn
        return deco

    @inv("warp_zero_disparity_identity")
    def _():
        src = Tensor(rng.uniform(0, 1, (2, 3, 6, 8)).astype(np.float32))
        zero = Tensor(np.zeros((2, 1, 6, 8), dtype=np.float32))
        for direction in (LEFT_FROM_RIGHT, RIGHT_FROM_LEFT):
            r = warp_horizontal(src, zero, direction)
            if not np.array_equal(r.warped.data, src.data):
                return False, f"{direction}: zero-disparity warp is not bit-identical"
            if not np.all(r.valid_mask.data == 1.0):
                return False, f"{direction}: zero-disparity mask is not all ones"
        return True, "bit-identical with full mask, both directions"

    @inv("warp_integer_shift")
    def _():
        B, C, H, W, k = 1, 2, 4, 8, 3
        src = Tensor(rng.uniform(0, 1, (B, C, H, W)).astype(np.float32))
        d = Tensor(np.full((B, 1, H, W), float(k), dtype=np.float32))
        r = warp_horizontal(src, d, LEFT_FROM_RIGHT)
        want = np.zeros_like(src.data)
        want[:, :, :, k:] = src.data[:, :, :, :W - k]
        if not np.array_equal(r.warped.data, want):
            return False, "shift-by-3 disagrees with the rolled source"
        count = float(r.valid_mask.data.sum())
        if count != B * H * (W - k):
            return False, f"mask counts {count}, expected {B * H * (W - k)}"
        return True, "rolled values match exactly; mask count exact"

    @inv("warp_masked_pixels_have_no_gradient")
    def _():
        B, C, H, W, k = 1, 1, 3, 6, 2
        src = Tensor(rng.uniform(0, 1, (B, C, H, W)).astype(np.float32))
        src.requires_grad = True
        d = Tensor(np.full((B, 1, H, W), float(k), dtype=np.float32))
        d.requires_grad = True
        r = warp_horizontal(src, d, LEFT_FROM_RIGHT)
        probe = Tensor(rng.uniform(0.5, 1.0, r.warped.data.shape).astype(np.float32))
        backward(T.tsum(T.mul(r.warped, probe)))
        if np.any(d.grad[:, :, :, :k] != 0.0):
            return False, "disparity gradient leaks into invalid pixels"
        if np.any(src.grad[:, :, :, W - 1:] != 0.0):
            return False, "source gradient leaks into never-sampled pixels"
        if np.any(r.warped.data[:, :, :, :k] != 0.0):
            return False, "invalid outputs are not exactly zero"
        return True, "invalid outputs zero; no gradient through masked pixels"

    @inv("ssim_self_is_one")
    def _():
        x = Tensor(rng.uniform(0.05, 0.95, (1, 3, 10, 12)).astype(np.float32))
        m = L.ssim(x, x, window=5)
        dev = float(np.abs(m.data - 1.0).max())
        return dev <= 1e-6, f"max |ssim(x,x) - 1| = {dev:.2e}"

    @inv("appearance_self_is_zero")
    def _():
        x = Tensor(rng.uniform(0.05, 0.95, (1, 3, 8, 8)).astype(np.float32))
        mask = Tensor(np.ones((1, 1, 8, 8), dtype=np.float32))
        v = float(L.appearance_loss(x, x, mask, L.LossWeights()).data)
        return v == 0.0, f"appearance(x, x) = {v!r}"

    @inv("smoothness_constant_is_zero_ramp_is_one")
    def _():
        img = Tensor(np.full((1, 3, 5, 7), 0.5, dtype=np.float32))
        flat = Tensor(np.full((1, 1, 5, 7), 2.0, dtype=np.float32))
        v0 = float(L.smoothness_loss(flat, img).data)
        if v0 != 0.0:
            return False, f"constant disparity gives {v0!r}, want exactly 0"
        ramp = Tensor(np.tile(np.arange(7, dtype=np.float32), (5, 1))[None, None])
        v1 = float(L.smoothness_loss(ramp, img).data)
        if v1 != 1.0:
            return False, f"unit ramp on a flat image gives {v1!r}, want exactly 1"
        return True, "flat field scores 0; unit ramp scores exactly 1"

    @inv("cycle_and_reconstruction_fixed_points")
    def _():
        a = Tensor(rng.uniform(0, 1, (1, 3, 6, 6)).astype(np.float32))
        b = Tensor(rng.uniform(0, 1, (1, 3, 6, 6)).astype(np.float32))
        bundle = L.StnForwardBundle(input_a=a, input_b=b, feat_a=a, feat_b=b,
                                    fake_b=b, fake_a=a, cyc_a=a, cyc_b=b,
                                    rec_a=a, rec_b=b)
        vc = float(L.cycle_loss(bundle).data)
        vr = float(L.reconstruction_loss(bundle).data)
        return (vc == 0.0 and vr == 0.0), f"cycle={vc!r} reconstruction={vr!r}"

    @inv("lr_consistency_fixed_point")
    def _():
        c = Tensor(np.full((1, 1, 4, 8), 1.5, dtype=np.float32))
        v = float(L.lr_consistency_loss(c, c, LEFT_FROM_RIGHT).data)
        if v != 0.0:
            return False, f"exactly-representable constant gives {v!r}"
        g = Tensor(np.full((1, 1, 4, 8), 1.3, dtype=np.float32))
        v2 = float(L.lr_consistency_loss(g, g, LEFT_FROM_RIGHT).data)
        return v2 <= 1e-6, f"generic constant gives {v2:.2e}"

    @inv("least_squares_game_at_half")
    def _():
        half = Tensor(np.full((1, 1, 4, 4), 0.5, dtype=np.float32))
        adv = L.adversarial_losses(half, half)
        ld, lg = float(adv.loss_d.data), float(adv.loss_g.data)
        return (ld == 0.5 and lg == 0.25), f"loss_d={ld!r} loss_g={lg!r}, want (0.5, 0.25)"

    @inv("bilinear_two_to_four")
    def _():
        x = Tensor(np.array([[[[0.0, 1.0]]]], dtype=np.float32))
        y = T.upsample_bilinear(x, 1, 4).data[0, 0, 0]
        want = np.array([0.0, 0.25, 0.75, 1.0], dtype=np.float32)
        return np.array_equal(y, want), f"got {y.tolist()}, want {want.tolist()}"

    @inv("bilinear_same_size_identity")
    def _():
        x = Tensor(rng.uniform(0, 1, (1, 2, 5, 6)).astype(np.float32))
        y = T.upsample_bilinear(x, 5, 6)
        return np.array_equal(y.data, x.data), "same-size resize must be bit-identical"

    @inv("instance_norm_statistics")
    def _():
        x = Tensor(rng.uniform(-1, 1, (2, 3, 9, 11)).astype(np.float32))
        y = T.instance_norm(x).data
        mu = np.abs(y.mean(axis=(2, 3))).max()
        var = np.abs(y.var(axis=(2, 3)) - 1.0).max()
        return (mu <= 1e-5 and var <= 1e-3), f"|mean| up to {mu:.2e}, |var-1| up to {var:.2e}"

    @inv("conv_shape_formulas")
    def _():
        for (h, w, k, s, p) in [(8, 8, 3, 1, 1), (8, 8, 4, 2, 1), (9, 11, 7, 1, 3), (8, 10, 5, 2, 2)]:
            x = Tensor(np.zeros((1, 1, h, w), dtype=np.float32))
            wt = Tensor(np.zeros((1, 1, k, k), dtype=np.float32))
            out = T.conv2d(x, wt, None, stride=s, padding=p)
            eh, ew = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
            if out.data.shape[2:] != (eh, ew):
                return False, f"conv k{k} s{s} p{p}: got {out.data.shape[2:]}, want {(eh, ew)}"
        for (h, w, k, s, p, op) in [(4, 5, 3, 2, 1, 1), (3, 3, 4, 2, 1, 0)]:
            x = Tensor(np.zeros((1, 1, h, w), dtype=np.float32))
            wt = Tensor(np.zeros((1, 1, k, k), dtype=np.float32))
            out = T.conv_transpose2d(x, wt, None, stride=s, padding=p, output_padding=op)
            eh = (h - 1) * s - 2 * p + k + op
            ew = (w - 1) * s - 2 * p + k + op
            if out.data.shape[2:] != (eh, ew):
                return False, f"convT k{k} s{s}: got {out.data.shape[2:]}, want {(eh, ew)}"
        return True, "plain and transposed shapes match the closed forms"

    @inv("avg_pool_preserves_constants")
    def _():
        x = Tensor(np.full((1, 2, 6, 8), 0.625, dtype=np.float32))
        y = T.avg_pool(x, 2)
        return np.all(y.data == np.float32(0.625)), "2x2 mean of a constant must stay exact"

    @inv("masked_mean_counts")
    def _():
        vals = Tensor(np.ones((1, 2, 4, 4), dtype=np.float32))
        m = np.zeros((1, 1, 4, 4), dtype=np.float32)
        m[:, :, :2, :] = 1.0
        v = float(masked_mean(vals, Tensor(m)).data)
        if v != 1.0:
            return False, f"half mask of ones gives {v!r}"
        v0 = float(masked_mean(vals, Tensor(np.zeros_like(m))).data)
        return v0 == 0.0, f"empty mask gives {v0!r}, want 0"

    return [_result(f"invariant_{name}", fn) for name, fn in checks]


# ---------------------------------------------------------------------------
# classical-matcher oracle
# ---------------------------------------------------------------------------

def _oracle_scenes(identity: bool) -> list:
    scenes = []
    for seed, disps in ((11, (2.0, 4.0)), (12, (3.0,)), (13, (2.5, 5.0))):
        if identity:
            spec = SyntheticSceneSpec(texture_seed=seed, layer_disparities=disps)
        else:
            spec = nir_like_spectral_spec(texture_seed=seed, layer_disparities=disps)
        scenes.append(render_scene(spec, (64, 64)))
    return scenes


def oracle_identity_accuracy() -> tuple[float, float]:
    """(fraction within 1 px, rmse) of block matching on same-spectrum scenes,
    over visible pixels."""
    total = good = 0
    sq = 0.0
    for scene in _oracle_scenes(identity=True):
        left = scene.pair.left.data[0]
        right = scene.pair.right.data[0]
        gt = scene.pair.gt_disparity.data[0, 0]
        disp, valid = block_match(left, right, max_disparity=8, window=7)
        m = scene.visible_left & valid
        err = np.abs(disp - gt)[m]
        total += err.size
        good += int((err <= 1.0).sum())
        sq += float((err ** 2).sum())
    return good / total, float(np.sqrt(sq / total))


def oracle_spectral_rmse() -> float:
    sq = 0.0
    total = 0
    for scene in _oracle_scenes(identity=False):
        left = scene.pair.left.data[0]
        right = scene.pair.right.data[0]
        gt = scene.pair.gt_disparity.data[0, 0]
        disp, valid = block_match(left, right, max_disparity=8, window=7)
        m = scene.visible_left & valid
        sq += float(((disp - gt)[m] ** 2).sum())
        total += int(m.sum())
    return float(np.sqrt(sq / total))


def run_oracle_checks() -> list[CheckResult]:
    results = []
    t0 = time.monotonic()
    frac, rmse_id = oracle_identity_accuracy()
    results.append(CheckResult(
        name="oracle_identity_within_1px",
        passed=frac >= 0.95,
        detail=f"{frac * 100:.2f}% of visible pixels within 1 px (rmse {rmse_id:.3f})",
        seconds=time.monotonic() - t0,
    ))
    t0 = time.monotonic()
    rmse_sp = oracle_spectral_rmse()
    ratio = rmse_sp / max(rmse_id, 1e-9)
    results.append(CheckResult(
        name="oracle_spectral_degradation",
        passed=ratio >= 2.0,
        detail=f"cross-spectral rmse {rmse_sp:.3f} vs same-spectrum {rmse_id:.3f} ({ratio:.1f}x)",
        seconds=time.monotonic() - t0,
    ))
    return results


# ---------------------------------------------------------------------------
# training-schedule audit: each step touches exactly its own networks
# ---------------------------------------------------------------------------

STN_SET_NAMES = ("f", "g_a", "g_b")
DISCRIMINATOR_SET_NAMES = ("d_a", "d_b")


def run_schedule_audit(joint_iterations: int = 20,
                       warmup_iterations: int = 5) -> CheckResult:
    """Drive audited iterations on a tiny model and random image batches and
    confirm the update pattern: discriminators only in step 1, encoder and
    generators only in steps 2 and 4, the matcher only in step 3, the matcher
    untouched during warmup, and translation gradients exactly zero while the
    matcher updates."""
    from .config import TrainConfig
    from .networks import build_networks
    from .optim import PHASE_JOINT, PHASE_WARMUP, run_iteration

    t0 = time.monotonic()
    cfg = TrainConfig()
    cfg.image_height = cfg.image_width = 16
    cfg.batch_size = 2
    cfg.eta = 0.2
    cfg.network.base_width = 4
    cfg.network.num_residual_blocks = 1
    cfg.network.num_smn_scales = 2
    cfg.use_aux = True
    nets = build_networks(cfg.network, cfg.input_mode, seed=0, use_stn=True)
    rng = np.random.default_rng([77, 3])
    problems: list[str] = []

    def batch():
        left = Tensor(rng.uniform(0.1, 0.9, (2, 3, 16, 16)).astype(np.float32))
        right = Tensor(rng.uniform(0.1, 0.9, (2, 3, 16, 16)).astype(np.float32))
        return left, right

    expected_warmup = {"discriminator": DISCRIMINATOR_SET_NAMES,
                       "generator": STN_SET_NAMES}
    expected_joint = dict(expected_warmup)
    expected_joint["matcher"] = ("smn",)
    expected_joint["auxiliary"] = STN_SET_NAMES

    for i in range(warmup_iterations):
        before = {k: p.data.copy() for k, p in nets.smn.params.items()}
        left, right = batch()
        log = run_iteration(left, right, nets, cfg, PHASE_WARMUP, audit=True)
        if log.updated != expected_warmup:
            problems.append(f"warmup iter {i}: updated {log.updated}")
        if any(not np.array_equal(before[k], p.data)
               for k, p in nets.smn.params.items()):
            problems.append(f"warmup iter {i}: matcher parameters moved")

    for i in range(joint_iterations):
        left, right = batch()
        log = run_iteration(left, right, nets, cfg, PHASE_JOINT, audit=True)
        if log.updated != expected_joint:
            problems.append(f"joint iter {i}: updated {log.updated}")
        if log.stn_grad_max_matcher_step != 0.0:
            problems.append(f"joint iter {i}: translation grad "
                            f"{log.stn_grad_max_matcher_step} during matcher step")

    detail = (f"{warmup_iterations} warmup + {joint_iterations} joint iterations; "
              + (f"{len(problems)} violations: " + "; ".join(problems[:3])
                 if problems else "update pattern exact, matcher-step translation grads all 0.0"))
    return CheckResult(name="schedule_step_isolation", passed=not problems,
                       detail=detail, seconds=time.monotonic() - t0)


def run_checks(subset: str = "all") -> list[CheckResult]:
    if subset not in ("all", "grad", "invariants", "oracle"):
        raise ValueError(f"unknown check subset {subset!r}")
    results: list[CheckResult] = []
    if subset in ("all", "grad"):
        results += run_gradient_checks("float32")
        results += run_gradient_checks("float64")
    if subset in ("all", "invariants"):
        results += run_invariant_checks()
    if subset in ("all", "oracle"):
        results += run_oracle_checks()
    if subset == "all":
        results.append(run_schedule_audit())
    return results
