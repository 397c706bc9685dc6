"""Adam updates and the alternating four-step training schedule.

Each joint iteration runs four fresh forward/backward passes on the same
batch, updating one group of networks at a time:

  1. discriminators, on detached translations;
  2. encoder + generators, via cycle / same-spectrum / adversarial terms;
  3. the matcher, with translations frozen;
  4. encoder + generators again, via the warp-consistency term with the
     matcher's disparities frozen.

Warmup epochs run steps 1-2 only (the matcher is never touched); a
matcher-only phase runs step 3 alone with the original images as supervision.
Every step clears all leftover gradients so nothing bleeds across steps.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import losses as L
from . import tensor as T
from .config import TrainConfig
from .data import SpectralPair, augment_flip, collate, prepare_smn_inputs
from .networks import (Networks, ParameterSet, discriminate, f_encode, g_decode,
                       smn_predict, stn_forward)
from .tensor import Tensor, backward, no_grad
from .warp import LEFT_FROM_RIGHT, RIGHT_FROM_LEFT, warp_horizontal

PHASE_WARMUP = "warmup"
PHASE_JOINT = "joint"
PHASE_SMN_ONLY = "smn_only"

STEP_DISCRIMINATOR = "discriminator"
STEP_GENERATOR = "generator"
STEP_MATCHER = "matcher"
STEP_AUXILIARY = "auxiliary"


class TrainingAborted(RuntimeError):
    """Raised when a loss goes non-finite; training cannot continue."""


@dataclass
class StepLog:
    phase: str
    loss_d: float | None = None
    loss_g: float | None = None
    loss_smn: float | None = None
    loss_aux: float | None = None
    grad_norms: dict[str, float] = field(default_factory=dict)
    # audit-only fields (populated when run_iteration(audit=True)):
    updated: dict[str, tuple[str, ...]] = field(default_factory=dict)
    stn_grad_max_matcher_step: float | None = None


def adam_update(ps: ParameterSet, lr: float, beta1: float = 0.9,
                beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam step over every parameter in the set.

    Moments update in place; gradients are consumed (cleared) afterwards.
    Parameters that received no gradient are skipped with a warning.
    """
    ps.step_count += 1
    t = ps.step_count
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for key, p in ps.params.items():
        g = p.grad
        if g is None:
            warnings.warn(f"{ps.name}/{key} has no gradient; skipping its update")
            continue
        m = ps.m[key]
        v = ps.v[key]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(p.data.dtype)
    ps.zero_grads()


def _check_finite(loss: Tensor, step: str) -> float:
    v = float(loss.data)
    if not np.isfinite(v):
        T.active_tape().clear()
        raise TrainingAborted(f"{step} loss became non-finite ({v})")
    return v


def _clear_all(nets: Networks) -> None:
    for s in nets.all_sets():
        s.zero_grads()


def _snapshot(nets: Networks, audit: bool):
    if not audit:
        return None
    return {s.name: {k: p.data.copy() for k, p in s.params.items()} for s in nets.all_sets()}


def _changed_sets(nets: Networks, before) -> tuple[str, ...]:
    out = []
    for s in nets.all_sets():
        prior = before[s.name]
        if any(not np.array_equal(prior[k], p.data) for k, p in s.params.items()):
            out.append(s.name)
    return tuple(out)


def _record_norms(log: StepLog, step: str, sets: list[ParameterSet]) -> None:
    for s in sets:
        log.grad_norms[f"{step}.{s.name}"] = s.grad_norm()


def run_iteration(left: Tensor, right: Tensor, nets: Networks, cfg: TrainConfig,
                  phase: str, trans_left: Tensor | None = None,
                  trans_right: Tensor | None = None, audit: bool = False) -> StepLog:
    """Run one training iteration on a batch.

    left/right feed the matcher steps; trans_left/trans_right (defaulting to
    the same batch, possibly mirror-augmented by the caller) feed the
    translation steps, where flips are safe because no correspondence is used.
    """
    if phase not in (PHASE_WARMUP, PHASE_JOINT, PHASE_SMN_ONLY):
        raise ValueError(f"unknown phase {phase!r}")
    if phase != PHASE_SMN_ONLY and not nets.has_stn:
        raise ValueError(f"phase {phase!r} needs the translation networks")
    w = cfg.weights
    lr, b1, b2, eps = cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
    tl = trans_left if trans_left is not None else left
    tr = trans_right if trans_right is not None else right
    log = StepLog(phase=phase)
    input_mode = cfg.input_mode if nets.has_stn else "ori"

    if phase in (PHASE_WARMUP, PHASE_JOINT):
        # -- step 1: discriminators judge real images against frozen fakes
        before = _snapshot(nets, audit)
        with no_grad():
            fake_b = g_decode(f_encode(tl, nets.f), nets.g_b)
            fake_a = g_decode(f_encode(tr, nets.f), nets.g_a)
        adv_a = L.adversarial_losses(discriminate(tl, nets.d_a), discriminate(fake_a, nets.d_a))
        adv_b = L.adversarial_losses(discriminate(tr, nets.d_b), discriminate(fake_b, nets.d_b))
        loss_d = L.stn_discriminator_total(adv_a.loss_d, adv_b.loss_d, w)
        log.loss_d = _check_finite(loss_d, STEP_DISCRIMINATOR)
        backward(loss_d)
        _record_norms(log, STEP_DISCRIMINATOR, [nets.d_a, nets.d_b])
        adam_update(nets.d_a, lr, b1, b2, eps)
        adam_update(nets.d_b, lr, b1, b2, eps)
        _clear_all(nets)
        if audit:
            log.updated[STEP_DISCRIMINATOR] = _changed_sets(nets, before)

        # -- step 2: encoder + generators, discriminators held fixed
        before = _snapshot(nets, audit)
        bundle = stn_forward(tl, tr, nets)
        l_adv_g = T.add(L.generator_adversarial_loss(discriminate(bundle.fake_a, nets.d_a)),
                        L.generator_adversarial_loss(discriminate(bundle.fake_b, nets.d_b)))
        loss_g = L.stn_generator_total(L.cycle_loss(bundle), L.reconstruction_loss(bundle),
                                       l_adv_g, w)
        log.loss_g = _check_finite(loss_g, STEP_GENERATOR)
        backward(loss_g)
        _record_norms(log, STEP_GENERATOR, nets.stn_generator_sets())
        adam_update(nets.f, lr, b1, b2, eps)
        adam_update(nets.g_a, lr, b1, b2, eps)
        adam_update(nets.g_b, lr, b1, b2, eps)
        _clear_all(nets)  # discriminators accumulated grads here; drop them unused
        if audit:
            log.updated[STEP_GENERATOR] = _changed_sets(nets, before)

    if phase in (PHASE_JOINT, PHASE_SMN_ONLY):
        # -- step 3: the matcher, translations frozen
        before = _snapshot(nets, audit)
        fnl = fvr = None
        if nets.has_stn:
            with no_grad():
                fnl = g_decode(f_encode(left, nets.f), nets.g_b)
                fvr = g_decode(f_encode(right, nets.f), nets.g_a)
        li, ri = prepare_smn_inputs(left, right, input_mode,
                                    fake_nir_left=fnl, fake_vis_right=fvr)
        scales = smn_predict(li, ri, nets.smn, nets.spec, cfg.eta)
        loss_s = L.smn_total(left, right, scales, w,
                             supervision_mode=cfg.supervision_mode,
                             fake_nir_left=fnl, fake_vis_right=fvr)
        log.loss_smn = _check_finite(loss_s, STEP_MATCHER)
        backward(loss_s)
        _record_norms(log, STEP_MATCHER, [nets.smn])
        if audit and nets.has_stn:
            peak = 0.0
            for s in nets.stn_generator_sets() + [nets.d_a, nets.d_b]:
                for p in s.params.values():
                    if p.grad is not None:
                        peak = max(peak, float(np.abs(p.grad).max()))
            log.stn_grad_max_matcher_step = peak
        adam_update(nets.smn, lr, b1, b2, eps)
        _clear_all(nets)
        if audit:
            log.updated[STEP_MATCHER] = _changed_sets(nets, before)

    if phase == PHASE_JOINT and cfg.use_aux:
        # -- step 4: encoder + generators again, disparities frozen
        before = _snapshot(nets, audit)
        with no_grad():
            fnl_c = g_decode(f_encode(left, nets.f), nets.g_b)
            fvr_c = g_decode(f_encode(right, nets.f), nets.g_a)
            li, ri = prepare_smn_inputs(left, right, input_mode,
                                        fake_nir_left=fnl_c, fake_vis_right=fvr_c)
            disp_l, disp_r = smn_predict(li, ri, nets.smn, nets.spec, cfg.eta)[0]
        fnl = g_decode(f_encode(left, nets.f), nets.g_b)
        fvr = g_decode(f_encode(right, nets.f), nets.g_a)
        wl = warp_horizontal(right, disp_l, LEFT_FROM_RIGHT)
        wr = warp_horizontal(left, disp_r, RIGHT_FROM_LEFT)
        loss_aux = L.auxiliary_loss(fnl, fvr, wl.warped, wl.valid_mask,
                                    wr.warped, wr.valid_mask, w)
        log.loss_aux = _check_finite(loss_aux, STEP_AUXILIARY)
        backward(loss_aux)
        _record_norms(log, STEP_AUXILIARY, nets.stn_generator_sets())
        adam_update(nets.f, lr, b1, b2, eps)
        adam_update(nets.g_a, lr, b1, b2, eps)
        adam_update(nets.g_b, lr, b1, b2, eps)
        _clear_all(nets)
        if audit:
            log.updated[STEP_AUXILIARY] = _changed_sets(nets, before)

    return log


# ---------------------------------------------------------------------------
# the epoch loop
# ---------------------------------------------------------------------------

LOSS_TABLE_HEADER = ("epoch", "iteration", "phase", "loss_d", "loss_g", "loss_smn", "loss_aux")


def _fmt(v: float | None) -> str:
    return "-" if v is None else repr(v)


def loss_table_rows(logs: list[tuple[int, int, StepLog]]) -> list[str]:
    rows = ["\t".join(LOSS_TABLE_HEADER)]
    for epoch, it, lg in logs:
        rows.append("\t".join([str(epoch), str(it), lg.phase, _fmt(lg.loss_d),
                               _fmt(lg.loss_g), _fmt(lg.loss_smn), _fmt(lg.loss_aux)]))
    return rows


@dataclass
class TrainResult:
    logs: list[tuple[int, int, StepLog]]  # (epoch, iteration, log)
    epochs_run: int
    global_step: int

    def loss_table(self) -> str:
        return "\n".join(loss_table_rows(self.logs)) + "\n"


def phase_for_epoch(epoch: int, cfg: TrainConfig, nets: Networks) -> str:
    if not nets.has_stn:
        return PHASE_SMN_ONLY
    return PHASE_WARMUP if epoch < cfg.warmup_epochs else PHASE_JOINT


def train(dataset: list[SpectralPair], nets: Networks, cfg: TrainConfig,
          out_dir: str | None = None, start_epoch: int = 0,
          global_step: int = 0, quiet: bool = True) -> TrainResult:
    """Run the full schedule over the dataset.

    Shuffling and mirror augmentation draw from per-epoch streams seeded by
    (cfg.seed, epoch), so a run is reproducible from its config alone and a
    resumed run continues the exact stream of the original.
    """
    from .checkpoint import save_checkpoint  # deferred: checkpoint imports config

    cfg.validate()
    if not dataset:
        raise ValueError("empty dataset")
    total_epochs = cfg.warmup_epochs + cfg.joint_epochs
    logs: list[tuple[int, int, StepLog]] = []
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    try:
        for epoch in range(start_epoch, total_epochs):
            phase = phase_for_epoch(epoch, cfg, nets)
            order_rng = np.random.default_rng([cfg.seed, 1000 + epoch])
            flip_rng = np.random.default_rng([cfg.seed, 5000 + epoch])
            perm = order_rng.permutation(len(dataset))
            ep_logs: list[StepLog] = []
            for it, lo in enumerate(range(0, len(perm), cfg.batch_size)):
                batch = [dataset[i] for i in perm[lo:lo + cfg.batch_size]]
                left, right, _ = collate(batch)
                tl = tr = None
                if nets.has_stn and cfg.flip_probability > 0.0:
                    flipped = [augment_flip(p, cfg.flip_probability, flip_rng) for p in batch]
                    tl, tr, _ = collate(flipped)
                try:
                    lg = run_iteration(left, right, nets, cfg, phase,
                                       trans_left=tl, trans_right=tr)
                except TrainingAborted as exc:
                    raise TrainingAborted(f"epoch {epoch} iteration {it}: {exc}") from exc
                global_step += 1
                logs.append((epoch, it, lg))
                ep_logs.append(lg)
            if out_dir is not None:
                save_checkpoint(os.path.join(out_dir, "last.ckpt"), nets, cfg,
                                epoch=epoch + 1, global_step=global_step)
            if not quiet:
                print(f"epoch {epoch} [{phase}] " + _epoch_summary(ep_logs), flush=True)
    finally:
        if out_dir is not None and logs:
            with open(os.path.join(out_dir, "losses.tsv"), "w", encoding="utf-8") as f:
                f.write("\n".join(loss_table_rows(logs)) + "\n")

    if out_dir is not None:
        save_checkpoint(os.path.join(out_dir, "final.ckpt"), nets, cfg,
                        epoch=total_epochs, global_step=global_step)
    return TrainResult(logs=logs, epochs_run=max(0, total_epochs - start_epoch),
                       global_step=global_step)


def _epoch_summary(ep_logs: list[StepLog]) -> str:
    parts = []
    for attr in ("loss_d", "loss_g", "loss_smn", "loss_aux"):
        vals = [getattr(lg, attr) for lg in ep_logs if getattr(lg, attr) is not None]
        if vals:
            parts.append(f"{attr}={sum(vals) / len(vals):.4f}")
    return " ".join(parts) if parts else "(no losses)"
