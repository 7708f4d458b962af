"""Adam with cosine annealing, teacher pretraining and student distillation."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import GradTape, backward
from .config import ExtractorConfig, LossConfig, NetConfig, TrainConfig
from .data import DatasetManifest, derive_seed, load_split
from .errors import ContractViolation
from .losses import LossBundle, loss_all, loss_et, loss_kl, loss_nc, loss_pixel
from .metrics import score_images
from .net import Model, build_network, forward, unified_size

log = logging.getLogger(__name__)


def cosine_lr(step: int, total: int, lr0: float = 1e-4, lr_min: float = 1e-6) -> float:
    if total < 1 or not 0 <= step <= total:
        raise ContractViolation(f"cosine_lr: need 0 <= step <= total and total >= 1, got {step}/{total}")
    return lr_min + 0.5 * (lr0 - lr_min) * (1 + math.cos(math.pi * step / total))


class NonFiniteGradient(FloatingPointError):
    pass


class TrainingAborted(RuntimeError):
    """Raised on a non-finite loss; carries the last good model and the log."""

    def __init__(self, message, model, log):
        super().__init__(message)
        self.model = model
        self.log = log


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float, tc: TrainConfig = TrainConfig()):
    """One bias-corrected Adam update with L2 weight decay folded into the gradient.

    Returns new parameter arrays; the inputs are not modified.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    b1, b2 = tc.beta1, tc.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        g = np.zeros_like(p) if g is None else g
        if tc.weight_decay:
            g = g + np.float32(tc.weight_decay) * p
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name] = m.astype(np.float32)
        state.v[name] = v.astype(np.float32)
        step = lr * (state.m[name] / c1) / (np.sqrt(state.v[name] / c2) + tc.eps)
        out[name] = (p - step).astype(np.float32)
    return out, state


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)

    def append(self, record: dict):
        if record.get("kind") != "eval" and self.records:
            last = [r["step"] for r in self.records if r.get("kind") != "eval"]
            if last and record["step"] <= last[-1]:
                raise ContractViolation("TrainLog steps must be strictly increasing")
        self.records.append(record)

    @property
    def steps(self) -> list[dict]:
        return [r for r in self.records if "l_all" in r or "loss" in r]

    @property
    def evals(self) -> list[dict]:
        return [r for r in self.records if "psnr" in r]

    def to_jsonl(self) -> str:
        return "".join(json.dumps({k: v for k, v in r.items() if k != "kind"}) + "\n"
                       for r in self.records)

    def write(self, path):
        with open(path, "w") as f:
            f.write(self.to_jsonl())


def sample_batch(clean, degraded, batch: int, patch: int, seed: int):
    """Random crops; returns ``(degraded, clean)`` batches ``[B, 3, patch, patch]``."""
    rng = np.random.default_rng(seed)
    n, _, h, w = clean.shape
    if patch > h or patch > w:
        raise ContractViolation(f"patch {patch} larger than images {h}x{w}")
    idx = rng.integers(0, n, size=batch)
    ys = rng.integers(0, h - patch + 1, size=batch)
    xs = rng.integers(0, w - patch + 1, size=batch)
    deg = np.stack([degraded[i, :, y:y + patch, x:x + patch] for i, y, x in zip(idx, ys, xs)])
    cln = np.stack([clean[i, :, y:y + patch, x:x + patch] for i, y, x in zip(idx, ys, xs)])
    return deg, cln


def _check_patch(cfg: NetConfig, patch: int):
    div = 2 ** (cfg.levels - 1)
    if patch % div:
        raise ContractViolation(f"patch {patch} not divisible by {div} required by a {cfg.levels}-level net")


def _load_train(manifest: DatasetManifest):
    idx, clean, degraded = load_split(manifest, "train")
    if not idx:
        raise ContractViolation("training split is empty")
    return clean, degraded


def _eval_record(model, heldout, step):
    if heldout is None or not len(heldout[0]):
        return None
    scores = score_images(model, *heldout)
    return {"kind": "eval", "step": step,
            "psnr": float(np.mean([s["psnr"] for s in scores])),
            "ssim": float(np.mean([s["ssim"] for s in scores]))}


def _watch(tape, model):
    return {name: tape.watch(p) for name, p in model.params.items()}


def _grads_by_name(watched, gmap):
    return {name: gmap[t] for name, t in watched.items() if t in gmap}


def _update(model, grads, state, lr, tc, step, tlog):
    try:
        return adam_step(model.params, grads, state, lr, tc)
    except NonFiniteGradient as exc:
        raise TrainingAborted(f"step {step}: {exc}", model, tlog) from None


def pretrain_teacher(cfg: NetConfig, manifest: DatasetManifest, tc: TrainConfig = TrainConfig(),
                     role: str = "teacherA"):
    """Plain mean-L1 restoration training on degraded -> clean pairs."""
    _check_patch(cfg, tc.patch)
    clean, degraded = _load_train(manifest)
    model = build_network(cfg, derive_seed(tc.seed, 0x7EAC), role)
    state = AdamState()
    tlog = TrainLog()
    t0 = time.perf_counter()
    for step in range(tc.steps):
        lr = cosine_lr(step, tc.steps, tc.lr, tc.lr_min)
        deg, cln = sample_batch(clean, degraded, tc.batch, tc.patch, derive_seed(tc.seed, 1, step))
        tape = GradTape()
        watched = _watch(tape, model)
        loss = loss_pixel(forward(model, deg, watched).reconstruction, cln)
        if not np.isfinite(loss.item()):
            raise TrainingAborted(f"non-finite loss at step {step}", model, tlog)
        grads = _grads_by_name(watched, backward(loss))
        model.params, state = _update(model, grads, state, lr, tc, step, tlog)
        tlog.append({"step": step, "lr": lr, "loss": loss.item(),
                     "wall": round(time.perf_counter() - t0, 3)})
        if step % 100 == 0:
            log.info("pretrain step %d loss %.5f", step, loss.item())
    return model, tlog


def distill_losses(student_fs, ta_fs, tb_fs, student_cfg: NetConfig, size,
                   loss_cfg: LossConfig = LossConfig(), ext: ExtractorConfig = ExtractorConfig()) -> LossBundle:
    """All five losses for one batch; disabled terms are exact zeros."""
    zero = ag.Tensor(0.0)
    l_pixel = loss_pixel(student_fs.reconstruction, tb_fs.reconstruction)
    l_kl = loss_kl(student_fs.reconstruction, ta_fs.reconstruction) if loss_cfg.alpha1 else zero
    use_nc = loss_cfg.use_nc and loss_cfg.alpha2 > 0
    use_et = loss_cfg.use_et and loss_cfg.alpha2 > 0
    usize = unified_size(student_cfg, size)
    l_nc = loss_nc(student_fs.encoder, ta_fs.encoder, student_cfg, usize, ext) if use_nc else zero
    l_et = loss_et(student_fs.decoder, tb_fs.decoder, student_cfg, usize, ext) if use_et else zero
    return loss_all(l_pixel, l_kl, l_nc, l_et, loss_cfg.alpha1, loss_cfg.alpha2)


def distill(teacher_a: Model, teacher_b: Model | None, student_cfg: NetConfig, manifest: DatasetManifest,
            tc: TrainConfig = TrainConfig(), loss_cfg: LossConfig = LossConfig(),
            ext: ExtractorConfig = ExtractorConfig()):
    """Train a fresh student from frozen teachers.

    Teacher B defaults to teacher A's weights. It sees the clean patch, or
    the degraded one when ``loss_cfg.teacherB_input == "degraded"``.
    """
    if teacher_a.is_shell or (teacher_b is not None and teacher_b.is_shell):
        raise ContractViolation("teacher checkpoints must hold parameters")
    for name, t in (("teacher A", teacher_a), ("teacher B", teacher_b)):
        if t is not None and t.cfg.levels != student_cfg.levels:
            raise ContractViolation(f"{name} has {t.cfg.levels} levels, student has {student_cfg.levels}")
    _check_patch(student_cfg, tc.patch)
    clean, degraded = _load_train(manifest)
    _, h_clean, h_deg = load_split(manifest, "heldout")
    heldout = (h_clean, h_deg)
    shared_b = teacher_b is None
    teacher_b = teacher_a if shared_b else teacher_b

    student = build_network(student_cfg, derive_seed(tc.seed, 0x57D), "student")
    state = AdamState()
    tlog = TrainLog()
    t0 = time.perf_counter()
    for step in range(tc.steps):
        lr = cosine_lr(step, tc.steps, tc.lr, tc.lr_min)
        deg, cln = sample_batch(clean, degraded, tc.batch, tc.patch, derive_seed(tc.seed, 2, step))
        ta = forward(teacher_a, deg)
        if loss_cfg.teacherB_input == "degraded" and shared_b:
            tb = ta
        else:
            tb = forward(teacher_b, cln if loss_cfg.teacherB_input == "clean" else deg)
        tape = GradTape()
        watched = _watch(tape, student)
        sfs = forward(student, deg, watched)
        bundle = distill_losses(sfs, ta, tb, student_cfg, (tc.patch, tc.patch), loss_cfg, ext)
        values = bundle.values()
        if not all(np.isfinite(v) for v in values.values()):
            raise TrainingAborted(f"non-finite loss at step {step}: {values}", student, tlog)
        grads = _grads_by_name(watched, backward(bundle.l_all))
        student.params, state = _update(student, grads, state, lr, tc, step, tlog)
        tlog.append({"step": step, "lr": lr, **values, "wall": round(time.perf_counter() - t0, 3)})
        if tc.eval_every and (step + 1) % tc.eval_every == 0:
            rec = _eval_record(student, heldout, step)
            if rec:
                tlog.append(rec)
                log.info("distill step %d psnr %.3f", step, rec["psnr"])
    return student, tlog
