"""Distillation objectives.

Every KL-form loss first turns its operands into distributions with a
softmax over the last axis, then sums ``p * (log p - log q)`` over all rows
of one image and averages over the batch.
"""
from __future__ import annotations

from dataclasses import dataclass

from . import autograd as ag
from .autograd import Tensor, as_tensor
from .config import ExtractorConfig, NetConfig
from .errors import ContractViolation
from .net import scm
from .nss import brisque_features, piqe_features

PROB_FLOOR = 1e-8


@dataclass
class LossBundle:
    l_nc: Tensor
    l_et: Tensor
    l_kl: Tensor
    l_pixel: Tensor
    l_all: Tensor

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k).item() for k in ("l_nc", "l_et", "l_kl", "l_pixel", "l_all")}


def kl_rows(p, q, n_images: int = 1) -> Tensor:
    """``sum p log(p/q)`` over all elements of already-normalised rows."""
    p, q = as_tensor(p), as_tensor(q)
    if p.shape != q.shape:
        raise ContractViolation(f"KL operands differ in shape: {p.shape} vs {q.shape}")
    terms = ag.mul(p, ag.sub(ag.safe_log(p, PROB_FLOOR), ag.safe_log(q, PROB_FLOOR)))
    return ag.mul(ag.sum_(terms), 1.0 / n_images)


def _softmax_kl(s: Tensor, t: Tensor, image_rank: int) -> Tensor:
    n = 1
    for d in s.shape[: s.ndim - image_rank]:
        n *= d
    return kl_rows(ag.softmax(s, axis=-1), ag.softmax(t, axis=-1), n)


def _check_levels(s, t):
    if len(s) != len(t):
        raise ContractViolation(f"level count mismatch: student {len(s)} vs teacher {len(t)}")


def loss_nc(student_enc, teacher_enc, cfg: NetConfig, size, ext: ExtractorConfig = ExtractorConfig()) -> Tensor:
    _check_levels(student_enc, teacher_enc)
    p = ext.mscn_params()
    total = None
    for s, t in zip(student_enc, teacher_enc):
        fs = brisque_features(scm(s, cfg, size), ext.scales, p)
        ft = brisque_features(scm(as_tensor(t).detach(), cfg, size), ext.scales, p)
        term = _softmax_kl(fs, ft, 2)
        total = term if total is None else ag.add(total, term)
    return total


def loss_et(student_dec, teacher_dec, cfg: NetConfig, size, ext: ExtractorConfig = ExtractorConfig()) -> Tensor:
    _check_levels(student_dec, teacher_dec)
    p = ext.mscn_params()
    total = None
    for s, t in zip(student_dec, teacher_dec):
        ss = piqe_features(scm(s, cfg, size), ext.piqe_block, p).scores
        st = piqe_features(scm(as_tensor(t).detach(), cfg, size), ext.piqe_block, p).scores
        flat = lambda x: ag.reshape(x, (*x.shape[:-2], x.shape[-2] * x.shape[-1]))
        term = _softmax_kl(flat(ss), flat(st), 2)
        total = term if total is None else ag.add(total, term)
    return total


def loss_kl(s_r, ta_r) -> Tensor:
    s_r, ta_r = as_tensor(s_r), as_tensor(ta_r).detach()
    if s_r.shape != ta_r.shape:
        raise ContractViolation(f"loss_kl: shape mismatch {s_r.shape} vs {ta_r.shape}")
    flat = lambda x: ag.reshape(x, (*x.shape[:-2], x.shape[-2] * x.shape[-1]))
    return _softmax_kl(flat(s_r), flat(ta_r), 2)


def loss_pixel(s_r, tb_r) -> Tensor:
    s_r, tb_r = as_tensor(s_r), as_tensor(tb_r).detach()
    if s_r.shape != tb_r.shape:
        raise ContractViolation(f"loss_pixel: shape mismatch {s_r.shape} vs {tb_r.shape}")
    return ag.mean(ag.abs_(ag.sub(s_r, tb_r)))


def loss_all(l_pixel, l_kl, l_nc, l_et, alpha1: float = 0.5, alpha2: float = 0.1) -> LossBundle:
    """``L_pixel + alpha1 * L_KL + alpha2 * (L_NC + L_ET)``."""
    l_pixel, l_kl, l_nc, l_et = (as_tensor(v) for v in (l_pixel, l_kl, l_nc, l_et))
    total = ag.add(l_pixel, ag.add(ag.mul(l_kl, alpha1), ag.mul(ag.add(l_nc, l_et), alpha2)))
    return LossBundle(l_nc, l_et, l_kl, l_pixel, total)
