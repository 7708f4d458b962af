"""The gradient-integrity suite behind ``slkd gradcheck``.

Every primitive is checked against central differences on inputs kept
away from kinks, then the full distillation objective is checked through a
2-level toy student on 16x16 patches.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import Tensor, gradient_check

PRIMITIVE_TOL = 1e-4
COMPOSITE_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float
    seconds: float

    @property
    def ok(self) -> bool:
        return self.error < self.tol


def _away_from_kinks(rng, shape, lo=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < lo, np.sign(x + 1e-12) * lo * 2, x)


def _weighted(f, x, rng):
    w = rng.normal(size=f(Tensor(x)).shape)
    return lambda t: ag.sum_(ag.mul(f(t), w))


def _unary_cases():
    rng = np.random.default_rng(1)
    x = _away_from_kinks(rng, (2, 3, 4))
    pos = np.abs(x) + 0.5
    clamp_x = np.where(np.abs(x - 0.1) < 0.05, x + 0.2, x)
    table = [
        ("neg", ag.neg, x), ("abs", ag.abs_, x), ("log", ag.log, pos), ("exp", ag.exp, x),
        ("sqrt", ag.sqrt, pos), ("square", ag.square, x),
        ("power-const", lambda t: ag.power(t, 2.5), pos),
        ("relu", ag.relu, x), ("gelu", ag.gelu, x),
        ("clamp-min", lambda t: ag.clamp_min(t, 0.1), clamp_x),
        ("softmax-axis", lambda t: ag.softmax(t, axis=1), x),
        ("sum-axes", lambda t: ag.sum_(t, axes=1), x),
        ("mean-axes", lambda t: ag.mean(t, axes=(0, 2)), x),
        ("max-axes", lambda t: ag.max_(t, axes=2), x),
        ("reshape", lambda t: ag.reshape(t, (6, 4)), x),
        ("transpose", lambda t: ag.transpose(t, (2, 0, 1)), x),
        ("slice", lambda t: t[:, 1:, ::2], x),
        ("bilinear-resize", lambda t: ag.resize(t, (5, 7)), x),
        ("avgpool2d", lambda t: ag.avgpool2d(t, 2), x),
    ]
    for name, f, inp in table:
        yield name, _weighted(f, inp, rng), inp, 1e-3


def _binary_cases():
    rng = np.random.default_rng(2)
    a = _away_from_kinks(rng, (2, 3, 4))
    b = np.abs(_away_from_kinks(rng, (3, 1))) + 0.5
    w = rng.normal(size=(2, 3, 4))
    for name, fn in (("add", ag.add), ("sub", ag.sub), ("mul", ag.mul), ("div", ag.div)):
        yield f"{name}[lhs]", lambda t, fn=fn: ag.sum_(ag.mul(fn(t, b), w)), a, 1e-3
        yield f"{name}[rhs,broadcast]", lambda t, fn=fn: ag.sum_(ag.mul(fn(a, t), w)), b, 1e-3
    c = rng.normal(size=(2, 2, 4))
    wc = rng.normal(size=(2, 5, 4))
    yield "concat-axis", lambda t: ag.sum_(ag.mul(ag.concat([t, c], axis=1), wc)), a, 1e-3


def _conv_cases():
    rng = np.random.default_rng(4)
    for stride, mode, (kh, kw) in ((1, "zeros", (3, 3)), (2, "zeros", (3, 3)), (1, "reflect", (3, 1))):
        x = rng.normal(size=(1, 2, 6, 6))
        wt = rng.normal(size=(3, 2, kh, kw))
        b = rng.normal(size=3)
        out = ag.conv2d(x, wt, b, stride=stride, pad_mode=mode)
        g = rng.normal(size=out.shape)

        def loss(xx, ww, bb, stride=stride, mode=mode, g=g):
            return ag.sum_(ag.mul(ag.conv2d(xx, ww, bb, stride=stride, pad_mode=mode), g))

        tag = f"conv2d[s{stride},{mode},{kh}x{kw}]"
        yield f"{tag}/x", lambda t, w_=wt, b_=b, L=loss: L(t, w_, b_), x, 1e-3
        yield f"{tag}/w", lambda t, x_=x, b_=b, L=loss: L(x_, t, b_), wt, 1e-3
        yield f"{tag}/b", lambda t, x_=x, w_=wt, L=loss: L(x_, w_, t), b, 1e-3
    xs = np.linspace(0.0, 1.0, 11)
    ys = xs ** 2
    q = np.array([0.13, 0.47, 0.86])
    yield "lookup-interp1d", lambda t: ag.sum_(ag.interp1d(t, xs, ys)), q, 1e-4


def _composite_case():
    """``L_all`` through a 2-level toy student, checked w.r.t. a few parameter tensors."""
    from .config import LossConfig, NetConfig
    from .net import build_network, forward
    from .train import distill_losses

    cfg = NetConfig(levels=2, blocks=(1, 1), base_dim=4, unified_dim=4)
    rng = np.random.default_rng(5)
    student = build_network(cfg, 1)
    student.params["tail.w"] = rng.normal(0, 0.1, student.params["tail.w"].shape).astype(np.float32)
    teacher = build_network(cfg, 2, "teacherA")
    deg = rng.uniform(0.2, 0.8, (1, 3, 16, 16))
    cln = np.clip(deg + rng.normal(0, 0.05, deg.shape), 0, 1)

    def objective(name):
        def f(t):
            params = {k: Tensor(v) for k, v in student.params.items()}
            params[name] = t
            sfs = forward(student, deg, params)
            ta = forward(teacher, deg)
            tb = forward(teacher, cln)
            return distill_losses(sfs, ta, tb, cfg, (16, 16), LossConfig()).l_all
        return f

    for name in ("tail.b", "dec1.block0.conv2.b", "head.w"):
        yield f"L_all/{name}", objective(name), student.params[name].astype(np.float64), 1e-4


def cases():
    for name, f, x, eps in (*_unary_cases(), *_binary_cases(), *_conv_cases()):
        yield name, f, x, eps, PRIMITIVE_TOL
    for name, f, x, eps in _composite_case():
        yield name, f, x, eps, COMPOSITE_TOL


def run_suite(report: Callable[[CheckResult], None] | None = None) -> list[CheckResult]:
    results = []
    for name, f, x, eps, tol in cases():
        t0 = time.perf_counter()
        try:
            err = gradient_check(f, x, eps)
        except ValueError:
            err = float("inf")
        res = CheckResult(name, err, tol, time.perf_counter() - t0)
        results.append(res)
        if report:
            report(res)
    return results
