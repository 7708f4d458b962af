"""Natural-scene statistics: MSCN coefficients, GGD/AGGD fits, and the
BRISQUE-style and PIQE-style extractors.

Every function accepts maps of shape ``[..., H, W]``; leading axes (batch,
channel) are carried through, so one call handles a whole feature batch.
All outputs are differentiable through the tensor primitives.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor, as_tensor
from .errors import ContractViolation

ALPHA_MIN, ALPHA_MAX, TABLE_SIZE = 0.2, 10.0, 1024
AGGD_TAU = 1e-2
PIQE_ACTIVITY_T = 0.1
PIQE_EDGE_T = 0.1
PIQE_TAU = 0.02
VAR_FLOOR = 1e-8
FEATURES_PER_SCALE = 18


@dataclass(frozen=True)
class MscnParams:
    radius: int = 3
    sigma: float = 7 / 6
    C: float = 1e-3

    def __post_init__(self):
        if self.radius < 1 or self.sigma <= 0 or self.C <= 0:
            raise ContractViolation(f"invalid MSCN parameters {self}")


def _gamma_ratio(a):
    return math.exp(2 * math.lgamma(2 / a) - math.lgamma(1 / a) - math.lgamma(3 / a))


def _build_tables():
    alpha = np.linspace(ALPHA_MIN, ALPHA_MAX, TABLE_SIZE)
    ratio = np.array([_gamma_ratio(a) for a in alpha])
    scale = np.array([math.exp(0.5 * (math.lgamma(1 / a) - math.lgamma(3 / a))) for a in alpha])
    eta = np.array([math.exp(math.lgamma(2 / a) - math.lgamma(1 / a)) for a in alpha])
    for t in (alpha, ratio, scale, eta):
        t.flags.writeable = False
    return alpha, ratio, scale, eta


# frozen float64 tables: alpha knots, r(alpha), sqrt(G(1/a)/G(3/a)), G(2/a)/G(1/a)
ALPHA_TABLE, RATIO_TABLE, SCALE_TABLE, ETA_TABLE = _build_tables()
ALPHA_MID = 0.5 * (ALPHA_MIN + ALPHA_MAX)
RATIO_MID = _gamma_ratio(ALPHA_MID)


def gaussian_window(radius: int, sigma: float) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-x * x / (2 * sigma * sigma))
    return k / k.sum()


def _flatten_maps(x: Tensor):
    lead = x.shape[:-2]
    h, w = x.shape[-2:]
    b = int(np.prod(lead)) if lead else 1
    return ag.reshape(x, (b, 1, h, w)), lead


def local_mean(x: Tensor, p: MscnParams) -> Tensor:
    """Separable Gaussian-weighted mean over ``[B, 1, H, W]`` with reflect padding."""
    k = gaussian_window(p.radius, p.sigma)
    kv = k.reshape(1, 1, -1, 1)
    kh = k.reshape(1, 1, 1, -1)
    y = ag.conv2d(x, kv, padding=(p.radius, 0), pad_mode="reflect")
    return ag.conv2d(y, kh, padding=(0, p.radius), pad_mode="reflect")


def mscn(x, p: MscnParams = MscnParams()) -> Tensor:
    x = as_tensor(x)
    h, w = x.shape[-2:]
    size = 2 * p.radius + 1
    if h < size or w < size:
        raise ContractViolation(f"mscn: map {h}x{w} smaller than the {size}x{size} window")
    x4, lead = _flatten_maps(x)
    b = x4.shape[0]
    # one filtering pass for both the mean and the mean of squares
    both = local_mean(ag.concat([x4, ag.square(x4)], axis=0), p)
    mu, mu2 = both[:b], both[b:]
    var = ag.clamp_min(ag.sub(mu2, ag.square(mu)), VAR_FLOOR)
    sigma = ag.sqrt(var)
    out = ag.safe_div(ag.sub(x4, mu), ag.add(sigma, p.C))
    return ag.reshape(out, (*lead, h, w))


@dataclass
class GgdFit:
    alpha: Tensor
    var: Tensor


@dataclass
class AggdFit:
    alpha: Tensor
    beta_l: Tensor
    beta_r: Tensor
    eta: Tensor


def fit_ggd(samples) -> GgdFit:
    """Moment-matching GGD fit along the last axis.

    Rows that are entirely zero get the degenerate convention: alpha at the
    table midpoint and variance ``1e-8``.
    """
    x = as_tensor(samples)
    if x.shape[-1] < 16:
        raise ContractViolation(f"fit_ggd needs >= 16 samples, got {x.shape[-1]}")
    m1 = ag.mean(ag.abs_(x), axes=-1)
    m2 = ag.mean(ag.square(x), axes=-1)
    r = ag.safe_div(ag.square(m1), m2)
    degenerate = (m2.data == 0)
    if degenerate.any():
        r = ag.blend(r, np.full(r.shape, RATIO_MID), degenerate)
    alpha = ag.interp1d(r, RATIO_TABLE, ALPHA_TABLE)
    return GgdFit(alpha, ag.clamp_min(m2, VAR_FLOOR))


def fit_aggd(samples, tau: float = AGGD_TAU) -> AggdFit:
    """Asymmetric GGD fit along the last axis with sigmoid side weights."""
    x = as_tensor(samples)
    if x.shape[-1] < 16:
        raise ContractViolation(f"fit_aggd needs >= 16 samples, got {x.shape[-1]}")
    scaled = ag.mul(x, 1.0 / tau)
    w_right = ag.sigmoid(scaled)
    w_left = ag.sigmoid(ag.neg(scaled))
    x2 = ag.square(x)
    left_ms = ag.safe_div(ag.sum_(ag.mul(w_left, x2), axes=-1), ag.sum_(w_left, axes=-1))
    right_ms = ag.safe_div(ag.sum_(ag.mul(w_right, x2), axes=-1), ag.sum_(w_right, axes=-1))
    left_std = ag.sqrt(ag.clamp_min(left_ms, VAR_FLOOR))
    right_std = ag.sqrt(ag.clamp_min(right_ms, VAR_FLOOR))
    g = ag.safe_div(left_std, right_std)
    rhat = ag.safe_div(ag.square(ag.mean(ag.abs_(x), axes=-1)), ag.mean(x2, axes=-1))
    g2 = ag.square(g)
    num = ag.mul(ag.add(ag.mul(g2, g), 1.0), ag.add(g, 1.0))
    rnorm = ag.mul(rhat, ag.safe_div(num, ag.square(ag.add(g2, 1.0))))

    data = x.data
    degenerate = ~((data < 0).any(axis=-1) & (data > 0).any(axis=-1))
    if degenerate.any():
        rnorm = ag.blend(rnorm, np.full(rnorm.shape, RATIO_MID), degenerate)
    alpha = ag.interp1d(rnorm, RATIO_TABLE, ALPHA_TABLE)
    scale = ag.interp1d(alpha, ALPHA_TABLE, SCALE_TABLE)
    beta_l = ag.mul(left_std, scale)
    beta_r = ag.mul(right_std, scale)
    eta = ag.mul(ag.sub(beta_r, beta_l), ag.interp1d(alpha, ALPHA_TABLE, ETA_TABLE))
    if degenerate.any():
        floor = np.full(beta_l.shape, math.sqrt(VAR_FLOOR))
        beta_l = ag.blend(beta_l, floor, degenerate)
        beta_r = ag.blend(beta_r, floor, degenerate)
        eta = ag.blend(eta, np.zeros(eta.shape), degenerate)
    return AggdFit(alpha, beta_l, beta_r, eta)


def _col(t: Tensor) -> Tensor:
    return ag.reshape(t, (*t.shape, 1))


def _flat(t: Tensor) -> Tensor:
    return ag.reshape(t, (*t.shape[:-2], t.shape[-2] * t.shape[-1]))


def neighbour_products(m: Tensor) -> list[Tensor]:
    """Horizontal, vertical, main-diagonal and anti-diagonal pairwise products."""
    return [
        ag.mul(m[..., :, :-1], m[..., :, 1:]),
        ag.mul(m[..., :-1, :], m[..., 1:, :]),
        ag.mul(m[..., :-1, :-1], m[..., 1:, 1:]),
        ag.mul(m[..., :-1, 1:], m[..., 1:, :-1]),
    ]


def brisque_features(x, scales: int = 1, p: MscnParams = MscnParams()) -> Tensor:
    """Per-map feature rows ``[..., 18 * scales]``, scale-minor within a row.

    Each scale contributes GGD (alpha, variance) of the MSCN map followed by
    AGGD (alpha, eta, beta_l, beta_r) for the four neighbour products.
    """
    x = as_tensor(x)
    if scales < 1:
        raise ContractViolation("brisque_features: scales must be >= 1")
    size = 2 * p.radius + 1
    blocks = []
    for s in range(scales):
        h, w = x.shape[-2:]
        if h < size or w < size:
            raise ContractViolation(
                f"brisque_features: map {h}x{w} too small for MSCN at scale {s + 1}")
        m = mscn(x, p)
        ggd = fit_ggd(_flat(m))
        feats = [ggd.alpha, ggd.var]
        for prod in neighbour_products(m):
            a = fit_aggd(_flat(prod))
            feats += [a.alpha, a.eta, a.beta_l, a.beta_r]
        blocks.append(ag.concat([_col(f) for f in feats], axis=-1))
        if s + 1 < scales:
            x = ag.avgpool2d(x, 2)
    return blocks[0] if len(blocks) == 1 else ag.concat(blocks, axis=-1)


@dataclass
class PiqeBlockMap:
    scores: Tensor
    activity: Tensor


def piqe_features(x, block: int = 8, p: MscnParams = MscnParams()) -> PiqeBlockMap:
    """Soft block activity and border-distortion scores ``[..., H//block, W//block]``."""
    x = as_tensor(x)
    h, w = x.shape[-2:]
    if block < 4:
        raise ContractViolation(f"piqe_features: block {block} below minimum 4")
    if block > h or block > w:
        raise ContractViolation(f"piqe_features: block {block} exceeds map size {h}x{w}")
    m = mscn(x, p)
    bh, bw = h // block, w // block
    lead = m.shape[:-2]
    nl = len(lead)
    m = m[..., :bh * block, :bw * block]
    tiles = ag.reshape(m, (*lead, bh, block, bw, block))
    perm = tuple(range(nl)) + (nl, nl + 2, nl + 1, nl + 3)
    tiles = ag.transpose(tiles, perm)  # [..., bh, bw, block, block]

    mean = ag.mean(tiles, axes=(-2, -1))
    msq = ag.mean(ag.square(tiles), axes=(-2, -1))
    var = ag.clamp_min(ag.sub(msq, ag.square(mean)), 0.0)
    activity = ag.sigmoid(ag.mul(ag.sub(var, PIQE_ACTIVITY_T), 1.0 / PIQE_TAU))

    a = ag.abs_(tiles)
    borders = [
        ag.mean(a[..., 0, :], axes=-1),
        ag.mean(a[..., -1, :], axes=-1),
        ag.mean(a[..., :, 0], axes=-1),
        ag.mean(a[..., :, -1], axes=-1),
    ]
    edge = ag.max_(ag.concat([_col(b) for b in borders], axis=-1), axes=-1)
    distortion = ag.sigmoid(ag.mul(ag.sub(edge, PIQE_EDGE_T), 1.0 / PIQE_TAU))
    return PiqeBlockMap(ag.mul(activity, distortion), activity)
