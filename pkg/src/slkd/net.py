"""Convolutional encoder-decoder restoration network.

Layout for ``n`` levels with widths ``D_k = base_dim * 2**(k-1)``::

    head  3 -> D_1
    enc_k residual blocks at D_k, then down_k (stride-2 conv D_k -> D_k+1)
    dec_n residual blocks on the deepest encoder output
    for k = n-1 .. 1: up_k (bilinear x2, conv D_k+1 -> D_k),
                      fuse_k (1x1 conv over [up, enc_k]), dec_k blocks
    tail  D_1 -> 3, added to the input (residual prediction)

Encoder/decoder feature lists are indexed by level (index 0 is level 1).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import autograd as ag
from .autograd import Tensor, as_tensor
from .config import NetConfig
from .errors import ContractViolation

ROLES = ("teacherA", "teacherB", "student")
RES_SCALE = 0.1  # fixed residual-branch scale; keeps deep unnormalised stacks stable
TAIL_SCALE = 1e-3  # near-identity start: the fresh network returns almost its input


@dataclass(frozen=True)
class ConvSpec:
    name: str
    c_in: int
    c_out: int
    k: int
    stride: int = 1
    level: int = 1  # spatial level of the output

    @property
    def params(self) -> int:
        return self.c_in * self.c_out * self.k * self.k + self.c_out


def conv_specs(cfg: NetConfig) -> list[ConvSpec]:
    """Every convolution of the network in forward order."""
    k = cfg.kernel
    n = cfg.levels
    specs = [ConvSpec("head", 3, cfg.dim(1), k, 1, 1)]

    def blocks(prefix, level):
        d = cfg.dim(level)
        for b in range(cfg.blocks[level - 1]):
            specs.append(ConvSpec(f"{prefix}{level}.block{b}.conv1", d, d, k, 1, level))
            specs.append(ConvSpec(f"{prefix}{level}.block{b}.conv2", d, d, k, 1, level))

    for lv in range(1, n + 1):
        blocks("enc", lv)
        if lv < n:
            specs.append(ConvSpec(f"down{lv}", cfg.dim(lv), cfg.dim(lv + 1), k, 2, lv + 1))
    blocks("dec", n)
    for lv in range(n - 1, 0, -1):
        specs.append(ConvSpec(f"up{lv}", cfg.dim(lv + 1), cfg.dim(lv), k, 1, lv))
        specs.append(ConvSpec(f"fuse{lv}", 2 * cfg.dim(lv), cfg.dim(lv), 1, 1, lv))
        blocks("dec", lv)
    specs.append(ConvSpec("tail", cfg.dim(1), 3, k, 1, 1))
    return specs


@dataclass
class Model:
    cfg: NetConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)
    role: str = "student"

    def __post_init__(self):
        if self.role not in ROLES:
            raise ContractViolation(f"unknown model role {self.role!r}")

    @property
    def is_shell(self) -> bool:
        return not self.params

    def num_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def named_shapes(self) -> Iterator[tuple[str, tuple[int, ...]]]:
        for s in conv_specs(self.cfg):
            yield f"{s.name}.w", (s.c_out, s.c_in, s.k, s.k)
            yield f"{s.name}.b", (s.c_out,)

    def copy(self, role: str | None = None) -> "Model":
        return Model(self.cfg, {k: v.copy() for k, v in self.params.items()}, role or self.role)

    def fill(self, params: dict[str, np.ndarray]) -> "Model":
        """Populate a shell from ``params``; shapes must match the config."""
        expected = dict(self.named_shapes())
        if set(params) != set(expected):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise ContractViolation(f"parameter names mismatch: missing {missing[:3]}, extra {extra[:3]}")
        for name, shape in expected.items():
            if tuple(params[name].shape) != shape:
                raise ContractViolation(f"{name}: shape {params[name].shape} != {shape}")
        self.params = {name: np.asarray(params[name], np.float32) for name in expected}
        return self


def build_network(cfg: NetConfig, seed: int = 0, role: str = "student") -> Model:
    """He-uniform weights from ``seed``, zero biases, tail shrunk by ``TAIL_SCALE``."""
    rng = np.random.default_rng(seed)
    params = {}
    for s in conv_specs(cfg):
        bound = np.sqrt(6.0 / (s.c_in * s.k * s.k))
        if s.name == "tail":
            bound *= TAIL_SCALE
        params[f"{s.name}.w"] = rng.uniform(-bound, bound, (s.c_out, s.c_in, s.k, s.k)).astype(np.float32)
        params[f"{s.name}.b"] = np.zeros(s.c_out, np.float32)
    return Model(cfg, params, role)


@dataclass
class FeatureSet:
    encoder: list[Tensor]
    decoder: list[Tensor]
    reconstruction: Tensor


def _act(cfg, x):
    return ag.gelu(x) if cfg.activation == "gelu" else ag.relu(x)


def forward(model: Model, x, params: dict[str, Tensor] | None = None) -> FeatureSet:
    """Run the network on ``[3, H, W]`` or ``[N, 3, H, W]`` input.

    ``params`` overrides the model's arrays, typically with tape-watched
    tensors during training.
    """
    if model.is_shell:
        raise ContractViolation("forward on an uninitialized model shell")
    cfg = model.cfg
    x = as_tensor(x)
    if x.ndim not in (3, 4) or x.shape[-3] != 3:
        raise ContractViolation(f"forward expects [3,H,W] or [N,3,H,W], got {x.shape}")
    div = 2 ** (cfg.levels - 1)
    h, w = x.shape[-2:]
    if h % div or w % div:
        raise ContractViolation(f"input {h}x{w} must be divisible by {div} (2^(levels-1))")
    p = params if params is not None else model.params

    def conv(name, t, stride=1):
        return ag.conv2d(t, p[f"{name}.w"], p[f"{name}.b"], stride=stride)

    def run_blocks(prefix, level, t):
        for b in range(cfg.blocks[level - 1]):
            base = f"{prefix}{level}.block{b}"
            branch = conv(f"{base}.conv2", _act(cfg, conv(f"{base}.conv1", t)))
            t = ag.add(t, ag.mul(branch, RES_SCALE))
        return t

    n = cfg.levels
    enc = []
    t = conv("head", x)
    for lv in range(1, n + 1):
        t = run_blocks("enc", lv, t)
        enc.append(t)
        if lv < n:
            t = conv(f"down{lv}", t, stride=2)
    dec = [None] * n
    t = run_blocks("dec", n, enc[-1])
    dec[n - 1] = t
    for lv in range(n - 1, 0, -1):
        eh, ew = enc[lv - 1].shape[-2:]
        t = conv(f"up{lv}", ag.resize(t, (eh, ew)))
        t = conv(f"fuse{lv}", ag.concat([t, enc[lv - 1]], axis=-3))
        t = run_blocks("dec", lv, t)
        dec[lv - 1] = t
    recon = ag.add(x, conv("tail", t))
    return FeatureSet(enc, dec, recon)


def scm(feature, cfg: NetConfig, size: tuple[int, int]) -> Tensor:
    """Fixed scale conversion to ``[..., unified_dim, *size]``.

    Channels are reduced by averaging contiguous groups (or tiled up when
    there are fewer than ``unified_dim``), then bilinearly resized.
    """
    f = as_tensor(feature)
    c = f.shape[-3]
    du = cfg.unified_dim
    lead = f.shape[:-3]
    h, w = f.shape[-2:]
    if c < du:
        reps = -(-du // c)
        f = ag.concat([f] * reps, axis=-3)[..., :du, :, :]
    elif c > du:
        if c % du:
            raise ContractViolation(f"scm: {c} channels not divisible by unified dim {du}")
        g = c // du
        f = ag.mean(ag.reshape(f, (*lead, du, g, h, w)), axes=-3)
    return ag.resize(f, size)


def unified_size(cfg: NetConfig, input_hw: tuple[int, int]) -> tuple[int, int]:
    s = 2 ** (cfg.unified_level - 1)
    return input_hw[0] // s, input_hw[1] // s


def count_complexity(cfg: NetConfig, input_size: tuple[int, int]) -> tuple[int, int]:
    """Closed-form (FLOPs, params) of one forward pass.

    Convolutions cost ``2 * Ho * Wo * C_in * C_out * k^2``; each activation,
    residual scale, residual add, upsample and the final input skip add
    ``2 * H * W * C``.
    """
    h, w = input_size
    div = 2 ** (cfg.levels - 1)
    if h % div or w % div:
        raise ContractViolation(f"input {h}x{w} must be divisible by {div}")

    def hw(level):
        return (h >> (level - 1)) * (w >> (level - 1))

    flops = params = 0
    for s in conv_specs(cfg):
        params += s.params
        flops += 2 * hw(s.level) * s.c_in * s.c_out * s.k * s.k
        if s.name.endswith("conv1"):
            flops += 2 * hw(s.level) * s.c_out  # activation
        elif s.name.endswith("conv2"):
            flops += 4 * hw(s.level) * s.c_out  # residual scale and add
        elif s.name.startswith("up"):
            flops += 2 * hw(s.level) * s.c_in  # bilinear upsample
    flops += 2 * h * w * 3  # global skip
    return int(flops), int(params)


def conv_cost(c_in: int, c_out: int, k: int, h_out: int, w_out: int) -> tuple[int, int]:
    """(FLOPs, params) of a single convolution layer."""
    return 2 * h_out * w_out * c_in * c_out * k * k, c_in * c_out * k * k + c_out
