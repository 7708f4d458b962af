"""PSNR/SSIM and the held-out evaluation report."""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractViolation

PSNR_CAP = 99.0


def psnr(x, y, peak: float = 1.0) -> float:
    x = np.asarray(x, np.float64)
    y = np.asarray(y, np.float64)
    if x.shape != y.shape:
        raise ContractViolation(f"psnr: shape mismatch {x.shape} vs {y.shape}")
    if peak <= 0:
        raise ContractViolation("psnr: peak must be positive")
    mse = np.mean((x - y) ** 2)
    if mse == 0:
        return PSNR_CAP
    return min(10 * math.log10(peak * peak / mse), PSNR_CAP)


def _gauss11():
    t = np.arange(11) - 5.0
    g = np.exp(-t * t / (2 * 1.5 ** 2))
    return g / g.sum()


_WIN = _gauss11()


def _filter_valid(img):
    t = sliding_window_view(img, 11, axis=0) @ _WIN
    return sliding_window_view(t, 11, axis=1) @ _WIN


def ssim(x, y, data_range: float = 1.0) -> float:
    """Mean SSIM (11x11 Gaussian window, sigma 1.5), averaged over channels."""
    x = np.asarray(x, np.float64)
    y = np.asarray(y, np.float64)
    if x.shape != y.shape:
        raise ContractViolation(f"ssim: shape mismatch {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x, y = x[None], y[None]
    if x.shape[-1] < 11 or x.shape[-2] < 11:
        raise ContractViolation(f"ssim: images {x.shape[-2:]} smaller than the 11x11 window")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    vals = []
    for a, b in zip(x, y):
        mu_a, mu_b = _filter_valid(a), _filter_valid(b)
        saa = _filter_valid(a * a) - mu_a ** 2
        sbb = _filter_valid(b * b) - mu_b ** 2
        sab = _filter_valid(a * b) - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
        den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


@dataclass
class EvalReport:
    model: str
    flops: int
    params: int
    per_image: list[dict] = field(default_factory=list)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r["psnr"] for r in self.per_image]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r["ssim"] for r in self.per_image]))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mean_psnr"] = self.mean_psnr
        d["mean_ssim"] = self.mean_ssim
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def eval_threads() -> int:
    env = os.environ.get("SLKD_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def score_images(model, clean, degraded, indices=None) -> list[dict]:
    """Per-image PSNR/SSIM of ``model``'s reconstruction against ``clean``."""
    from .net import forward

    if indices is None:
        indices = list(range(len(clean)))

    def one(i):
        out = np.clip(forward(model, degraded[i]).reconstruction.data, 0, 1)
        return {"index": int(indices[i]), "psnr": psnr(out, clean[i]), "ssim": ssim(out, clean[i])}

    with ThreadPoolExecutor(max_workers=eval_threads()) as pool:
        return list(pool.map(one, range(len(clean))))


def evaluate(model, manifest, split: str = "heldout", name: str = "model") -> EvalReport:
    from .data import load_split
    from .net import count_complexity

    idx, clean, degraded = load_split(manifest, split)
    if not idx:
        raise ContractViolation(f"evaluate: split {split!r} is empty")
    flops, params = count_complexity(model.cfg, tuple(clean.shape[-2:]))
    return EvalReport(name, flops, params, score_images(model, clean, degraded, idx))
