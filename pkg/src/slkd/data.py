"""Procedural clean/degraded image pairs, PPM I/O and on-disk datasets.

Images are planar float32 arrays ``[3, H, W]`` in ``[0, 1]``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ContractViolation, FormatError

KINDS = ("noise", "blur", "rain")

DEFAULT_PARAMS = {
    "noise": {"sigma": 25 / 255},
    "blur": {"radius": 2, "sigma": 1.0},
    "rain": {"count": 40, "length": 10, "angle_min": -20.0, "angle_max": 20.0, "intensity": 0.6},
}


def _rng(seed):
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def derive_seed(master: int, *key: int) -> int:
    """Independent 64-bit seed for ``key`` under ``master``."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


def generate_clean(seed: int, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    if h < 16 or w < 16:
        raise ContractViolation(f"generate_clean: size {size} below minimum 16x16")
    rng = _rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy /= h - 1
    xx /= w - 1

    c0, c1 = rng.uniform(0, 1, size=(2, 3))
    theta = rng.uniform(0, 2 * math.pi)
    t = np.cos(theta) * xx + np.sin(theta) * yy
    t = (t - t.min()) / max(t.max() - t.min(), 1e-12)
    img = c0[:, None, None] * (1 - t) + c1[:, None, None] * t

    for _ in range(int(rng.integers(2, 7))):
        color = rng.uniform(0, 1, size=3)
        cy, cx = rng.uniform(0.1, 0.9, size=2)
        ry, rx = rng.uniform(0.08, 0.35, size=2)
        if rng.random() < 0.5:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        else:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1
        img[:, mask] = color[:, None]

    amp = rng.uniform(0.02, 0.06)
    fy, fx = rng.uniform(2, 8, size=2)
    phase = rng.uniform(0, 2 * math.pi)
    img += amp * np.sin(2 * math.pi * (fy * yy + fx * xx) + phase)
    return np.clip(img, 0, 1).astype(np.float32)


def _gauss_kernel(radius, sigma):
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-x ** 2 / (2 * sigma ** 2))
    return k / k.sum()


def _check_params(kind, params):
    p = {**DEFAULT_PARAMS[kind], **(params or {})}
    unknown = set(p) - set(DEFAULT_PARAMS[kind])
    if unknown:
        raise ContractViolation(f"degrade[{kind}]: unknown parameters {sorted(unknown)}")
    if kind == "noise" and not 0 <= p["sigma"] < 1:
        raise ContractViolation(f"degrade[noise]: sigma {p['sigma']} outside [0, 1)")
    if kind == "blur":
        if int(p["radius"]) != p["radius"] or not 1 <= p["radius"] <= 5:
            raise ContractViolation(f"degrade[blur]: radius {p['radius']} not an integer in [1, 5]")
        if p["sigma"] <= 0:
            raise ContractViolation("degrade[blur]: sigma must be positive")
    if kind == "rain":
        if p["count"] < 0 or p["length"] < 1 or not 0 <= p["intensity"] <= 1:
            raise ContractViolation(f"degrade[rain]: invalid parameters {p}")
        if p["angle_min"] > p["angle_max"]:
            raise ContractViolation("degrade[rain]: angle_min exceeds angle_max")
    return p


def degrade(clean: np.ndarray, kind: str, params: dict | None = None, seed: int = 0) -> np.ndarray:
    """Apply one synthetic degradation; the result is clamped to [0, 1]."""
    if kind not in KINDS:
        raise ContractViolation(f"degrade: unknown kind {kind!r}; expected one of {KINDS}")
    p = _check_params(kind, params)
    clean = np.asarray(clean, np.float32)
    rng = _rng(seed)
    if kind == "noise":
        if p["sigma"] == 0:
            return clean.copy()
        noise = rng.normal(0.0, p["sigma"], size=clean.shape)
        out = clean + noise
    elif kind == "blur":
        k = _gauss_kernel(int(p["radius"]), p["sigma"])
        out = clean.astype(np.float64)
        out = ndimage.correlate1d(out, k, axis=1, mode="mirror")
        out = ndimage.correlate1d(out, k, axis=2, mode="mirror")
    else:
        out = _add_rain(clean, p, rng)
    return np.clip(out, 0, 1).astype(np.float32)


def _add_rain(clean, p, rng):
    _, h, w = clean.shape
    mask = np.zeros((h, w))
    for _ in range(int(p["count"])):
        y0, x0 = rng.uniform(0, h), rng.uniform(0, w)
        ang = math.radians(rng.uniform(p["angle_min"], p["angle_max"]))
        length = p["length"] * rng.uniform(0.5, 1.0)
        # streaks fall downwards, tilted by the angle from vertical
        ts = np.linspace(0, length, max(int(length * 2), 2))
        ys = np.round(y0 + ts * math.cos(ang)).astype(int)
        xs = np.round(x0 + ts * math.sin(ang)).astype(int)
        ok = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
        mask[ys[ok], xs[ok]] = 1.0
    mask = ndimage.uniform_filter(mask, size=3, mode="mirror")
    a = p["intensity"] * mask
    return clean * (1 - a) + a


# ---------------------------------------------------------------------------
# PPM

def write_ppm(image: np.ndarray) -> bytes:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ContractViolation(f"write_ppm: expected [3, H, W], got {img.shape}")
    if img.size and (img.min() < 0 or img.max() > 1):
        raise ContractViolation("write_ppm: values outside [0, 1]")
    _, h, w = img.shape
    q = np.round(img.astype(np.float64) * 255).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + q.transpose(1, 2, 0).tobytes()


def _header_tokens(buf: bytes, count: int):
    tokens, pos, n = [], 0, len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if pos >= n:
            raise FormatError("truncated PPM header", pos)
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append((buf[start:pos], start))
    if pos >= n:
        raise FormatError("truncated PPM header", pos)
    return tokens, pos + 1  # exactly one whitespace byte before the raster


def read_ppm(buf: bytes) -> np.ndarray:
    buf = bytes(buf)
    if buf[:2] != b"P6":
        raise FormatError("not a binary PPM (missing P6 magic)", 0)
    tokens, data_start = _header_tokens(buf[2:], 3)
    values = []
    for tok, off in tokens:
        if not tok.isdigit():
            raise FormatError(f"malformed PPM header field {tok!r}", off + 2)
        values.append((int(tok), off + 2))
    (w, _), (h, _), (maxval, moff) = values
    if maxval != 255:
        raise FormatError(f"unsupported PPM maxval {maxval}", moff)
    if w <= 0 or h <= 0:
        raise FormatError(f"invalid PPM size {w}x{h}", values[0][1])
    start = data_start + 2
    need = w * h * 3
    if len(buf) - start < need:
        raise FormatError(f"truncated PPM raster: need {need} bytes, have {len(buf) - start}", len(buf))
    raster = np.frombuffer(buf, np.uint8, count=need, offset=start).reshape(h, w, 3)
    return (raster.transpose(2, 0, 1).astype(np.float32) / np.float32(255))


def save_ppm(path, image):
    Path(path).write_bytes(write_ppm(image))


def load_ppm(path) -> np.ndarray:
    try:
        buf = Path(path).read_bytes()
    except FileNotFoundError:
        raise FileNotFoundError(f"missing image file: {path}") from None
    try:
        return read_ppm(buf)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# datasets

@dataclass
class DatasetManifest:
    root: str
    count: int = 80
    size: tuple[int, int] = (64, 64)
    kind: str = "noise"
    params: dict = field(default_factory=lambda: dict(DEFAULT_PARAMS["noise"]))
    seed: int = 0
    holdout: float = 0.2

    def __post_init__(self):
        self.size = tuple(self.size)
        if self.count < 1:
            raise ContractViolation("dataset count must be >= 1")
        if not 0 <= self.holdout < 1:
            raise ContractViolation("holdout fraction must be in [0, 1)")

    def split_indices(self) -> dict[str, list[int]]:
        perm = _rng(derive_seed(self.seed, 0xD15)).permutation(self.count)
        n_hold = int(round(self.count * self.holdout))
        return {"train": sorted(perm[n_hold:].tolist()), "heldout": sorted(perm[:n_hold].tolist())}

    def to_json(self) -> str:
        d = asdict(self)
        d["size"] = list(self.size)
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def load(cls, root) -> "DatasetManifest":
        path = Path(root) / "manifest.json"
        try:
            d = json.loads(path.read_text())
        except FileNotFoundError:
            raise FileNotFoundError(f"missing dataset manifest: {path}") from None
        d["root"] = str(root)
        return cls(**d)


def make_sample(manifest: DatasetManifest, index: int):
    clean = generate_clean(derive_seed(manifest.seed, index, 0), manifest.size)
    degraded = degrade(clean, manifest.kind, manifest.params, derive_seed(manifest.seed, index, 1))
    return clean, degraded


def materialize(manifest: DatasetManifest) -> Path:
    """Write ``clean/``, ``degraded/`` and ``manifest.json`` under the root."""
    root = Path(manifest.root)
    (root / "clean").mkdir(parents=True, exist_ok=True)
    (root / "degraded").mkdir(parents=True, exist_ok=True)
    for i in range(manifest.count):
        clean, degraded = make_sample(manifest, i)
        save_ppm(root / "clean" / f"{i:06d}.ppm", clean)
        save_ppm(root / "degraded" / f"{i:06d}.ppm", degraded)
    (root / "manifest.json").write_text(manifest.to_json())
    return root


def load_split(manifest: DatasetManifest, split: str):
    """Read one split from disk; returns ``(indices, clean[N,3,H,W], degraded)``."""
    splits = manifest.split_indices()
    if split not in splits:
        raise ContractViolation(f"unknown split {split!r}")
    idx = splits[split]
    root = Path(manifest.root)
    clean = [load_ppm(root / "clean" / f"{i:06d}.ppm") for i in idx]
    degraded = [load_ppm(root / "degraded" / f"{i:06d}.ppm") for i in idx]
    if not idx:
        return idx, np.zeros((0, 3, *manifest.size), np.float32), np.zeros((0, 3, *manifest.size), np.float32)
    return idx, np.stack(clean), np.stack(degraded)
