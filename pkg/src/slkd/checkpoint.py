"""Self-describing binary checkpoint format.

Layout (all integers little-endian)::

    b"SLKD"  u32 version=1
    u32 len  NetConfig JSON (UTF-8, canonical key order)
    u32 tensor count
    per tensor: u16 len + UTF-8 name, u8 rank, u32 dims..., float32 payload

Tensors are written in the model's canonical parameter order, so
save -> load -> save reproduces the file byte for byte.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import NetConfig, net_config_from_json
from .errors import ConfigError, ContractViolation, FormatError
from .net import Model

MAGIC = b"SLKD"
VERSION = 1


def _config_json(cfg: NetConfig) -> bytes:
    return json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":")).encode()


def dumps(model: Model) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<I", VERSION)
    cfg = _config_json(model.cfg)
    out += struct.pack("<I", len(cfg)) + cfg
    names = [] if model.is_shell else [n for n, _ in model.named_shapes()]
    out += struct.pack("<I", len(names))
    for name in names:
        arr = np.ascontiguousarray(model.params[name], dtype="<f4")
        raw = name.encode()
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    return bytes(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated checkpoint: need {n} bytes for {what}, "
                              f"{len(self.buf) - self.pos} left", self.pos)
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads(buf: bytes) -> Model:
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic, not an SLKD checkpoint", 0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    (n,) = r.unpack("<I", "config length")
    at = r.pos
    try:
        cfg = net_config_from_json(r.take(n, "config").decode())
    except (UnicodeDecodeError, ConfigError) as exc:
        raise FormatError(f"invalid embedded NetConfig: {exc}", at) from None
    (count,) = r.unpack("<I", "tensor count")
    params = {}
    for i in range(count):
        at = r.pos
        (ln,) = r.unpack("<H", f"tensor #{i} name length")
        name = r.take(ln, f"tensor #{i} name").decode(errors="replace")
        (rank,) = r.unpack("<B", f"tensor {name!r} rank")
        dims = r.unpack(f"<{rank}I", f"tensor {name!r} dims")
        size = int(np.prod(dims, dtype=np.int64))
        payload = r.take(4 * size, f"tensor {name!r} payload")
        if name in params:
            raise FormatError(f"duplicate tensor {name!r}", at)
        params[name] = np.frombuffer(payload, "<f4").reshape(dims).astype(np.float32)
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after last tensor", r.pos)
    model = Model(cfg, {}, "student")
    if count:
        try:
            model.fill(params)
        except ContractViolation as exc:
            raise FormatError(f"tensors do not match embedded NetConfig: {exc}") from None
    return model


def save_checkpoint(model: Model, path) -> None:
    Path(path).write_bytes(dumps(model))


def load_checkpoint(path, role: str = "student") -> Model:
    """Load ``path``; a zero-tensor file yields an uninitialized shell."""
    model = loads(Path(path).read_bytes())
    return Model(model.cfg, model.params, role)
