"""Dense float32 tensors with a reverse-mode gradient tape.

A :class:`Tensor` is an immutable wrapper around a float32 numpy array. Leaves
are attached to a :class:`GradTape` with :meth:`GradTape.watch`; every
primitive applied to an attached tensor records a vector-Jacobian closure on
the same tape, and :func:`backward` replays them in reverse.

All primitives go through :func:`apply_primitive`; the module-level helpers
(``add``, ``conv2d``...) are thin wrappers around it.
"""
from __future__ import annotations

import contextlib
import math
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import ContractViolation

DTYPE = np.float32
EPS = 1e-8
_active = [DTYPE]


def active_dtype():
    return _active[-1]


@contextlib.contextmanager
def float64_mode():
    """Run tensor arithmetic in float64 (finite-difference checks only)."""
    _active.append(np.float64)
    try:
        yield
    finally:
        _active.pop()


class Tensor:
    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: "GradTape | None" = None, node: int | None = None):
        arr = np.asarray(data, dtype=_active[-1])
        if arr.ndim == 0:
            arr = arr.reshape(())
        arr.flags.writeable = False
        self.data = arr
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def attached(self) -> bool:
        return self.tape is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = f", node={self.node}" if self.attached else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return slice_(self, index)


class GradTape:
    """Ordered record of primitive applications for one training step."""

    def __init__(self):
        self.records: list[tuple[str, tuple[int | None, ...], int, Callable]] = []
        self.leaves: set[int] = set()
        self._next = 0

    def _new_node(self) -> int:
        self._next += 1
        return self._next

    def watch(self, t) -> Tensor:
        """Return a leaf copy of ``t`` attached to this tape."""
        t = as_tensor(t)
        node = self._new_node()
        self.leaves.add(node)
        return Tensor(t.data, self, node)

    def record(self, kind, inputs, out_data, vjp) -> Tensor:
        node = self._new_node()
        self.records.append((kind, tuple(i.node for i in inputs), node, vjp))
        return Tensor(out_data, self, node)

    def __len__(self):
        return len(self.records)


class GradientMap(dict):
    """node-id -> gradient array. Indexing with a Tensor looks up its node."""

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            key = key.node
        return super().__getitem__(key)

    def __contains__(self, key):
        if isinstance(key, Tensor):
            key = key.node
        return super().__contains__(key)

    def get(self, key, default=None):
        if isinstance(key, Tensor):
            key = key.node
        return super().get(key, default)

    def wrt(self, t: Tensor) -> np.ndarray:
        """Gradient for ``t``, zeros when absent."""
        g = self.get(t.node)
        return np.zeros(t.shape, t.data.dtype) if g is None else g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# primitive registry

_PRIMITIVES: dict[str, Callable] = {}


def _primitive(name):
    def deco(fn):
        _PRIMITIVES[name] = fn
        return fn

    return deco


def primitive_kinds() -> list[str]:
    return sorted(_PRIMITIVES)


def apply_primitive(kind: str, inputs: Sequence, **attrs) -> Tensor:
    """Apply primitive ``kind`` and record its reverse rule when needed.

    Each registered forward returns ``(out, vjp)`` where ``vjp(g)`` maps the
    output gradient to one gradient (or None) per input.
    """
    fn = _PRIMITIVES.get(kind)
    if fn is None:
        raise ContractViolation(f"unknown primitive kind {kind!r}")
    ts = [as_tensor(i) for i in inputs]
    tape = None
    for t in ts:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ContractViolation(f"{kind}: inputs attached to different tapes")
            tape = t.tape
    out, vjp = fn(*[t.data for t in ts], **attrs)
    out = np.asarray(out, dtype=_active[-1])
    if tape is None:
        return Tensor(out)
    return tape.record(kind, ts, out, vjp)


def backward(loss: Tensor, tape: GradTape | None = None) -> GradientMap:
    """Gradients of a scalar ``loss`` with respect to every used leaf."""
    if loss.tape is None:
        raise ContractViolation("backward on a detached loss")
    if loss.size != 1:
        raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = tape or loss.tape
    if loss.tape is not tape:
        raise ContractViolation("loss was not recorded on the given tape")
    dt = loss.data.dtype
    grads: dict[int, np.ndarray] = {loss.node: np.ones(loss.shape, dt)}
    for kind, ins, out, vjp in reversed(tape.records):
        g = grads.pop(out, None)
        if g is None:
            continue
        for node, gi in zip(ins, vjp(g)):
            if node is None or gi is None:
                continue
            prev = grads.get(node)
            grads[node] = gi.astype(dt, copy=False) if prev is None else prev + gi
    return GradientMap({n: g for n, g in grads.items() if n in tape.leaves})


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(kind, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractViolation(f"{kind}: shape mismatch {a.shape} vs {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise

@_primitive("add")
def _add(a, b):
    _check_broadcast("add", a, b)
    return a + b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))


@_primitive("sub")
def _sub(a, b):
    _check_broadcast("sub", a, b)
    return a - b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))


@_primitive("mul")
def _mul(a, b):
    _check_broadcast("mul", a, b)
    return a * b, lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


@_primitive("div")
def _div(a, b):
    _check_broadcast("div", a, b)
    out = a / b

    def vjp(g):
        gb = g / b
        return _unbroadcast(gb, a.shape), _unbroadcast(-gb * out, b.shape)

    return out, vjp


@_primitive("neg")
def _neg(a):
    return -a, lambda g: (-g,)


@_primitive("abs")
def _abs(a):
    return np.abs(a), lambda g: (g * np.sign(a),)


@_primitive("log")
def _log(a):
    return np.log(a), lambda g: (g / a,)


@_primitive("exp")
def _exp(a):
    out = np.exp(a)
    return out, lambda g: (g * out,)


@_primitive("sqrt")
def _sqrt(a):
    out = np.sqrt(a)
    return out, lambda g: (g * 0.5 / out,)


@_primitive("square")
def _square(a):
    return a * a, lambda g: (g * 2 * a,)


@_primitive("power-const")
def _power(a, p):
    out = np.power(a, p)
    return out, lambda g: (g * p * np.power(a, p - 1),)


@_primitive("relu")
def _relu(a):
    mask = a > 0
    return a * mask, lambda g: (g * mask,)


_GELU_C = math.sqrt(2.0 / math.pi)


@_primitive("gelu")
def _gelu(a):
    a2 = a * a
    inner = _GELU_C * (a + 0.044715 * a2 * a)
    t = np.tanh(inner)
    out = 0.5 * a * (1 + t)

    def vjp(g):
        dinner = _GELU_C * (1 + 3 * 0.044715 * a2)
        return (g * (0.5 * (1 + t) + 0.5 * a * (1 - t * t) * dinner),)

    return out, vjp


@_primitive("clamp-min")
def _clamp_min(a, lo):
    mask = a >= lo
    return np.where(mask, a, a.dtype.type(lo)), lambda g: (g * mask,)


# ---------------------------------------------------------------------------
# reductions

def _norm_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ContractViolation(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def _expand(g, shape, axes, keepdims):
    if not keepdims:
        for ax in axes:
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


@_primitive("sum-axes")
def _sum(a, axes=None, keepdims=False):
    axes = _norm_axes(axes, a.ndim)
    return a.sum(axis=axes, keepdims=keepdims), lambda g: (
        np.ascontiguousarray(_expand(g, a.shape, axes, keepdims)),)


@_primitive("mean-axes")
def _mean(a, axes=None, keepdims=False):
    axes = _norm_axes(axes, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return a.mean(axis=axes, keepdims=keepdims), lambda g: (
        _expand(g, a.shape, axes, keepdims) / a.dtype.type(count),)


@_primitive("max-axes")
def _max(a, axes=None, keepdims=False):
    axes = _norm_axes(axes, a.ndim)
    m = a.max(axis=axes, keepdims=True)
    mask = (a == m).astype(a.dtype)
    mask /= mask.sum(axis=axes, keepdims=True)  # ties share the gradient
    out = m if keepdims else m.squeeze(axis=axes)
    return out, lambda g: (_expand(g, a.shape, axes, keepdims) * mask,)


@_primitive("softmax-axis")
def _softmax(a, axis=-1):
    z = a - a.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return out, vjp


# ---------------------------------------------------------------------------
# shape plumbing

@_primitive("reshape")
def _reshape(a, shape):
    try:
        out = a.reshape(shape)
    except ValueError:
        raise ContractViolation(f"reshape: cannot view {a.shape} as {shape}") from None
    return out, lambda g: (g.reshape(a.shape),)


@_primitive("transpose")
def _transpose(a, axes=None):
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return a.transpose(axes), lambda g: (g.transpose(inv),)


@_primitive("slice")
def _slice(a, index):
    out = a[index]

    def vjp(g):
        full = np.zeros(a.shape, g.dtype)
        full[index] = g
        return (full,)

    return out, vjp


@_primitive("concat-axis")
def _concat(*arrays, axis=0):
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError:
        shapes = [x.shape for x in arrays]
        raise ContractViolation(f"concat-axis: incompatible shapes {shapes}") from None
    bounds = np.cumsum([x.shape[axis] for x in arrays])[:-1]
    return out, lambda g: tuple(np.split(g, bounds, axis=axis))


# ---------------------------------------------------------------------------
# spatial ops; images are [..., C, H, W]

def _pad(x, ph, pw, mode):
    if ph == 0 and pw == 0:
        return x
    width = [(0, 0)] * (x.ndim - 2) + [(ph, ph), (pw, pw)]
    return np.pad(x, width, mode="reflect" if mode == "reflect" else "constant")


def _unpad(g, ph, pw, mode, shape):
    h, w = shape[-2:]
    if mode == "reflect":
        # fold the reflected border back onto its source rows/columns
        g = g.copy()
        for i in range(1, ph + 1):
            g[..., ph + i, :] += g[..., ph - i, :]
            g[..., ph + h - 1 - i, :] += g[..., ph + h - 1 + i, :]
        for i in range(1, pw + 1):
            g[..., :, pw + i] += g[..., :, pw - i]
            g[..., :, pw + w - 1 - i] += g[..., :, pw + w - 1 + i]
    return g[..., ph:ph + h, pw:pw + w]


@_primitive("conv2d")
def _conv2d(x, w, *bias, stride=1, padding=None, pad_mode="zeros"):
    if w.ndim != 4:
        raise ContractViolation(f"conv2d: weight must be [O, C, kh, kw], got {w.shape}")
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ContractViolation(f"conv2d: input {x.shape} incompatible with weight {w.shape}")
    o, c, kh, kw = w.shape
    if padding is None:
        ph, pw = kh // 2, kw // 2
    elif isinstance(padding, int):
        ph = pw = padding
    else:
        ph, pw = padding
    if pad_mode == "reflect" and (ph >= x.shape[2] or pw >= x.shape[3]):
        raise ContractViolation(f"conv2d: reflect padding {(ph, pw)} too large for {x.shape}")
    xp = np.ascontiguousarray(_pad(x, ph, pw, pad_mode))
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ContractViolation(f"conv2d: input {x.shape} smaller than kernel {(kh, kw)}")
    kern = kernels if xp.dtype == np.float32 else kernels.fallback
    cols = kern.im2col(xp, kh, kw, stride)
    n, ho, wo = cols.shape[:3]
    cols2 = cols.reshape(n * ho * wo, c * kh * kw)
    w2 = w.reshape(o, c * kh * kw)
    out = cols2 @ w2.T
    if bias:
        out += bias[0]
    out = np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))
    if squeeze:
        out = out[0]

    def vjp(g):
        if squeeze:
            g = g[None]
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, o)
        dw = (g2.T @ cols2).reshape(w.shape)
        dcols = (g2 @ w2).reshape(n, ho, wo, c, kh, kw)
        dx = _unpad(kern.col2im(dcols, xp.shape, kh, kw, stride), ph, pw, pad_mode, x.shape)
        if squeeze:
            dx = dx[0]
        grads = [dx, dw]
        if bias:
            grads.append(g2.sum(axis=0))
        return grads

    return out, vjp


def _interp_matrix(n_in, n_out):
    """Row-stochastic matrix for half-pixel-centre linear interpolation."""
    m = np.zeros((n_out, n_in), np.float64)
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(math.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        f = src - i0
        m[i, i0] += 1 - f
        m[i, i1] += f
    return m


@_primitive("bilinear-resize")
def _resize(x, size):
    h, w = x.shape[-2:]
    ho, wo = size
    if (ho, wo) == (h, w):
        return x.copy(), lambda g: (g,)
    ry = _interp_matrix(h, ho).astype(x.dtype)
    rx = _interp_matrix(w, wo).astype(x.dtype)
    out = ry @ x @ rx.T
    return out, lambda g: (ry.T @ g @ rx,)


@_primitive("avgpool2d")
def _avgpool(x, k=2):
    h, w = x.shape[-2:]
    ho, wo = h // k, w // k
    if ho == 0 or wo == 0:
        raise ContractViolation(f"avgpool2d: input {x.shape} smaller than window {k}")
    lead = x.shape[:-2]
    xc = x[..., :ho * k, :wo * k].reshape(*lead, ho, k, wo, k)
    out = xc.mean(axis=(-3, -1))

    def vjp(g):
        full = np.zeros(x.shape, g.dtype)
        up = np.broadcast_to(g[..., :, None, :, None] / g.dtype.type(k * k), xc.shape)
        full[..., :ho * k, :wo * k] = up.reshape(*lead, ho * k, wo * k)
        return (full,)

    return out, vjp


# ---------------------------------------------------------------------------
# table lookup

@_primitive("lookup-interp1d")
def _interp(q, xs, ys):
    xs = np.asarray(xs, np.float64)
    ys = np.asarray(ys, np.float64)
    if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 2:
        raise ContractViolation("lookup-interp1d: table must be two equal 1-D arrays")
    d = np.diff(xs)
    if np.all(d < 0):
        xs, ys = xs[::-1], ys[::-1]
    elif not np.all(d > 0):
        raise ContractViolation("lookup-interp1d: table abscissae are not strictly monotone")
    out = np.interp(q, xs, ys)
    idx = np.clip(np.searchsorted(xs, q, side="right") - 1, 0, xs.size - 2)
    slope = ((ys[idx + 1] - ys[idx]) / (xs[idx + 1] - xs[idx])).astype(q.dtype)
    inside = (q >= xs[0]) & (q <= xs[-1])
    return out, lambda g: (g * slope * inside,)


# ---------------------------------------------------------------------------
# public wrappers

def add(a, b):
    return apply_primitive("add", [a, b])


def sub(a, b):
    return apply_primitive("sub", [a, b])


def mul(a, b):
    return apply_primitive("mul", [a, b])


def div(a, b):
    return apply_primitive("div", [a, b])


def neg(a):
    return apply_primitive("neg", [a])


def abs_(a):
    return apply_primitive("abs", [a])


def log(a):
    return apply_primitive("log", [a])


def exp(a):
    return apply_primitive("exp", [a])


def sqrt(a):
    return apply_primitive("sqrt", [a])


def square(a):
    return apply_primitive("square", [a])


def power(a, p: float):
    return apply_primitive("power-const", [a], p=p)


def relu(a):
    return apply_primitive("relu", [a])


def gelu(a):
    return apply_primitive("gelu", [a])


def clamp_min(a, lo: float):
    return apply_primitive("clamp-min", [a], lo=lo)


def sum_(a, axes=None, keepdims=False):
    return apply_primitive("sum-axes", [a], axes=axes, keepdims=keepdims)


def mean(a, axes=None, keepdims=False):
    return apply_primitive("mean-axes", [a], axes=axes, keepdims=keepdims)


def max_(a, axes=None, keepdims=False):
    return apply_primitive("max-axes", [a], axes=axes, keepdims=keepdims)


def softmax(a, axis=-1):
    return apply_primitive("softmax-axis", [a], axis=axis)


def reshape(a, shape):
    return apply_primitive("reshape", [a], shape=tuple(shape))


def transpose(a, axes=None):
    return apply_primitive("transpose", [a], axes=axes)


def slice_(a, index):
    return apply_primitive("slice", [a], index=index)


def concat(tensors, axis=0):
    return apply_primitive("concat-axis", list(tensors), axis=axis)


def conv2d(x, w, b=None, stride=1, padding=None, pad_mode="zeros"):
    ins = [x, w] if b is None else [x, w, b]
    return apply_primitive("conv2d", ins, stride=stride, padding=padding, pad_mode=pad_mode)


def resize(x, size):
    return apply_primitive("bilinear-resize", [x], size=tuple(size))


def avgpool2d(x, k=2):
    return apply_primitive("avgpool2d", [x], k=k)


def interp1d(q, xs, ys):
    return apply_primitive("lookup-interp1d", [q], xs=xs, ys=ys)


# composites

def safe_div(a, b, floor=EPS):
    return div(a, clamp_min(b, floor))


def safe_log(a, floor=EPS):
    return log(clamp_min(a, floor))


def sigmoid(a):
    # exp argument is capped so float32 never overflows
    return safe_div(1.0, add(1.0, exp(neg(clamp_min(a, -80.0)))))


def blend(a, b, mask):
    """``a`` where mask==0, ``b`` where mask==1 (mask is a constant array)."""
    mask = np.asarray(mask, _active[-1])
    return add(mul(a, 1.0 - mask), mul(b, mask))


# ---------------------------------------------------------------------------
# finite-difference oracle

def gradient_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-3) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` maps a Tensor to a scalar Tensor. Both the tape pass and the
    perturbed evaluations run in float64.
    """
    if eps <= 0:
        raise ContractViolation("gradient_check: eps must be positive")
    with float64_mode():
        x0 = np.array(as_tensor(x).data, np.float64)
        tape = GradTape()
        xt = tape.watch(x0)
        y = f(xt)
        if y.tape is None:
            analytic = np.zeros(x0.size)
        else:
            analytic = backward(y).wrt(xt).reshape(-1)
        numeric = np.zeros(x0.size)
        flat = x0.reshape(-1)
        for i in range(flat.size):
            vals = []
            for sgn in (1.0, -1.0):
                xp = flat.copy()
                xp[i] += sgn * eps
                v = float(np.sum(f(Tensor(xp.reshape(x0.shape))).data))
                if not math.isfinite(v):
                    raise ValueError(f"gradient_check: non-finite value at perturbation index {i}")
                vals.append(v)
            numeric[i] = (vals[0] - vals[1]) / (2 * eps)
    if not analytic.size:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
