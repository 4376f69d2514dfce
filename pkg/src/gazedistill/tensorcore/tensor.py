"""Reverse-mode automatic differentiation over dense float arrays.

A `Tape` is a Wengert list: primitives append (output, inputs, vjp) nodes
in execution order while a tape is active and gradients are enabled, and
`backward` replays the list in reverse. Tensors are float32 by default;
float64 is supported end to end for gradient-check shadow mode.

vjp functions must return arrays that do not alias each other or the
upstream gradient, so accumulation can happen in place.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from . import kernels


class ShapeMismatchError(ValueError):
    """Operand shapes do not conform to a primitive's rule."""


class InvalidAttributeError(ValueError):
    """A primitive attribute (stride, padding, axis, ...) is invalid."""


class TapeError(RuntimeError):
    """Backward misuse: consumed tape, missing tape, or non-scalar root."""


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715

_tape_stack: list["Tape"] = []
_grad_enabled: bool = True


class Tape:
    """Ordered record of primitive applications for one backward pass."""

    __slots__ = ("_nodes", "consumed")

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], object]] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack.pop()

    def __len__(self) -> int:
        return len(self._nodes)


class no_grad:
    """Context manager that disables recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev


def _active_tape() -> "Tape | None":
    if _grad_enabled and _tape_stack:
        return _tape_stack[-1]
    return None


class Tensor:
    """Dense row-major float array with optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            # ndarrays keep their float precision (float64 = shadow mode);
            # python scalars/lists default to float32
            keep = isinstance(data, (np.ndarray, np.generic)) and data.dtype in (np.float32, np.float64)
            arr = np.asarray(data) if keep else np.asarray(data, dtype=np.float32)
        else:
            arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        # ascontiguousarray would promote 0-d to shape (1,); keep 0-d intact
        self.data = np.ascontiguousarray(arr) if arr.ndim else arr

        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._tape = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.grad = None
        t.requires_grad = False
        t._tape = None
        return t

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x, ref: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=ref.dtype))


def _record(out: Tensor, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        tape._nodes.append((out, inputs, vjp))
    return out


def _check_dtypes(name: str, *ts: Tensor) -> None:
    d0 = ts[0].data.dtype
    for t in ts[1:]:
        if t.data.dtype != d0:
            raise ShapeMismatchError(f"{name}: mixed dtypes {d0} and {t.data.dtype}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce gradient g down to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g.copy()
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return np.ascontiguousarray(g.reshape(shape))


def _broadcast_check(name: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor) and isinstance(b, Tensor):
        a = _as_tensor(a, b)
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a)
    _check_dtypes("add", a, b)
    _broadcast_check("add", a, b)
    out = Tensor(a.data + b.data)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor) and isinstance(b, Tensor):
        a = _as_tensor(a, b)
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a)
    _check_dtypes("sub", a, b)
    _broadcast_check("sub", a, b)
    out = Tensor(a.data - b.data)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor) and isinstance(b, Tensor):
        a = _as_tensor(a, b)
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a)
    _check_dtypes("mul", a, b)
    _broadcast_check("mul", a, b)
    out = Tensor(a.data * b.data)

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), vjp)


def div(a, b) -> Tensor:
    if not isinstance(a, Tensor) and isinstance(b, Tensor):
        a = _as_tensor(a, b)
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a)
    _check_dtypes("div", a, b)
    _broadcast_check("div", a, b)
    out = Tensor(a.data / b.data)

    def vjp(g):
        inv = 1.0 / b.data
        return (
            _unbroadcast(g * inv, a.shape),
            _unbroadcast(-g * a.data * inv * inv, b.shape),
        )

    return _record(out, (a, b), vjp)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes("matmul", a, b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeMismatchError(f"matmul: expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatchError(f"transpose: expects 2-D, got {a.shape}")
    out = Tensor(np.ascontiguousarray(a.data.T))

    def vjp(g):
        return (np.ascontiguousarray(g.T),)

    return _record(out, (a,), vjp)


def conv2d(x: Tensor, w: Tensor, stride: int | tuple[int, int] = 1, padding: int | tuple[int, int] = 0) -> Tensor:
    """2-D convolution, NCHW inputs, OIHW weights."""
    _check_dtypes("conv2d", x, w)
    sh, sw = (stride, stride) if isinstance(stride, int) else tuple(stride)
    ph, pw = (padding, padding) if isinstance(padding, int) else tuple(padding)
    if sh < 1 or sw < 1:
        raise InvalidAttributeError(f"conv2d: stride must be >= 1, got {(sh, sw)}")
    if ph < 0 or pw < 0:
        raise InvalidAttributeError(f"conv2d: padding must be >= 0, got {(ph, pw)}")
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeMismatchError(f"conv2d: expects 4-D x and w, got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeMismatchError(f"conv2d: channel mismatch, x has {x.shape[1]}, w expects {w.shape[1]}")
    if x.shape[2] + 2 * ph < w.shape[2] or x.shape[3] + 2 * pw < w.shape[3]:
        raise ShapeMismatchError(f"conv2d: kernel {w.shape[2:]} larger than padded input {x.shape[2:]}")
    y, ctx = kernels.conv2d(x.data, w.data, sh, sw, ph, pw)
    out = Tensor(y)
    need_gx, need_gw = x.requires_grad, w.requires_grad

    def vjp(g):
        return kernels.conv2d_backward(ctx, np.ascontiguousarray(g), need_gx, need_gw)

    return _record(out, (x, w), vjp)


# ---------------------------------------------------------------------------
# nonlinearities


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))

    def vjp(g):
        return (g * (x.data > 0.0),)

    return _record(out, (x,), vjp)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation GELU."""
    d = x.data
    u = _GELU_C * (d + _GELU_A * d * d * d)
    t = np.tanh(u)
    out = Tensor(0.5 * d * (1.0 + t))

    def vjp(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * d * d)
        return (g * (0.5 * (1.0 + t) + 0.5 * d * (1.0 - t * t) * du),)

    return _record(out, (x,), vjp)


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data))

    def vjp(g):
        return (g / x.data,)

    return _record(out, (x,), vjp)


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    out = Tensor(y)

    def vjp(g):
        return (g * y,)

    return _record(out, (x,), vjp)


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)
    out = Tensor(y)

    def vjp(g):
        # subgradient 0 at x == 0 keeps hinge losses finite at collapse
        safe = np.where(y > 0.0, y, 1.0)
        return (np.where(y > 0.0, 0.5 * g / safe, 0.0),)

    return _record(out, (x,), vjp)


def absval(x: Tensor) -> Tensor:
    out = Tensor(np.abs(x.data))

    def vjp(g):
        return (g * np.sign(x.data),)

    return _record(out, (x,), vjp)


def max_scalar(x: Tensor, c: float) -> Tensor:
    """Elementwise max(x, c); gradient flows only where x > c."""
    out = Tensor(np.maximum(x.data, c))

    def vjp(g):
        return (g * (x.data > c),)

    return _record(out, (x,), vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record(out, (x,), vjp)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    s = x.data - m
    lse = np.log(np.exp(s).sum(axis=axis, keepdims=True))
    y = s - lse
    out = Tensor(y)

    def vjp(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _record(out, (x,), vjp)


# ---------------------------------------------------------------------------
# reductions and shape ops


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % ndim for a in axes)
    if len(set(axes)) != len(axes):
        raise InvalidAttributeError(f"reduction axes repeat: {axes}")
    return axes


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.data.ndim)
    out = Tensor(x.data.sum(axis=axes, keepdims=keepdims))

    def vjp(g):
        gk = g if keepdims else np.expand_dims(g, axes)
        return (np.ascontiguousarray(np.broadcast_to(gk, x.shape)),)

    return _record(out, (x,), vjp)


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.data.ndim)
    n = int(np.prod([x.shape[a] for a in axes]))
    out = Tensor(x.data.mean(axis=axes, keepdims=keepdims))

    def vjp(g):
        gk = g if keepdims else np.expand_dims(g, axes)
        return (np.ascontiguousarray(np.broadcast_to(gk / n, x.shape)),)

    return _record(out, (x,), vjp)


def reduce_var(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Population variance along `axis`."""
    axes = _norm_axes(axis, x.data.ndim)
    n = int(np.prod([x.shape[a] for a in axes]))
    mu = x.data.mean(axis=axes, keepdims=True)
    centered = x.data - mu
    out = Tensor((centered * centered).mean(axis=axes, keepdims=keepdims))

    def vjp(g):
        gk = g if keepdims else np.expand_dims(g, axes)
        return ((2.0 / n) * centered * gk,)

    return _record(out, (x,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise ShapeMismatchError("concat: needs at least one tensor")
    _check_dtypes("concat", *ts)
    ndim = ts[0].data.ndim
    ax = axis % ndim
    for t in ts[1:]:
        if t.data.ndim != ndim or any(
            i != ax and t.shape[i] != ts[0].shape[i] for i in range(ndim)
        ):
            raise ShapeMismatchError(f"concat: incompatible shapes {[t.shape for t in ts]} along axis {ax}")
    out = Tensor(np.concatenate([t.data for t in ts], axis=ax))
    sizes = [t.shape[ax] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        pieces = []
        for i in range(len(ts)):
            sl = [slice(None)] * ndim
            sl[ax] = slice(int(offsets[i]), int(offsets[i + 1]))
            pieces.append(np.ascontiguousarray(g[tuple(sl)]))
        return tuple(pieces)

    return _record(out, tuple(ts), vjp)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous row slice along axis 0."""
    n = x.shape[0]
    if not (0 <= start <= stop <= n):
        raise InvalidAttributeError(f"slice_rows: [{start}, {stop}) out of range for {n} rows")
    out = Tensor(np.ascontiguousarray(x.data[start:stop]))

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[start:stop] = g
        return (gx,)

    return _record(out, (x,), vjp)


def reshape(x: Tensor, shape: Iterable[int]) -> Tensor:
    shape = tuple(shape)
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeMismatchError(f"reshape: cannot view {x.shape} as {shape}") from None
    out = Tensor(np.ascontiguousarray(y))

    def vjp(g):
        return (np.ascontiguousarray(g.reshape(x.shape)),)

    return _record(out, (x,), vjp)


# ---------------------------------------------------------------------------
# backward


def backward(root: Tensor) -> None:
    """Populate gradients of everything that contributed to scalar `root`."""
    if root.data.size != 1:
        raise TapeError(f"backward: root must be scalar, got shape {root.shape}")
    tape = root._tape
    if tape is None:
        raise TapeError("backward: root is not connected to a tape")
    if tape.consumed:
        raise TapeError("backward: tape already consumed; re-run the forward pass")
    tape.consumed = True
    root.grad = np.ones_like(root.data)
    for out, inputs, vjp in reversed(tape._nodes):
        g = out.grad
        if g is None:
            continue
        grads = vjp(g)
        for inp, gi in zip(inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp.grad is None:
                # first touch owns the buffer; read-only views must be copied
                inp.grad = gi if gi.flags.writeable else gi.copy()
            else:
                inp.grad += gi
