"""Reverse-mode differentiable tensors backed by numpy.

A :class:`Tensor` wraps a float array, an optional gradient buffer and the
closure that pushes its gradient to the tensors it was computed from.
Calling :meth:`Tensor.backward` on a scalar walks the recorded graph in
reverse topological order, visiting every node once; gradients accumulate
additively across fan-out.

Broadcasting rule for binary ops: operands must have the same rank, and any
axis may differ only if one side has extent 1 there (e.g. ``(N, C, 1, 1)``
against ``(N, C, H, W)``). Python scalars are always accepted. There is no
implicit rank promotion.

Activations and parameters are float32. Inside :func:`shadow64` every new
tensor is float64 instead; the gradient checker uses this.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "Tensor",
    "tensor",
    "zeros",
    "shadow64",
    "record_kinks",
    "get_dtype",
    "no_grad",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "power",
    "sqrt",
    "exp",
    "sin",
    "cos",
    "relu",
    "sigmoid",
    "clamp",
    "absolute",
    "tsum",
    "mean",
    "reshape",
    "transpose",
    "getitem",
    "take",
    "scatter_add",
    "concat",
    "stack",
    "matmul",
    "norm",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested op."""


_DTYPE = np.float32
_GRAD_ENABLED = True
_KINKS: list | None = None


def get_dtype():
    return _DTYPE


@contextlib.contextmanager
def shadow64():
    """Create all new tensors in float64 for the duration of the block."""
    global _DTYPE
    prev, _DTYPE = _DTYPE, np.float64
    try:
        yield
    finally:
        _DTYPE = prev


@contextlib.contextmanager
def no_grad():
    """Disable graph recording."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def record_kinks():
    """Collect the branch pattern of every non-smooth op evaluated inside.

    Yields a list that receives one boolean array per relu/clamp/abs/norm
    call. Two forward passes whose lists compare equal took the same side
    of every kink, so a finite difference between them is valid.
    """
    global _KINKS
    prev, _KINKS = _KINKS, []
    try:
        yield _KINKS
    finally:
        _KINKS = prev


def _log_kink(pattern: np.ndarray) -> None:
    if _KINKS is not None:
        _KINKS.append(pattern)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype != _DTYPE:
            arr = arr.astype(_DTYPE)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    # -- introspection ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self) -> int:
        return self.shape[0]

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- autograd ----------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Backpropagate from this tensor (a scalar unless ``grad`` is given)."""
        if grad is None:
            if self.size != 1:
                raise DimensionError(f"backward() needs a scalar, got shape {self.shape}")
            grad = np.ones(self.shape, dtype=self.data.dtype)
        order = _topo_order(self)
        self.grad = grad.astype(self.data.dtype, copy=True)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            g = g.reshape(self.data.shape)
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    # -- operators ---------------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_DTYPE), requires_grad=requires_grad)


def _wrap(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    return out


# -- broadcasting ------------------------------------------------------------

def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    if a.ndim != b.ndim:
        raise DimensionError(f"{op}: rank mismatch {a.shape} vs {b.shape}")
    bad = [i for i, (m, n) in enumerate(zip(a.shape, b.shape)) if m != n and m != 1 and n != 1]
    if bad:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} disagree on axes {bad}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum(), dtype=g.dtype)
    axes = tuple(i for i, (m, n) in enumerate(zip(g.shape, shape)) if n == 1 and m != 1)
    return g.sum(axis=axes, keepdims=True) if axes else g


# -- elementwise binary ------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), backward)


# -- elementwise unary ---------------------------------------------------------

def neg(a) -> Tensor:
    a = _wrap(a)
    return _make(-a.data, (a,), lambda g: a._accumulate(-g))


def power(a, p: float) -> Tensor:
    a = _wrap(a)

    def backward(g):
        a._accumulate(g * (p * a.data ** (p - 1)))

    return _make(a.data**p, (a,), backward)


def sqrt(a) -> Tensor:
    a = _wrap(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: a._accumulate(g * 0.5 / out))


def exp(a) -> Tensor:
    a = _wrap(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: a._accumulate(g * out))


def sin(a) -> Tensor:
    a = _wrap(a)
    return _make(np.sin(a.data), (a,), lambda g: a._accumulate(g * np.cos(a.data)))


def cos(a) -> Tensor:
    a = _wrap(a)
    return _make(np.cos(a.data), (a,), lambda g: a._accumulate(-g * np.sin(a.data)))


def relu(a) -> Tensor:
    a = _wrap(a)
    on = a.data > 0
    _log_kink(on)
    return _make(np.where(on, a.data, 0).astype(a.data.dtype), (a,), lambda g: a._accumulate(g * on))


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    x = a.data
    # branch-free and overflow-safe; sigmoid(0) is exactly 0.5
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)
    return _make(out, (a,), lambda g: a._accumulate(g * out * (1 - out)))


def clamp(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip to ``[lo, hi]``; the gradient is zero wherever the value saturated."""
    a = _wrap(a)
    x = a.data
    inside = np.ones(x.shape, dtype=bool)
    if lo is not None:
        inside &= x > lo
    if hi is not None:
        inside &= x < hi
    _log_kink(inside)
    out = np.clip(x, lo, hi).astype(x.dtype)
    return _make(out, (a,), lambda g: a._accumulate(g * inside))


def absolute(a) -> Tensor:
    a = _wrap(a)
    sign = np.sign(a.data)
    _log_kink(sign > 0)
    return _make(np.abs(a.data), (a,), lambda g: a._accumulate(g * sign))


# -- reductions and shape ------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _make(np.asarray(out, dtype=a.data.dtype), (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return mul(tsum(a, axes, keepdims), 1.0 / count)


def norm(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm along one axis; zero vectors get a zero subgradient."""
    a = _wrap(a)
    out = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    nz = out > 0
    _log_kink(nz)

    def backward(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        safe = np.where(nz, out, 1)
        a._accumulate(gk * a.data / safe * nz)

    res = out if keepdims else np.squeeze(out, axis=axis)
    return _make(res, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from exc
    return _make(out, (a,), lambda g: a._accumulate(g.reshape(a.shape)))


def transpose(a, axes=None) -> Tensor:
    a = _wrap(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make(out, (a,), lambda g: a._accumulate(np.transpose(g, inv)))


def getitem(a, idx) -> Tensor:
    """Basic indexing (ints and slices). Use :func:`take` for index arrays."""
    a = _wrap(a)
    out = a.data[idx]

    def backward(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[idx] = g
        a._accumulate(full)

    return _make(np.array(out), (a,), backward)


def take(a, indices, axis: int = 0) -> Tensor:
    """Gather slices along ``axis``; repeated indices accumulate on backward."""
    a = _wrap(a)
    idx = np.asarray(indices, dtype=np.intp)
    out = np.take(a.data, idx, axis=axis)

    def backward(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, idx.ravel(), np.moveaxis(g, axis, 0).reshape((idx.size,) + moved.shape[1:]))
        a._accumulate(full)

    return _make(out, (a,), backward)


def scatter_add(src, indices, size: int) -> Tensor:
    """Sum rows of ``src`` into a ``size``-row output at ``indices``."""
    src = _wrap(src)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.shape != src.shape[:1]:
        raise DimensionError(f"scatter_add: {idx.shape[0]} indices for {src.shape[0]} rows")
    out = np.zeros((size,) + src.shape[1:], dtype=src.data.dtype)
    np.add.at(out, idx, src.data)
    return _make(out, (src,), lambda g: src._accumulate(g[idx]))


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def backward(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return _make(out, ts, backward)


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def backward(g):
        for i, t in enumerate(ts):
            if t.requires_grad:
                t._accumulate(np.take(g, i, axis=axis))

    return _make(out, ts, backward)


def matmul(a, b) -> Tensor:
    """Matrix product for 1-D/2-D operands (numpy semantics)."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim > 2 or b.ndim > 2 or a.ndim == 0 or b.ndim == 0:
        raise DimensionError(f"matmul supports 1-D/2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: inner extents differ, {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g if g.ndim == 2 else None
        if a.requires_grad:
            if a.ndim == 1 and b.ndim == 1:
                a._accumulate(g * b.data)
            elif a.ndim == 1:
                a._accumulate(b.data @ g)
            elif b.ndim == 1:
                a._accumulate(np.outer(g, b.data))
            else:
                a._accumulate(ga @ b.data.T)
        if b.requires_grad:
            if a.ndim == 1 and b.ndim == 1:
                b._accumulate(g * a.data)
            elif a.ndim == 1:
                b._accumulate(np.outer(a.data, g))
            elif b.ndim == 1:
                b._accumulate(a.data.T @ g)
            else:
                b._accumulate(a.data.T @ ga)

    return _make(np.asarray(out), (a, b), backward)
