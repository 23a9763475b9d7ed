"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array.  Every primitive below records its
parents and a backward closure when any input requires a gradient, so the
graph is built implicitly during the forward pass.  ``Tensor.backward`` walks
that graph in reverse topological order and accumulates gradients additively.

Shape rules are strict: elementwise binary ops require identical shapes, with
a single exception for bias-add (the second operand matches the trailing
dimensions of the first).  Anything else must be expanded explicitly with
:func:`expand`.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ConfigError, DimensionError, NumericError

_DEFAULT_DTYPE = np.float64
_GRAD_ENABLED = True


def set_default_dtype(dtype) -> None:
    """Set the dtype used when a tensor is built from non-float data."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ConfigError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A node in the computation graph.

    ``grad`` reads as zeros until a backward pass reaches the node.
    """

    __slots__ = ("data", "requires_grad", "_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f":
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._grad = None
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            return np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = None if value is None else np.asarray(value, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self._grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    def _accumulate(self, g: np.ndarray) -> None:
        # never in-place: the same array may be handed to several parents
        if self._grad is None:
            self._grad = g
        else:
            self._grad = self._grad + g

    def backward(self) -> None:
        """Back-propagate from this scalar node."""
        if self.data.size != 1:
            raise DimensionError(f"backward() needs a scalar output, got shape {self.shape}")
        if not self.requires_grad:
            return
        order = _topological_order(self)
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node._grad is not None:
                node._backward(node._grad)

    # -- operator sugar ---------------------------------------------------
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out._grad = None
    out.name = None
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _trailing_match(big: tuple, small: tuple) -> bool:
    return len(small) <= len(big) and big[len(big) - len(small):] == small


# -- elementwise ----------------------------------------------------------
def add(a, b) -> Tensor:
    """Elementwise sum; ``b`` may match only the trailing dims of ``a`` (bias-add)."""
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    if a.shape == b.shape:
        def backward(g):
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(g)
        return _make(a.data + b.data, (a, b), backward)
    if _trailing_match(a.shape, b.shape):
        big, small = a, b
    elif _trailing_match(b.shape, a.shape):
        big, small = b, a
    else:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}")
    lead = tuple(range(big.ndim - small.ndim))

    def backward(g):
        if big.requires_grad:
            big._accumulate(g)
        if small.requires_grad:
            small._accumulate(g.sum(axis=lead))
    return _make(a.data + b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(-g)
    return _make(-a.data, (a,), backward)


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    return add(a, neg(b))


def mul(a, b) -> Tensor:
    """Elementwise product of equal shapes, or scaling by a Python number."""
    if isinstance(b, (int, float)) and not isinstance(a, (int, float)):
        return _scale(_as_tensor(a), float(b))
    if isinstance(a, (int, float)):
        return _scale(_as_tensor(b), float(a))
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    if a.shape != b.shape:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)
    return _make(a.data * b.data, (a, b), backward)


def _scale(a: Tensor, k: float) -> Tensor:
    k = a.dtype.type(k)

    def backward(g):
        a._accumulate(g * k)
    return _make(a.data * k, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - y * y))
    return _make(y, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    y = expit(a.data)

    def backward(g):
        a._accumulate(g * y * (1.0 - y))
    return _make(y, (a,), backward)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def backward(g):
        a._accumulate(g * y)
    return _make(y, (a,), backward)


def log(a: Tensor) -> Tensor:
    x = a.data

    def backward(g):
        a._accumulate(g / x)
    return _make(np.log(x), (a,), backward)


# -- normalizers ------------------------------------------------------------
def softmax_array(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-shifted softmax on a raw array."""
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax_array(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    y = softmax_array(a.data, axis)

    def backward(g):
        a._accumulate(y * (g - np.sum(g * y, axis=axis, keepdims=True)))
    return _make(y, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    y = log_softmax_array(a.data, axis)

    def backward(g):
        a._accumulate(g - np.exp(y) * np.sum(g, axis=axis, keepdims=True))
    return _make(y, (a,), backward)


# -- linear algebra -----------------------------------------------------------
def matmul(a, b) -> Tensor:
    """2-D matrix product."""
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ B.T)
        if b.requires_grad:
            b._accumulate(A.T @ g)
    return _make(A @ B, (a, b), backward)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        a._accumulate(np.transpose(g, inverse))
    return _make(np.transpose(a.data, axes), (a,), backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape

    def backward(g):
        a._accumulate(g.reshape(old))
    return _make(a.data.reshape(shape), (a,), backward)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, shape).copy())
    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def expand(a: Tensor, axis: int, n: int) -> Tensor:
    """Insert a new axis of extent ``n`` at ``axis`` by repetition."""
    ex = np.expand_dims(a.data, axis)
    shape = list(ex.shape)
    shape[axis] = n

    def backward(g):
        a._accumulate(g.sum(axis=axis))
    return _make(np.broadcast_to(ex, shape).copy(), (a,), backward)


# -- structural ---------------------------------------------------------------
def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or t.shape[:ax] + t.shape[ax + 1:] != tensors[0].shape[:ax] + tensors[0].shape[ax + 1:]:
            raise DimensionError(f"cannot concat shapes {[x.shape for x in tensors]} on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * nd
                idx[ax] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])
    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    first = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != first:
            raise DimensionError(f"cannot stack shapes {[x.shape for x in tensors]}")

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(np.take(g, i, axis=axis))
    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, backward)


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) and not isinstance(i, bool)
               for i in items)


def take(a: Tensor, index) -> Tensor:
    """Slice or gather with numpy indexing; gathered duplicates sum on backward."""
    out = a.data[index]
    basic = _is_basic_index(index)
    shape, dtype = a.shape, a.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        a._accumulate(full)
    if basic:
        out = out.copy()
    return _make(out, (a,), backward)


slice_ = take


# -- convolution --------------------------------------------------------------
def conv1d(signal: Tensor, filters: Tensor) -> Tensor:
    """Centered zero-padded 1-D convolution.

    ``signal`` has shape ``[..., T]`` and ``filters`` ``[k, r]`` with odd ``r``;
    the result has shape ``[..., T, k]`` with
    ``out[..., t, f] = sum_d filters[f, d + p] * signal[..., t + d]`` for
    ``d`` in ``[-p, p]``, ``p = (r - 1) // 2``.
    """
    signal = _as_tensor(signal)
    filters = _as_tensor(filters, signal)
    if filters.ndim != 2:
        raise DimensionError(f"filters must be 2-D [k, r], got {filters.shape}")
    k, r = filters.shape
    if r % 2 == 0:
        raise ConfigError(f"conv1d filter width must be odd, got {r}")
    p = (r - 1) // 2
    T = signal.shape[-1]
    pad = [(0, 0)] * (signal.ndim - 1) + [(p, p)]
    padded = np.pad(signal.data, pad)
    windows = sliding_window_view(padded, r, axis=-1)  # [..., T, r]
    Fm = filters.data
    out = windows @ Fm.T

    def backward(g):
        if filters.requires_grad:
            gf = g.reshape(-1, k).T @ windows.reshape(-1, r)
            filters._accumulate(gf)
        if signal.requires_grad:
            gw = g @ Fm  # [..., T, r]
            gpad = np.zeros(padded.shape, dtype=padded.dtype)
            for j in range(r):
                gpad[..., j:j + T] += gw[..., j]
            signal._accumulate(gpad[..., p:p + T])
    return _make(out, (signal, filters), backward)


# -- gradient checking ----------------------------------------------------------
def grad_check(f: Callable[[], Tensor], params: Iterable[Tensor], h: float = 1e-5,
               samples: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Largest relative error between reverse-mode and central-difference gradients.

    ``f`` is re-evaluated with each sampled parameter element nudged by ``±h``.
    At most ``samples`` elements per parameter are checked (all if ``None``).
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    out = f()
    _check_finite(out)
    out.backward()
    analytic = [p.grad.copy() for p in params]
    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    with no_grad():
        for p, g_ad in zip(params, analytic):
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if samples is not None and flat.size > samples:
                idx = rng.choice(flat.size, size=samples, replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + h
                fp = _check_finite(f())
                flat[i] = orig - h
                fm = _check_finite(f())
                flat[i] = orig
                g_fd = (fp - fm) / (2.0 * h)
                ga = g_ad.reshape(-1)[i]
                err = abs(ga - g_fd) / max(abs(ga), abs(g_fd), 1e-8)
                worst = max(worst, err)
    return worst


def _check_finite(t: Tensor) -> float:
    v = np.asarray(t.data, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise NumericError("function value is not finite")
    return float(v.sum())
