"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records its inputs and a closure that maps the output
gradient to input gradients.  ``backward`` walks the recorded graph once in
reverse topological order and then releases it; a second call on the same
graph raises :class:`GraphConsumedError`.

Leaf tensors created with ``requires_grad=True`` accumulate into ``.grad``
across graphs, so optimizers must call :func:`zero_grad` between steps.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

LEAKY_SLOPE = 0.2

_grad_enabled = True


class GraphConsumedError(RuntimeError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation and sampling)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._consumed = False
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    @property
    def T(self):
        return transpose(self)

    def backward(self) -> None:
        backward(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._consumed = False
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# elementwise binary ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


# elementwise unary ----------------------------------------------------------

def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign to avoid overflow in exp
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    d = x.data
    scale = np.where(d > 0, 1.0, slope)
    return _make(d * scale, (x,), lambda g: (g * scale,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    d = x.data
    return _make(np.log(d), (x,), lambda g: (g / d,))


def square(x: Tensor) -> Tensor:
    d = x.data
    return _make(d * d, (x,), lambda g: (2.0 * g * d,))


# reductions and shape ops -----------------------------------------------------

def sum_(x: Tensor, axis=None) -> Tensor:
    shape = x.shape
    kept = np.sum(x.data, axis=axis, keepdims=True)
    out = kept.reshape(-1) if axis is None else np.squeeze(kept, axis=axis)
    if out.ndim == 0:
        out = out.reshape(1)
    return _make(out, (x,), lambda g: (np.broadcast_to(g.reshape(kept.shape), shape).copy(),))


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum_(x, axis), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ValueError(f"transpose expects a matrix, got shape {x.shape}")
    return _make(x.data.T, (x,), lambda g: (g.T,))


def getitem(x: Tensor, idx) -> Tensor:
    shape = x.shape

    def fn(g):
        full = np.zeros(shape)
        if _has_fancy(idx):
            np.add.at(full, idx, g.reshape(np.shape(x.data[idx])))
        else:
            full[idx] = g.reshape(np.shape(x.data[idx]))
        return (full,)

    return _make(np.array(x.data[idx], ndmin=1), (x,), fn)


def _has_fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ValueError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    splits = np.cumsum(sizes)[:-1]
    return _make(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


# linear algebra ---------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _make(a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


def _columns(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """im2col in channel-major layout ``[C*kh*kw, B*oh*ow]``; inner copy loops run along rows."""
    b, c, _, _ = xp.shape
    sb, sc, sh, sw = xp.strides
    win = as_strided(xp, shape=(c, kh, kw, b, oh, ow),
                     strides=(sc, sh, sw, sb, sh * stride, sw * stride), writeable=False)
    return np.ascontiguousarray(win).reshape(c * kh * kw, b * oh * ow)


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - k
    if span < 0 or span % stride:
        raise ValueError(
            f"conv2d: extent {size} with kernel {k}, stride {stride}, padding {padding} "
            f"does not give an integer output size")
    return span // stride + 1


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation (no kernel flip) of ``x[B,C,H,W]`` with ``w[F,C,kH,kW]``."""
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    b, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(wd, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _columns(xp, kh, kw, stride, oh, ow)
    wmat = w.data.reshape(f, c * kh * kw)
    out = (wmat @ cols).reshape(f, b, oh, ow).transpose(1, 0, 2, 3)

    def fn(g):
        gmat = g.transpose(1, 0, 2, 3).reshape(f, b * oh * ow)
        gw = (gmat @ cols.T).reshape(w.shape)
        gcols = (wmat.T @ gmat).reshape(c, kh, kw, b, oh, ow)
        gxp = np.zeros((c, b) + xp.shape[2:])
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += gcols[:, i, j]
        if padding:
            gxp = gxp[:, :, padding:padding + h, padding:padding + wd]
        return np.ascontiguousarray(gxp.transpose(1, 0, 2, 3)), gw

    return _make(np.ascontiguousarray(out), (x, w), fn)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x spatial upsampling of ``x[B,C,H,W]``."""
    b, c, h, w = x.shape
    out = np.broadcast_to(x.data[:, :, :, None, :, None], (b, c, h, 2, w, 2)).reshape(b, c, 2 * h, 2 * w)
    return _make(out, (x,), lambda g: (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),))


# backward ---------------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack_.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every gradient-requiring leaf reachable from ``loss``."""
    if loss._consumed:
        raise GraphConsumedError("backward already ran on this graph; rebuild it with a new forward pass")
    if loss.data.size != 1:
        raise ValueError(f"backward needs a single-element loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor that requires grad")
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._consumed:
            raise GraphConsumedError("graph reuses a tensor whose graph was already consumed")
        if node._backward is None:
            if g is not None and node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is not None:
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
        node._parents = ()
        node._backward = None
        node._consumed = True


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
