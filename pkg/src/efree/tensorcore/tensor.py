"""Dense tensors with a reverse-mode gradient tape.

Every differentiable operation records its parents and a closure that maps
the output gradient to one gradient per parent.  ``backward`` replays those
closures in reverse topological order.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

_state = threading.local()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.dtype(np.float32))


def grad_enabled() -> bool:
    return getattr(_state, "grad", True)


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for new tensors and parameters."""
    prev = default_dtype()
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = prev


@contextlib.contextmanager
def no_grad():
    prev = grad_enabled()
    _state.grad = False
    try:
        yield
    finally:
        _state.grad = prev


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, (np.ndarray, np.floating)) and np.issubdtype(data.dtype, np.floating):
                dtype = data.dtype
            else:
                dtype = default_dtype()
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.name = name

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # ---------------------------------------------------------------- backward
    def backward(self, grad: np.ndarray | None = None, retain_graph: bool = False) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable tensor."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            raise RuntimeError("loss does not require grad; nothing to differentiate")

        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            node.grad = g
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            if not retain_graph:
                node._backward = _freed
                node._parents = ()

    # ---------------------------------------------------------------- operators
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

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
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
        return swapaxes(self, -1, -2)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)


def _freed(g):
    raise RuntimeError("graph already freed by an earlier backward(); pass retain_graph=True")


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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None and isinstance(x, (int, float)):
        return Tensor(np.asarray(x), dtype=default_dtype())
    return Tensor(x, dtype=dtype)


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    """Wrap ``data`` as the output of a differentiable op.

    ``backward`` receives the output gradient and returns one gradient (or
    ``None``) per parent, in order.
    """
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"shapes {a.shape} and {b.shape} do not broadcast") from None


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    else:
        a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return a, b


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_op(a.data + b.data, (a, b),
                   lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_op(a.data - b.data, (a, b),
                   lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_op(a.data * b.data, (a, b),
                   lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data
    return make_op(out, (a, b),
                   lambda g: (unbroadcast(g / b.data, a.shape),
                              unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_op(-a.data, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return make_op(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return make_op(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise ValueError("log of negative input")
    return make_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise ValueError("sqrt of negative input")
    out = np.sqrt(a.data)
    return make_op(out, (a,), lambda g: (0.5 * g / out,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return make_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_op(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_op(a.data * mask, (a,), lambda g: (g * mask,))


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(a) -> Tensor:
    """GELU, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    x2 = x * x
    t = np.tanh(x * (_GELU_C + _GELU_C * 0.044715 * x2))
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C + (_GELU_C * 3 * 0.044715) * x2
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return make_op(out, (a,), backward)


def clamp(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip to [lo, hi]; gradient passes only where the input is strictly inside."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    mask = np.ones(a.shape, dtype=bool)
    if lo is not None:
        mask &= a.data > lo
    if hi is not None:
        mask &= a.data < hi
    return make_op(out, (a,), lambda g: (g * mask,))


def where(cond: np.ndarray, a, b) -> Tensor:
    """Select ``a`` where ``cond`` else ``b``; ``cond`` is a constant mask."""
    a, b = _pair(a, b)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.data, b.data)
    return make_op(out, (a, b),
                   lambda g: (unbroadcast(np.where(cond, g, 0), a.shape),
                              unbroadcast(np.where(cond, 0, g), b.shape)))


_UNARY = {
    "exp": exp, "log": log, "sigmoid": sigmoid, "tanh": tanh, "relu": relu,
    "gelu": gelu, "square": square, "sqrt": sqrt, "negate": neg,
}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op_kind: str, a, b=None, **kwargs) -> Tensor:
    """Dispatch an elementwise op by name (``clamp`` takes ``lo``/``hi``)."""
    if op_kind in _BINARY:
        if b is None:
            raise ValueError(f"{op_kind} needs two operands")
        return _BINARY[op_kind](a, b)
    if op_kind in _UNARY:
        return _UNARY[op_kind](a)
    if op_kind == "clamp":
        return clamp(a, **kwargs)
    raise ValueError(f"unknown elementwise op {op_kind!r}")


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_op(np.asarray(out), (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return make_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    return make_op(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]

    basic = _is_basic_index(idx)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return make_op(np.array(out, copy=True), (a,), backward)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in ts], axis=axis)
    return make_op(out, ts, lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)
    n = len(ts)
    return make_op(out, ts,
                   lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def pad2d(a, pad: int) -> Tensor:
    """Zero-pad the two trailing dimensions."""
    a = as_tensor(a)
    if pad == 0:
        return a
    widths = [(0, 0)] * (a.ndim - 2) + [(pad, pad), (pad, pad)]
    out = np.pad(a.data, widths)
    return make_op(out, (a,), lambda g: (g[..., pad:-pad, pad:-pad],))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul batch dims do not broadcast: {a.shape} @ {b.shape}") from None
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (None if ga is None else unbroadcast(ga, a.shape),
                None if gb is None else unbroadcast(gb, b.shape))

    return make_op(out, (a, b), backward)


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
