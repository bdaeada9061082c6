"""Dense numpy arrays with a reverse-mode gradient tape.

Every differentiable operation returns a new :class:`Tensor` that remembers
its parents and a closure mapping the upstream gradient to one gradient per
parent. :func:`backward` walks that graph once in reverse topological order.

Broadcasting follows numpy (trailing-dimension alignment); gradients of a
broadcast operand are reduce-summed back to the operand's shape.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ContractError, DimensionError

_local = threading.local()


def _flag(name: str, default):
    return getattr(_local, name, default)


def get_default_dtype() -> np.dtype:
    return np.dtype(_flag("dtype", np.float32))


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ContractError(f"default dtype must be float32 or float64, got {dtype}")
    _local.dtype = dtype


@contextmanager
def default_dtype(dtype):
    old = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


def is_grad_enabled() -> bool:
    return _flag("grad", True)


@contextmanager
def no_grad():
    """Evaluate without recording a tape."""
    old = is_grad_enabled()
    _local.grad = False
    try:
        yield
    finally:
        _local.grad = old


def is_shadow_mode() -> bool:
    return _flag("shadow", False)


@contextmanager
def surrogate_shadow():
    """Replace every Heaviside spike by its smooth surrogate primitive.

    Inside this context spike nodes carry real values in [0, 1], so the whole
    network becomes a differentiable function whose tape gradients can be
    compared against finite differences.
    """
    old = is_shadow_mode()
    _local.shadow = True
    try:
        yield
    finally:
        _local.shadow = old


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, Tensor):
        data = data.data
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype.kind != "f":
        arr = arr.astype(get_default_dtype())
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError as exc:
        raise DimensionError(f"shapes {a} and {b} are not broadcastable") from exc


def _norm_axis(axis, ndim: int):
    if axis is None:
        return None
    axes = (axis,) if np.isscalar(axis) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} out of range for {ndim}-d tensor")
        out.append(ax % ndim)
    return tuple(out)


class Tensor:
    """Real-valued array node on the gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward", "op", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._prev: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"
        self.name = name

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _make(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: Callable, op: str):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out.op = op
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._prev = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._prev = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._prev

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", op={self.op}" if self.op != "leaf" else ""
        return f"{type(self).__name__}(shape={self.shape}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    def backward(self, retain_graph: bool = False) -> None:
        backward(self, retain_graph=retain_graph)

    # -- arithmetic -----------------------------------------------------------
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
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce("sum", self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return reduce("mean", self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and not np.isscalar(shape[0]):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def expand(self, shape):
        return broadcast_to(self, shape)

    def take(self, indices, axis: int):
        return take(self, indices, axis)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return power(self, 0.5)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


# -- elementwise --------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data

    def bw(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return Tensor._make(ad * bd, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data

    def bw(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * ad / (bd * bd), bd.shape) if b.requires_grad else None,
        )

    return Tensor._make(ad / bd, (a, b), bw, "div")


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _lift(b, a)
    b = _lift(b)
    return _lift(a, b), b


def power(a: Tensor, exponent: float) -> Tensor:
    ad = a.data
    out = ad**exponent
    return Tensor._make(out, (a,), lambda g: (g * exponent * ad ** (exponent - 1),), "pow")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    return Tensor._make(np.log(ad), (a,), lambda g: (g / ad,), "log")


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "subtract": sub,
    "mul": mul,
    "multiply": mul,
    "div": div,
    "mask": mul,
}


def elementwise(op_kind: str, a, b=None) -> Tensor:
    """Dispatch a named elementwise operation.

    ``scale`` multiplies by the scalar ``b``; ``mask`` multiplies by a 0/1 array
    held constant on the tape; ``neg`` ignores ``b``.
    """
    if op_kind == "neg":
        return mul(_lift(a), -1.0)
    if op_kind == "scale":
        if b is None or not np.isscalar(b):
            raise ContractError("scale expects a scalar factor")
        return mul(_lift(a), float(b))
    if op_kind == "mask" and isinstance(b, Tensor):
        b = Tensor(b.data)
    try:
        fn = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op_kind!r}") from None
    if b is None:
        raise ContractError(f"{op_kind} needs two operands")
    return fn(a, b)


# -- linear algebra -----------------------------------------------------------
def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, batching over leading ones."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs operands with ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    try:
        out = np.matmul(ad, bd)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2:
                # fold every leading axis into rows: one GEMM instead of a batched one
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return Tensor._make(out, (a, b), bw, "matmul")


# -- reductions ---------------------------------------------------------------
def reduce(op_kind: str, a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Sum or mean over ``axis`` (``None`` reduces everything)."""
    a = _lift(a)
    axes = _norm_axis(axis, a.ndim)
    shape = a.shape
    if op_kind == "sum":
        out = a.data.sum(axis=axes, keepdims=keepdims)
        scale = 1.0
    elif op_kind == "mean":
        out = a.data.mean(axis=axes, keepdims=keepdims)
        count = a.size if axes is None else int(np.prod([shape[i] for i in axes]))
        scale = 1.0 / count
    else:
        raise ContractError(f"unknown reduction {op_kind!r}")
    out = np.asarray(out, dtype=a.dtype)

    def bw(g):
        if not keepdims and axes is not None:
            g = np.expand_dims(g, axes)
        elif not keepdims:
            g = np.reshape(g, (1,) * len(shape))
        return (np.broadcast_to(g * scale if scale != 1.0 else g, shape).copy(),)

    return Tensor._make(out, (a,), bw, op_kind)


# -- shape plumbing -----------------------------------------------------------
def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {old} to {shape}") from exc
    return type(a)._make(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    inv = None if axes is None else tuple(np.argsort(axes))
    return type(a)._make(out, (a,), lambda g: (np.transpose(g, inv),), "transpose")


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = a.shape
    if _broadcast_shape(old, shape) != shape:
        raise DimensionError(f"cannot broadcast {old} to {shape}")
    out = np.broadcast_to(a.data, shape)
    return type(a)._make(out, (a,), lambda g: (_unbroadcast(g, old),), "expand")


def getitem(a: Tensor, index) -> Tensor:
    if isinstance(index, Tensor):
        index = index.data
    out = a.data[index]
    shape, dtype = a.shape, a.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return type(a)._make(np.array(out, copy=True), (a,), bw, "getitem")


def take(a: Tensor, indices, axis: int) -> Tensor:
    """Gather slices ``indices`` along ``axis``."""
    idx = np.asarray(indices, dtype=np.intp)
    axis = _norm_axis(axis, a.ndim)[0]
    out = np.take(a.data, idx, axis=axis)
    shape, dtype = a.shape, a.dtype

    unique = len(np.unique(idx)) == len(idx)

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        sl = (slice(None),) * axis + (idx,)
        if unique:
            full[sl] = g
        else:
            np.add.at(full, sl, g)
        return (full,)

    return type(a)._make(out, (a,), bw, "take")


def index_add(base: Tensor, axis: int, indices, source: Tensor) -> Tensor:
    """Return ``base`` with ``source`` slices accumulated at ``indices`` along ``axis``."""
    base, source = _pair(base, source)
    idx = np.asarray(indices, dtype=np.intp)
    axis = _norm_axis(axis, base.ndim)[0]
    sl = (slice(None),) * axis + (idx,)
    out = base.data.copy()
    if len(np.unique(idx)) == len(idx):
        out[sl] += source.data
    else:
        np.add.at(out, sl, source.data)
    return Tensor._make(out, (base, source), lambda g: (g, np.take(g, idx, axis=axis)), "index_add")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return Tensor._make(out, tensors, lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return Tensor._make(out, (a,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),), "log_softmax")


# -- graph traversal ----------------------------------------------------------
def iter_graph(root: Tensor) -> Iterator[Tensor]:
    """Yield every tape node reachable from ``root`` in topological order (parents first)."""
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
        for p in node._prev:
            if id(p) not in seen:
                stack.append((p, False))
    return iter(order)


def backward(root: Tensor, grad: np.ndarray | None = None, retain_graph: bool = False) -> None:
    """Accumulate d root / d node into ``.grad`` of every node on the tape.

    Gradients add onto existing ``.grad`` values; clear them with
    ``zero_grad`` between steps. The tape is released afterwards unless
    ``retain_graph`` is set.
    """
    if grad is None:
        if root.size != 1:
            raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
        grad = np.ones_like(root.data)
    order = list(iter_graph(root))
    grads: dict[int, np.ndarray] = {id(root): np.asarray(grad, dtype=root.dtype)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._prev, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    if not retain_graph:
        for node in order:
            if node._prev:
                node._prev = ()
                node._backward = None


class SpikeTensor(Tensor):
    """Tensor whose entries are exactly 0 or 1, laid out as (T, B, N, D).

    Structure-preserving ops (reshape, transpose, take, getitem, expand) keep
    the spike type. Under :func:`surrogate_shadow` the binary check is
    suspended because spike nodes then hold surrogate values.
    """

    __slots__ = ()

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        super().__init__(data, requires_grad=requires_grad, dtype=dtype)
        if not is_shadow_mode() and not _is_binary(self.data):
            raise ContractError("spike tensor entries must be exactly 0 or 1")

    @property
    def bits(self) -> np.ndarray:
        return self.data.astype(np.uint8)

    @property
    def origin_tape(self):
        return self._backward

    def to_value(self) -> Tensor:
        """Identity view as a plain Tensor; gradients flow back to the spike producer."""
        return Tensor._make(self.data, (self,), lambda g: (g,), "to_value")

    @classmethod
    def from_value(cls, t: Tensor) -> "SpikeTensor":
        if not isinstance(t, Tensor):
            t = Tensor(t)
        if not is_shadow_mode() and not _is_binary(t.data):
            raise ContractError("value tensor is not binary")
        return cls._make(t.data, (t,), lambda g: (g,), "to_spike")

    def count(self) -> int:
        return int(np.count_nonzero(self.data))


def _is_binary(arr: np.ndarray) -> bool:
    return bool(np.all((arr == 0) | (arr == 1)))


def require_binary(t: Tensor, what: str = "input") -> None:
    if not is_shadow_mode() and not _is_binary(t.data):
        raise ContractError(f"{what} must be binary")
