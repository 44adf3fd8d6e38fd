"""Dense float32 tensors with tape-free reverse-mode differentiation.

Each :class:`Tensor` produced by an operation keeps references to its parents
and a closure that pushes its gradient back to them; :meth:`Tensor.backward`
walks the resulting DAG in reverse topological order. Gradients reaching a
tensor along several paths are summed.

Broadcasting is deliberately narrow. The only implicit cases are:

* ``add(a, b)`` where ``b.shape`` equals the trailing dims of ``a.shape``
  (bias rows), and
* ``mul(a, s)`` where ``s`` is a 0-d tensor (e.g. an inverse temperature).

Everything else requires an explicit :func:`broadcast_to` or :func:`reshape`.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .errors import ContractError, DomainError, ShapeError

LAYERNORM_EPS = 1e-5
_DTYPE = np.float32
_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (evaluation)."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def float64_shadow():
    """Temporarily build new tensors in float64.

    Only meant for finite-difference oracles in gradient checks; the model
    code always runs in float32.
    """
    global _DTYPE
    prev, _DTYPE = _DTYPE, np.float64
    try:
        yield
    finally:
        _DTYPE = prev


class Tensor:
    """An n-d float array plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "grad", "requires_grad", "op", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 *, _parents: tuple = (), _op: str = "leaf",
                 _backward: Callable | None = None):
        arr = np.asarray(data)
        if arr.dtype != _DTYPE or not arr.flags.c_contiguous:
            arr = np.asarray(arr, dtype=_DTYPE, order="C")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = _op
        self.name = name
        self._parents = _parents
        self._backward = _backward

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

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, op={self.op})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar root, got shape {self.shape}")
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not _needs_grad(parent):
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


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
            if id(p) not in seen and _needs_grad(p):
                stack.append((p, False))
    return order


def _make(data, parents: Sequence[Tensor], op: str, backward: Callable) -> Tensor:
    if _GRAD_ENABLED and any(_needs_grad(p) for p in parents):
        return Tensor(data, _parents=tuple(parents), _op=op, _backward=backward)
    return Tensor(data, _op=op)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


# ---------------------------------------------------------------- arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _make(a.data + b.data, (a, b), "add", lambda g: (g, g))
    nb = b.ndim
    if 0 < nb < a.ndim and a.shape[-nb:] == b.shape:
        lead = tuple(range(a.ndim - nb))
        return _make(a.data + b.data, (a, b), "add_bias", lambda g: (g, g.sum(axis=lead)))
    raise ShapeError(f"add: shapes {a.shape} and {b.shape} are not compatible")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _make(a.data * b.data, (a, b), "mul", lambda g: (g * b.data, g * a.data))
    if b.ndim == 0:
        return _make(a.data * b.data, (a, b), "mul_scalar",
                     lambda g: (g * b.data, np.asarray((g * a.data).sum(), dtype=g.dtype)))
    raise ShapeError(f"mul: shapes {a.shape} and {b.shape} are not compatible")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(x.data * x.data.dtype.type(c), (x,), "scale",
                 lambda g: (g * g.dtype.type(c),))


def neg(x: Tensor) -> Tensor:
    return scale(x, -1.0)


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), "exp", lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise DomainError("log: input must be strictly positive")
    return _make(np.log(x.data), (x,), "log", lambda g: (g / x.data,))


def gelu(x: Tensor) -> Tensor:
    flat = x.data.reshape(-1, x.shape[-1]) if x.ndim else x.data.reshape(1, 1)
    y = kernels.gelu_fwd(flat).reshape(x.shape)

    def back(g):
        return (kernels.gelu_bwd(flat, g.reshape(flat.shape)).reshape(x.shape),)

    return _make(y, (x,), "gelu", back)


# ------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``b`` is either 2-D (shared across any leading dims of ``a``, i.e. a
    linear layer) or has exactly the same leading dims as ``a`` (batched).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if b.ndim == 2:
        out = a.data @ b.data

        def back(g):
            ga = g @ b.data.T
            a2 = a.data.reshape(-1, a.shape[-1])
            gb = a2.T @ g.reshape(-1, g.shape[-1])
            return ga, gb

        return _make(out, (a, b), "matmul", back)
    if a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dims differ between {a.shape} and {b.shape}")
    out = a.data @ b.data

    def back_batched(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return _make(out, (a, b), "bmatmul", back_batched)


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    if x.ndim < 2:
        raise ShapeError(f"transpose: need at least 2 dims, got {x.shape}")
    return _make(np.swapaxes(x.data, -1, -2), (x,), "transpose",
                 lambda g: (np.swapaxes(g, -1, -2),))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute: {axes} is not a permutation of {x.ndim} axes")
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), "permute",
                 lambda g: (np.transpose(g, inv),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from exc
    return _make(out, (x,), "reshape", lambda g: (g.reshape(x.shape),))


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Repeat ``x`` along new leading axes so that it has ``shape``."""
    shape = tuple(shape)
    if shape[len(shape) - x.ndim:] != x.shape:
        raise ShapeError(f"broadcast_to: {x.shape} does not match trailing dims of {shape}")
    lead = tuple(range(len(shape) - x.ndim))
    return _make(np.broadcast_to(x.data, shape), (x,), "broadcast",
                 lambda g: (g.sum(axis=lead) if lead else g,))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along ``axis`` (default: last); other dims must agree."""
    xs = [as_tensor(t) for t in xs]
    if not xs:
        raise ShapeError("concat: no inputs")
    nd = xs[0].ndim
    ax = axis % nd
    for t in xs[1:]:
        if t.ndim != nd or t.shape[:ax] + t.shape[ax + 1:] != xs[0].shape[:ax] + xs[0].shape[ax + 1:]:
            raise ShapeError(f"concat: shapes {[t.shape for t in xs]} disagree off axis {axis}")
    sizes = [t.shape[ax] for t in xs]
    bounds = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(np.concatenate([t.data for t in xs], axis=ax), xs, "concat", back)


def slice_axis(x: Tensor, axis: int, start: int, stop: int | None = None) -> Tensor:
    """Take ``x[..., start:stop, ...]`` along ``axis``; ``stop=None`` selects one index and drops the axis."""
    ax = axis % x.ndim
    index: list = [slice(None)] * x.ndim
    index[ax] = start if stop is None else slice(start, stop)
    index = tuple(index)
    out = x.data[index]

    def back(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _make(out, (x,), "slice", back)


def embedding(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table`` (V x d) at integer ``ids`` of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DomainError(f"embedding: ids must lie in [0, {table.shape[0]})")

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return _make(table.data[ids], (table,), "embedding", back)


def diagonal(x: Tensor) -> Tensor:
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ShapeError(f"diagonal: need a square matrix, got {x.shape}")
    n = x.shape[0]

    def back(g):
        full = np.zeros_like(x.data)
        full[np.arange(n), np.arange(n)] = g
        return (full,)

    return _make(np.diagonal(x.data).copy(), (x,), "diagonal", back)


# ---------------------------------------------------------------- reductions

def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    out = x.data.sum(axis=axis)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _make(out, (x,), "sum", back)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    return scale(sum(x, axis), 1.0 / n)


# --------------------------------------------------------- row normalisations

def _rows(x: Tensor) -> np.ndarray:
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ShapeError(f"row op: last dim must be >= 1, got {x.shape}")
    return x.data.reshape(-1, x.shape[-1])


def softmax(x: Tensor) -> Tensor:
    y = kernels.softmax_fwd(_rows(x)).reshape(x.shape)

    def back(g):
        return (kernels.softmax_bwd(y.reshape(-1, x.shape[-1]),
                                    g.reshape(-1, x.shape[-1])).reshape(x.shape),)

    return _make(y, (x,), "softmax", back)


def log_softmax(x: Tensor) -> Tensor:
    rows = _rows(x)
    z = rows - rows.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    y = (z - lse).reshape(x.shape)
    p = np.exp(y)

    def back(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _make(y, (x,), "log_softmax", back)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYERNORM_EPS) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then apply gain and bias."""
    rows = _rows(x)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layernorm: gain/bias must have shape ({d},), got {gain.shape}, {bias.shape}")
    y, xhat, rstd = kernels.layernorm_fwd(rows, gain.data, bias.data, eps)

    def back(g):
        dx, dgain, dbias = kernels.layernorm_bwd(g.reshape(-1, d), xhat, rstd, gain.data)
        return dx.reshape(x.shape), dgain, dbias

    return _make(y.reshape(x.shape), (x, gain, bias), "layernorm", back)


def l2_normalize(x: Tensor) -> Tensor:
    """Scale every row of the last axis to unit Euclidean norm; zero rows are an error."""
    rows = _rows(x)
    norm = np.sqrt((rows * rows).sum(axis=1, keepdims=True))
    if np.any(norm == 0):
        raise DomainError("l2_normalize: cannot normalise a zero vector")
    y = (rows / norm)

    def back(g):
        g2 = g.reshape(rows.shape)
        return (((g2 - y * (g2 * y).sum(axis=1, keepdims=True)) / norm).reshape(x.shape),)

    return _make(y.reshape(x.shape), (x,), "l2_normalize", back)

