"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every primitive evaluates eagerly with numpy and, when any input requires a
gradient, records a node holding its parents and a vector-Jacobian closure.
``Tensor.backward`` walks the recorded graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

LOG_CLAMP = 1e-300

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Evaluate primitives without recording graph nodes."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class ShapeError(ValueError):
    """Raised when a primitive receives incompatible operand shapes."""


class Tensor:
    """An n-d float64 array that may carry an accumulated gradient."""

    __slots__ = ("data", "requires_grad", "grad", "name", "op", "_parents", "_backward")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # ------------------------------------------------------------------ basics
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
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    # ------------------------------------------------------------- operators
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

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    # -------------------------------------------------------------- backward
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every tracked leaf.

        Only scalar roots are accepted. Repeated calls add to existing grads.
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar root, got shape {self.shape}")
        if not self.requires_grad:
            return
        order = Graph.trace(self).nodes
        adj: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = adj.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = np.array(g, dtype=np.float64) if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                prev = adj.get(key)
                adj[key] = pg if prev is None else prev + pg


class Graph:
    """Ordered record of the operations reachable from a root tensor."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Graph":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def ops(self) -> list[str]:
        return [n.op for n in self.nodes]

    def __len__(self) -> int:
        return len(self.nodes)


# ---------------------------------------------------------------- helpers
def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data if type(data) is np.ndarray else np.asarray(data, dtype=np.float64)
    out.grad = None
    out.name = None
    out.op = op
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = track
    out._parents = parents if track else ()
    out._backward = backward if track else None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ------------------------------------------------------------- elementwise
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    A, B = a.data, b.data

    def back(g):
        ga = _unbroadcast(g * B, A.shape) if a.requires_grad else None
        gb = _unbroadcast(g * A, B.shape) if b.requires_grad else None
        return ga, gb

    return _node(A * B, (a, b), back, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    A, B = a.data, b.data
    out = A / B

    def back(g):
        ga = _unbroadcast(g / B, A.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / B, B.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), back, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    A = a.data
    return _node(A**p, (a,), lambda g: (g * p * A ** (p - 1),), "pow")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    """Natural log with the argument clamped below at 1e-300."""
    a = as_tensor(a)
    A = a.data
    clamped = np.maximum(A, LOG_CLAMP)

    def back(g):
        return (np.where(A >= LOG_CLAMP, g / clamped, 0.0),)

    return _node(np.log(clamped), (a,), back, "log")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid_np(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a) -> Tensor:
    a = as_tensor(a)
    A = a.data
    return _node(np.maximum(A, 0.0), (a,), lambda g: (g * (A > 0),), "relu")


def softplus(a) -> Tensor:
    """log(1 + exp(a)), evaluated without overflow."""
    a = as_tensor(a)
    A = a.data
    return _node(np.logaddexp(0.0, A), (a,), lambda g: (g * _sigmoid_np(A),), "softplus")


def absolute(a) -> Tensor:
    a = as_tensor(a)
    A = a.data
    return _node(np.abs(A), (a,), lambda g: (g * np.sign(A),), "abs")


def maximum(a, b) -> Tensor:
    """Elementwise max; ties route the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("maximum", a, b)
    A, B = a.data, b.data
    pick_a = A >= B

    def back(g):
        return _unbroadcast(g * pick_a, A.shape), _unbroadcast(g * ~pick_a, B.shape)

    return _node(np.where(pick_a, A, B), (a, b), back, "maximum")


# ------------------------------------------------------------ linear algebra
def matmul(a, b) -> Tensor:
    """``a @ b`` for ``a`` of rank >= 1 and ``b`` of rank 1 or 2."""
    a, b = as_tensor(a), as_tensor(b)
    A, B = a.data, b.data
    if B.ndim not in (1, 2) or A.ndim < 1 or A.shape[-1] != B.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {A.shape} and {B.shape}")
    k = A.shape[-1]

    if B.ndim == 2:
        def back(g):
            ga = g @ B.T if a.requires_grad else None
            gb = None
            if b.requires_grad:
                lead = tuple(range(A.ndim - 1))
                gb = np.tensordot(A, g, axes=(lead, lead)) if lead else np.outer(A, g)
            return ga, gb

    else:

        def back(g):
            ga = g[..., None] * B if a.requires_grad else None
            gb = (A * g[..., None]).reshape(-1, k).sum(axis=0) if b.requires_grad else None
            return ga, gb

    return _node(A @ B, (a, b), back, "matmul")


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


# -------------------------------------------------------------- reductions
def _expand(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return _node(np.asarray(out), (a,), lambda g: (_expand(g, shape, axis, keepdims),), "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = np.asarray(a.data.mean(axis=axis, keepdims=keepdims))
    n = a.data.size / max(out.size, 1)
    return _node(out, (a,), lambda g: (_expand(g / n, shape, axis, keepdims),), "mean")


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Stable log(sum(exp(a))) along ``axis``."""
    a = as_tensor(a)
    A = a.data
    m = np.max(A, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.sum(np.exp(A - m), axis=axis, keepdims=True)
    out_k = m + np.log(s)
    out = out_k if keepdims else np.squeeze(out_k, axis=axis)

    def back(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        return (gk * np.exp(A - out_k),)

    return _node(out, (a,), back, "logsumexp")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    A = a.data
    e = np.exp(A - np.max(A, axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _node(out, (a,), back, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    A = a.data
    m = np.max(A, axis=axis, keepdims=True)
    lse = m + np.log(np.sum(np.exp(A - m), axis=axis, keepdims=True))
    out = A - lse

    def back(g):
        return (g - np.exp(out) * np.sum(g, axis=axis, keepdims=True),)

    return _node(out, (a,), back, "log_softmax")


# ---------------------------------------------------------------- indexing
def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    basic = _is_basic(idx)

    def back(g):
        z = np.zeros(shape)
        if basic:
            z[idx] += g
        else:
            np.add.at(z, idx, g)
        return (z,)

    return _node(np.array(a.data[idx]), (a,), back, "getitem")


def embedding(table, ids) -> Tensor:
    """Row lookup ``table[ids]`` for an integer id array of any shape."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding: id out of range for table with {table.shape[0]} rows")
    return getitem(table, ids)


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _node(out, tuple(ts), lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"stack: incompatible shapes {[t.shape for t in ts]}") from None

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _node(out, tuple(ts), back, "stack")


# -------------------------------------------------------- gradient checking
def _checked_value(out: Tensor, where: str) -> float:
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ValueError("grad_check: function must return a scalar Tensor")
    v = out.item()
    if not np.isfinite(v):
        raise FloatingPointError(f"grad_check: non-finite value at {where}")
    return v


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Largest |analytic - central difference| / max(1, |analytic|) over coordinates of x."""
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"grad_check: eps must lie in [1e-7, 1e-3], got {eps}")
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    leaf = Tensor(x0, requires_grad=True)
    out = f(leaf)
    _checked_value(out, "the base point")
    out.backward()
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(x0)
    worst = 0.0
    with no_grad():
        for i in range(x0.size):
            xp = x0.copy()
            xm = x0.copy()
            xp.flat[i] += eps
            xm.flat[i] -= eps
            coord = np.unravel_index(i, x0.shape) if x0.ndim else ()
            fp = _checked_value(f(Tensor(xp)), f"coordinate {coord} (+eps)")
            fm = _checked_value(f(Tensor(xm)), f"coordinate {coord} (-eps)")
            a = analytic.flat[i]
            if not np.isfinite(a):
                raise FloatingPointError(f"grad_check: non-finite gradient at coordinate {coord}")
            num = (fp - fm) / (2 * eps)
            worst = max(worst, abs(a - num) / max(1.0, abs(a)))
    return worst


def grad_check_params(loss: Callable[[], Tensor], params: dict[str, Tensor], eps: float = 1e-5,
                      max_coords: int | None = None, rng: np.random.Generator | None = None) -> dict[str, float]:
    """Per-parameter worst relative error for a closure over leaf tensors.

    Parameters are perturbed in place and restored. With ``max_coords`` only a
    random subset of coordinates of each tensor is probed.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"grad_check: eps must lie in [1e-7, 1e-3], got {eps}")
    for p in params.values():
        p.grad = None
    out = loss()
    _checked_value(out, "the base point")
    out.backward()
    report = {}
    with no_grad():
        for name, p in params.items():
            analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
            coords = np.arange(p.data.size)
            if max_coords is not None and coords.size > max_coords:
                coords = (rng or np.random.default_rng(0)).choice(coords, max_coords, replace=False)
            worst = 0.0
            for i in coords:
                orig = p.data.flat[i]
                p.data.flat[i] = orig + eps
                fp = _checked_value(loss(), f"{name}[{i}] (+eps)")
                p.data.flat[i] = orig - eps
                fm = _checked_value(loss(), f"{name}[{i}] (-eps)")
                p.data.flat[i] = orig
                a = analytic.flat[i]
                if not np.isfinite(a):
                    raise FloatingPointError(f"grad_check: non-finite gradient at {name}[{i}]")
                worst = max(worst, abs(a - (fp - fm) / (2 * eps)) / max(1.0, abs(a)))
            report[name] = worst
    return report
