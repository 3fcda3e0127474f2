"""Minimal dense-array reverse-mode differentiation engine.

Tensors wrap float64 numpy arrays and record the operations that produced
them; `backward` on a scalar output fills the `.grad` accumulator of every
tensor that requires gradients. Broadcasting is restricted to leading-
dimension expansion (the smaller operand's shape must be a suffix of the
larger's); anything else needs an explicit reshape or broadcast_to. The
engine targets desk-scale exactness, not speed.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError

__all__ = [
    "Tensor", "as_tensor", "backward", "grad_check",
    "matmul", "add", "sub", "mul", "div", "scale", "mean", "tsum",
    "concat", "narrow", "split", "sigmoid", "softmax", "relu", "log",
    "sqrt", "clip", "layer_norm", "reshape", "transpose", "take_rows",
    "upsample_nearest", "broadcast_to", "stack",
]


class Tensor:
    """Dense float64 array node in a reverse-mode graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...],
          vjp: Callable[[np.ndarray], tuple[np.ndarray, ...]]) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    """Reverse-topological operation record of the graph below `root`."""
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


def backward(loss: Tensor) -> None:
    """Populate `.grad` on every requires_grad tensor reachable from `loss`.

    Gradients accumulate across calls; reset `.grad = None` between steps.
    """
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg


# ---------------------------------------------------------------------------
# broadcasting (leading-dimension expansion only)

def _check_suffix(big: tuple[int, ...], small: tuple[int, ...], op: str) -> None:
    if len(small) > len(big) or (len(small) and big[len(big) - len(small):] != small):
        raise ShapeError(f"{op}: shapes {big} and {small} are not "
                         "leading-broadcast compatible")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))).reshape(shape)


def _elementwise(a: Tensor, b: Tensor, op: str):
    """Order operands as (larger, smaller) and validate the suffix rule."""
    if len(a.shape) >= len(b.shape):
        _check_suffix(a.shape, b.shape, op)
    else:
        _check_suffix(b.shape, a.shape, op)


# ---------------------------------------------------------------------------
# primitives

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _elementwise(a, b, "add")
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _elementwise(a, b, "sub")
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _elementwise(a, b, "mul")
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _elementwise(a, b, "div")
    return _node(a.data / b.data, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def scale(a, k: float) -> Tensor:
    a = as_tensor(a)
    k = float(k)
    return _node(a.data * k, (a,), lambda g: (g * k,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    return _node(a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


def tsum(a, axis: int | None = None) -> Tensor:
    """Sum over one axis, or over everything (axis=None -> scalar)."""
    a = as_tensor(a)
    if axis is None:
        return _node(np.asarray(a.data.sum()), (a,),
                     lambda g: (np.broadcast_to(g, a.shape).copy(),))
    ax = axis % max(a.data.ndim, 1)
    return _node(a.data.sum(axis=ax), (a,),
                 lambda g: (np.broadcast_to(np.expand_dims(g, ax), a.shape).copy(),))


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis % a.data.ndim]
    if n == 0:
        raise ShapeError("mean: empty axis")
    return scale(tsum(a, axis), 1.0 / n)


def concat(a, b, axis: int = 0) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != b.data.ndim:
        raise ShapeError(f"concat: rank mismatch {a.shape} vs {b.shape}")
    ax = axis % a.data.ndim
    for d in range(a.data.ndim):
        if d != ax and a.shape[d] != b.shape[d]:
            raise ShapeError(f"concat: shapes {a.shape} and {b.shape} differ "
                             f"outside axis {ax}")
    na = a.shape[ax]

    def vjp(g):
        ga, gb = np.split(g, [na], axis=ax)
        return ga, gb

    return _node(np.concatenate([a.data, b.data], axis=ax), (a, b), vjp)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    a = as_tensor(a)
    ax = axis % a.data.ndim
    if start < 0 or start + length > a.shape[ax]:
        raise ShapeError(f"narrow: [{start}, {start + length}) out of range "
                         f"for axis {ax} of {a.shape}")
    idx = tuple(slice(None) if d != ax else slice(start, start + length)
                for d in range(a.data.ndim))

    def vjp(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _node(a.data[idx].copy(), (a,), vjp)


def split(a, sections: int, axis: int = 0) -> list[Tensor]:
    """Split into equal sections along an axis (inverse of repeated concat)."""
    a = as_tensor(a)
    ax = axis % a.data.ndim
    if a.shape[ax] % sections:
        raise ShapeError(f"split: axis {ax} of {a.shape} not divisible "
                         f"by {sections}")
    step = a.shape[ax] // sections
    return [narrow(a, ax, i * step, step) for i in range(sections)]


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # stable in both tails
    y = np.where(a.data >= 0,
                 1.0 / (1.0 + np.exp(-np.clip(a.data, 0, None))),
                 np.exp(np.clip(a.data, None, 0))
                 / (1.0 + np.exp(np.clip(a.data, None, 0))))
    return _node(y, (a,), lambda g: (g * y * (1.0 - y),))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim == 0 or a.shape[axis % a.data.ndim] == 0:
        raise ShapeError(f"softmax: empty axis {axis} for shape {a.shape}")
    ax = axis % a.data.ndim
    z = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=ax, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=ax, keepdims=True)
        return (y * (g - dot),)

    return _node(y, (a,), vjp)


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.maximum(a.data, 0.0), (a,),
                 lambda g: (g * (a.data > 0),))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    y = np.sqrt(a.data)
    return _node(y, (a,), lambda g: (g * 0.5 / y,))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes inside the closed interval."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def layer_norm(a, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean / unit variance along one axis (no affine).

    Uses population variance with eps added inside the square root, so a
    constant slice maps to exact zeros.
    """
    a = as_tensor(a)
    ax = axis % a.data.ndim
    mu = a.data.mean(axis=ax, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=ax, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def vjp(g):
        gm = g.mean(axis=ax, keepdims=True)
        gy = (g * y).mean(axis=ax, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return _node(y, (a,), vjp)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != a.size and -1 not in shape:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    return _node(a.data.reshape(shape), (a,),
                 lambda g: (g.reshape(a.shape),))


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = np.argsort(axes)
    return _node(a.data.transpose(axes), (a,),
                 lambda g: (g.transpose(inverse),))


def take_rows(table, ids) -> Tensor:
    """Row gather (embedding lookup); backward scatter-adds into the table."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2:
        raise ShapeError(f"take_rows: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError("take_rows: id out of vocabulary range")

    def vjp(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _node(table.data[ids], (table,), vjp)


def upsample_nearest(a, factor: int) -> Tensor:
    """Nearest-neighbor upsampling of the last two axes by an integer factor."""
    a = as_tensor(a)
    if a.data.ndim < 2:
        raise ShapeError(f"upsample_nearest: need >= 2 dims, got {a.shape}")
    f = int(factor)
    y = a.data.repeat(f, axis=-2).repeat(f, axis=-1)

    def vjp(g):
        s = g.shape
        blocked = g.reshape(s[:-2] + (s[-2] // f, f, s[-1] // f, f))
        return (blocked.sum(axis=(-3, -1)),)

    return _node(y, (a,), vjp)


def broadcast_to(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    try:
        y = np.broadcast_to(a.data, shape).copy()
    except ValueError as exc:
        raise ShapeError(f"broadcast_to: {a.shape} -> {shape}: {exc}") from exc

    def vjp(g):
        lead = g.ndim - a.data.ndim
        g = g.sum(axis=tuple(range(lead)))
        keep = tuple(i for i in range(a.data.ndim) if a.shape[i] == 1 and g.shape[i] != 1)
        if keep:
            g = g.sum(axis=keep, keepdims=True)
        return (g,)

    return _node(y, (a,), vjp)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Stack along a new axis (composed from reshape + concat)."""
    if not tensors:
        raise ShapeError("stack: empty sequence")
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    out = expanded[0]
    for t in expanded[1:]:
        out = concat(out, t, axis=axis)
    return out


# ---------------------------------------------------------------------------
# gradient checking

def grad_check(f: Callable[[Tensor], Tensor], x: Tensor,
               eps: float = 1e-5) -> float:
    """Max relative error between backward grads and central differences.

    f must be a pure scalar function of x's values. The relative error per
    coordinate uses max(|analytic|, |numeric|, 1e-8) as denominator.
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    probe = Tensor(x.data.copy(), requires_grad=True)
    out = f(probe)
    if out.size != 1:
        raise ValueError("grad_check: f must return a scalar tensor")
    backward(out)
    analytic = (np.zeros_like(probe.data) if probe.grad is None
                else probe.grad.copy())

    numeric = np.zeros_like(probe.data)
    flat = probe.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(probe).data)
        flat[i] = orig - eps
        lo = float(f(probe).data)
        flat[i] = orig
        num_flat[i] = (hi - lo) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float((np.abs(analytic - numeric) / denom).max())
