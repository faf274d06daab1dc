"""Minimal reverse-mode autodiff over dense float64 arrays.

Every op validates shapes, rejects non-finite outputs and registers a
vector-Jacobian product per parent.  ``Tensor.backward()`` walks the graph
once in reverse topological order with a fixed traversal, so gradients are
bit-reproducible.
"""

from __future__ import annotations

import contextlib

import numpy as np

from . import _kernels as kernels
from .errors import NonFiniteError, ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph building (evaluation mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense float64 value with an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjps")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError("tensor values must be finite")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjps: tuple = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's .grad."""
        if self.size != 1:
            raise ShapeError("backward() requires a scalar root")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._parents:
                for parent, vjp in zip(node._parents, node._vjps):
                    if not parent.requires_grad:
                        continue
                    pg = vjp(g)
                    acc = grads.get(id(parent))
                    if acc is None:
                        grads[id(parent)] = pg
                    else:
                        acc += pg
            else:
                node.grad = g if node.grad is None else node.grad + g


def _op(data: np.ndarray, parents: tuple[Tensor, ...], vjps: tuple) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjps = vjps
    return out


def _same_shape(a: Tensor, b: Tensor, opname: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _op(a.data + b.data, (a, b), (lambda g: g.copy(), lambda g: g.copy()))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return _op(a.data * b.data, (a, b),
               (lambda g: g * b.data, lambda g: g * a.data))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _op(a.data * s, (a,), (lambda g: g * s,))


def add_const(a: Tensor, c) -> Tensor:
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 0 and c.shape != a.shape:
        raise ShapeError(f"add_const: constant shape {c.shape} != {a.shape}")
    return _op(a.data + c, (a,), (lambda g: g.copy(),))


def mul_const(a: Tensor, c) -> Tensor:
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 0 and c.shape != a.shape:
        raise ShapeError(f"mul_const: constant shape {c.shape} != {a.shape}")
    return _op(a.data * c, (a,), (lambda g: g * c,))


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    y = np.power(a.data, exponent)
    return _op(y, (a,),
               (lambda g: g * exponent * np.power(a.data, exponent - 1.0),))


def log(a: Tensor) -> Tensor:
    return _op(np.log(a.data), (a,), (lambda g: g / a.data,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data >= lo) & (a.data <= hi)
    return _op(np.clip(a.data, lo, hi), (a,), (lambda g: g * mask,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _op(a.data * mask, (a,), (lambda g: g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return _op(y, (a,), (lambda g: g * y * (1.0 - y),))


def softmax_over_depth(a: Tensor) -> Tensor:
    """Softmax along axis 0 (the depth-bin axis of (D, h, w) logits)."""
    m = a.data.max(axis=0, keepdims=True)
    e = np.exp(a.data - m)
    y = e / e.sum(axis=0, keepdims=True)

    def vjp(g):
        return y * (g - (g * y).sum(axis=0, keepdims=True))

    return _op(y, (a,), (vjp,))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return _op(a.data.reshape(shape), (a,),
               (lambda g: g.reshape(a.shape),))


def tensor_sum(a: Tensor) -> Tensor:
    return _op(np.asarray(a.data.sum()), (a,),
               (lambda g: np.full(a.shape, float(g)),))


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Stride-1 zero-padded 2D convolution preserving spatial dims."""
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ShapeError("conv2d expects x (C,H,W) and w (Co,Ci,kh,kw)")
    co, ci, kh, kw = w.shape
    if x.shape[0] != ci or b.shape != (co,) or kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(
            f"conv2d: incompatible shapes x={x.shape} w={w.shape} b={b.shape}")
    y = kernels.conv2d_forward(x.data, w.data) + b.data[:, None, None]
    return _op(y, (x, w, b), (
        lambda g: kernels.conv2d_grad_input(w.data, g),
        lambda g: kernels.conv2d_grad_weight(x.data, g, kh, kw),
        lambda g: g.sum(axis=(1, 2)),
    ))


def conv3d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Stride-1 zero-padded 3D convolution preserving spatial dims."""
    if x.data.ndim != 4 or w.data.ndim != 5:
        raise ShapeError("conv3d expects x (C,D,H,W) and w (Co,Ci,kd,kh,kw)")
    co, ci, kd, kh, kw = w.shape
    if x.shape[0] != ci or b.shape != (co,) or kd % 2 == 0 or kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(
            f"conv3d: incompatible shapes x={x.shape} w={w.shape} b={b.shape}")
    y = kernels.conv3d_forward(x.data, w.data) + b.data[:, None, None, None]
    return _op(y, (x, w, b), (
        lambda g: kernels.conv3d_grad_input(w.data, g),
        lambda g: kernels.conv3d_grad_weight(x.data, g, kd, kh, kw),
        lambda g: g.sum(axis=(1, 2, 3)),
    ))
