"""A small reverse-mode differentiation engine over numpy arrays.

Only the operations the encoder and losses need are provided.  Every node
keeps the function that produced it, so :func:`forward` can re-evaluate a
whole graph after leaf values are changed in place (which is what the finite
difference checker does).

Gradients accumulate on leaves across :func:`backward` calls until
:func:`zero_grad` is called; interior nodes are reset on every pass.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from transde.errors import NumericError


class Tensor:
    __slots__ = ("value", "grad", "op", "parents", "_fwd", "_bwd", "name")

    def __init__(self, value, op="leaf", parents=(), fwd=None, bwd=None, name=None):
        self.value = np.asarray(value)
        self.grad = np.zeros_like(self.value) if op == "leaf" else None
        self.op = op
        self.parents = tuple(parents)
        self._fwd = fwd
        self._bwd = bwd
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor({self.op}{label}, shape={self.shape}, dtype={self.dtype})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def leaf(value, name=None, dtype=None) -> Tensor:
    arr = np.array(value, dtype=dtype) if dtype is not None else np.array(value)
    return Tensor(arr, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x), op="const")


def _node(op, parents, fwd, bwd) -> Tensor:
    return Tensor(fwd(*[p.value for p in parents]), op=op, parents=parents, fwd=fwd, bwd=bwd)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.ndim < 2 or b.value.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bwd(g, node):
        av, bv = a.value, b.value
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)
        return ga, gb

    return _node("matmul", (a, b), np.matmul, bwd)


def conv1d(x, kernel) -> Tensor:
    """Width-3 circular convolution over the token axis.

    ``x`` is ``(..., tokens, F)``, ``kernel`` is ``(3, F, D)``;
    ``out[t] = sum_j x[(t + j - 1) mod tokens] @ kernel[j]``.
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if kernel.value.ndim != 3 or kernel.shape[0] != 3 or x.shape[-1] != kernel.shape[1]:
        raise ValueError(f"conv1d shape mismatch: input {x.shape}, kernel {kernel.shape}")

    def fwd(xv, kv):
        out = 0
        for j in range(3):
            out = out + np.roll(xv, 1 - j, axis=-2) @ kv[j]
        return out

    def bwd(g, node):
        xv, kv = x.value, kernel.value
        gx = np.zeros_like(xv)
        gk = np.zeros_like(kv)
        lead = xv.ndim - 2
        for j in range(3):
            shifted = np.roll(xv, 1 - j, axis=-2)
            gx += np.roll(g @ kv[j].T, j - 1, axis=-2)
            gk[j] = np.tensordot(shifted, g, axes=(list(range(lead + 1)), list(range(lead + 1))))
        return gx, gk

    return _node("conv1d", (x, kernel), fwd, bwd)


def scale(x, c: float) -> Tensor:
    x = _as_tensor(x)
    return _node("scale", (x,), lambda v: v * v.dtype.type(c), lambda g, n: (g * g.dtype.type(c),))


def softmax_rows(x) -> Tensor:
    x = _as_tensor(x)

    def fwd(v):
        z = np.exp(v - v.max(axis=-1, keepdims=True))
        return z / z.sum(axis=-1, keepdims=True)

    def bwd(g, node):
        y = node.value
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _node("softmax-rows", (x,), fwd, bwd)


def concat(xs, axis: int = 0) -> Tensor:
    xs = tuple(_as_tensor(x) for x in xs)
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]

    def fwd(*vs):
        return np.concatenate(vs, axis=axis)

    def bwd(g, node):
        return tuple(np.split(g, cuts, axis=axis))

    return _node("concat", xs, fwd, bwd)


def log(x, eps: float = 0.0) -> Tensor:
    """Elementwise ``log(max(x, eps))``; the gradient is zero where the clamp is active."""
    x = _as_tensor(x)

    def fwd(v):
        return np.log(np.maximum(v, v.dtype.type(eps)) if eps else v)

    def bwd(g, node):
        v = x.value
        if eps:
            active = v > eps
            return (np.where(active, g / np.where(active, v, 1), 0).astype(v.dtype),)
        return (g / v,)

    return _node("elementwise-log", (x,), fwd, bwd)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bwd(g, node):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _node("elementwise-mul", (a, b), np.multiply, bwd)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _node("add", (a, b), np.add,
                 lambda g, n: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _node("sub", (a, b), np.subtract,
                 lambda g, n: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    x = _as_tensor(x)

    def fwd(v):
        return np.sum(v, axis=axis, keepdims=keepdims)

    def bwd(g, node):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node("sum", (x,), fwd, bwd)


def mean(x, axis=None) -> Tensor:
    x = _as_tensor(x)
    axes = range(x.value.ndim) if axis is None else np.atleast_1d(axis)
    count = int(np.prod([x.shape[a] for a in axes]))
    return scale(sum(x, axis=axis), 1.0 / count)


def stop_gradient(x) -> Tensor:
    x = _as_tensor(x)
    return _node("stop-gradient", (x,), lambda v: v, lambda g, n: (None,))


def repeat_tile(x, reps: int) -> Tensor:
    """Tile the last two axes ``reps`` x ``reps`` times (block grid of copies)."""
    x = _as_tensor(x)
    lead = (1,) * (x.value.ndim - 2)

    def bwd(g, node):
        *rest, R, C = x.shape
        return (g.reshape(*rest, reps, R, reps, C).sum(axis=(-4, -2)),)

    return _node("repeat-tile", (x,), lambda v: np.tile(v, lead + (reps, reps)), bwd)


def repeat_interleave(x, reps: int) -> Tensor:
    """Replace every entry of the last two axes by a constant ``reps`` x ``reps`` block."""
    x = _as_tensor(x)

    def fwd(v):
        return np.repeat(np.repeat(v, reps, axis=-2), reps, axis=-1)

    def bwd(g, node):
        *rest, R, C = x.shape
        return (g.reshape(*rest, R, reps, C, reps).sum(axis=(-3, -1)),)

    return _node("repeat-interleave", (x,), fwd, bwd)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    return _node("reshape", (x,), lambda v: v.reshape(shape), lambda g, n: (g.reshape(x.shape),))


def swapaxes(x, a: int = -1, b: int = -2) -> Tensor:
    x = _as_tensor(x)
    return _node("transpose", (x,), lambda v: np.swapaxes(v, a, b),
                 lambda g, n: (np.swapaxes(g, a, b),))


# ---------------------------------------------------------------------------
# graph traversal
# ---------------------------------------------------------------------------


def topological_order(root: Tensor) -> list:
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def forward(root: Tensor) -> np.ndarray:
    """Recompute every interior node from current leaf values."""
    for node in topological_order(root):
        if node._fwd is not None:
            value = node._fwd(*[p.value for p in node.parents])
            if value.shape != node.value.shape:
                raise ValueError(f"{node.op}: shape changed from {node.value.shape} to {value.shape}")
            node.value = value
    return root.value


def backward(root: Tensor) -> list:
    """Accumulate d(root)/d(leaf) into ``leaf.grad``; returns the leaves reached."""
    if root.value.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    order = topological_order(root)
    for node in order:
        if node.op != "leaf":
            node.grad = None
    root_grad = np.ones_like(root.value)
    if root.op == "leaf":
        root.grad = root.grad + root_grad
    else:
        root.grad = root_grad
    leaves = []
    for node in reversed(order):
        if node.op == "leaf":
            leaves.append(node)
            continue
        if node.grad is None or node._bwd is None:
            continue
        for parent, g in zip(node.parents, node._bwd(node.grad, node)):
            if g is None or parent.op == "const":
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=parent.value.dtype)
            else:
                parent.grad = parent.grad + g
    return leaves


def zero_grad(leaves) -> None:
    for t in leaves:
        t.grad = np.zeros_like(t.value)


def only_through_stop(root: Tensor, target: Tensor) -> bool:
    """True when every path from ``root`` down to ``target`` crosses a stop-gradient."""
    found_open = False
    stack, seen = [root], set()
    while stack:
        node = stack.pop()
        if node is target:
            found_open = True
            break
        if id(node) in seen or node.op == "stop-gradient":
            continue
        seen.add(id(node))
        stack.extend(node.parents)
    return not found_open


@dataclass
class GradCheck:
    max_rel_error: float
    analytic: np.ndarray
    numeric: np.ndarray
    behind_stop: bool

    @property
    def expected_discrepancy(self) -> bool:
        """A leaf hidden behind stop-gradient has zero analytic but nonzero numeric slope."""
        return self.behind_stop and not np.any(self.analytic) and bool(np.any(self.numeric))


def finite_diff_check(root: Tensor, target: Tensor, h: float = 1e-5) -> GradCheck:
    """Compare the analytic gradient of ``root`` w.r.t. ``target`` with central differences.

    The relative error per entry is ``|a - n| / max(1e-8, |a| + |n|)``.  Leaf
    values and leaf gradients are restored afterwards.
    """
    if target.op != "leaf":
        raise ValueError("finite_diff_check needs a leaf tensor")
    leaves = [n for n in topological_order(root) if n.op == "leaf"]
    saved = [n.grad for n in leaves]
    target.value = np.ascontiguousarray(target.value)
    target.grad = np.zeros_like(target.value)
    backward(root)
    analytic = np.array(target.grad, dtype=np.float64)
    for n, g in zip(leaves, saved):
        n.grad = g

    numeric = np.zeros(target.shape, dtype=np.float64)
    flat = target.value.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(forward(root).reshape(-1)[0])
        flat[i] = orig - h
        f_minus = float(forward(root).reshape(-1)[0])
        flat[i] = orig
        numeric.reshape(-1)[i] = (f_plus - f_minus) / (2 * h)
    forward(root)

    rel = np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return GradCheck(float(rel.max(initial=0.0)), analytic, numeric,
                     only_through_stop(root, target))


def check_finite(x: Tensor, what: str) -> None:
    if not np.all(np.isfinite(x.value)):
        raise NumericError(f"{what} became NaN or Inf")
