"""Dense float32 tensors with reverse-mode automatic differentiation.

Storage is always ``float32``.  Reductions (matrix products, convolutions,
sums, softmax normalisers) accumulate in ``float64`` and round the result
back to ``float32``.

Every op checks its output for NaN/Inf and raises :class:`NonFiniteError`
rather than letting a non-finite value propagate.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GraphError, NonFiniteError, ShapeError

DTYPE = np.float32

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

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
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.shape[0]

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if not self.requires_grad:
            raise GraphError(
                "backward() called on a tensor with no recorded graph; "
                "run the forward pass with gradients enabled first"
            )
        if grad is None:
            if self.size != 1:
                raise GraphError("an explicit output gradient is required for non-scalar tensors")
            grad = np.ones_like(self.data)
        grads = {id(self): np.asarray(grad, dtype=DTYPE)}
        for node in reversed(_topo_order(self)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = np.asarray(pg, dtype=DTYPE)
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _topo_order(root: Tensor) -> list[Tensor]:
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


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    data = np.asarray(data)
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
        "sub",
    )


def neg(a) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0), (x,), lambda g: (g * mask,), "relu")


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.data).astype(DTYPE)
    return _result(s, (x,), lambda g: (g * s * (1 - s),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data.astype(np.float64)).astype(DTYPE)
    return _result(t, (x,), lambda g: (g * (1 - t * t),), "tanh")


def straight_through(x: Tensor, fn: Callable[[np.ndarray], np.ndarray], op: str) -> Tensor:
    """Apply ``fn`` on the forward pass; pass gradients through unchanged."""
    return _result(fn(x.data), (x,), lambda g: (g,), op)


# -- shape ---------------------------------------------------------------------


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def getitem(x: Tensor, idx) -> Tensor:
    def backward(g):
        full = np.zeros(x.shape, dtype=DTYPE)
        np.add.at(full, idx, g)
        return (full,)

    return _result(x.data[idx], (x,), backward, "getitem")


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def take(table: Tensor, index: int | np.ndarray) -> Tensor:
    """Row lookup ``table[index]`` (embedding)."""
    index = np.asarray(index)

    def backward(g):
        full = np.zeros(table.shape, dtype=DTYPE)
        np.add.at(full, index, g)
        return (full,)

    return _result(table.data[index], (table,), backward, "take")


# -- reductions ----------------------------------------------------------------


def tsum(x: Tensor, axis=None) -> Tensor:
    out = x.data.astype(np.float64).sum(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(DTYPE),)

    return _result(out, (x,), backward, "sum")


def mean(x: Tensor) -> Tensor:
    n = x.size
    out = x.data.astype(np.float64).sum() / n
    return _result(out, (x,), lambda g: (np.full(x.shape, g / n, dtype=DTYPE),), "mean")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    a64, b64 = a.data.astype(np.float64), b.data.astype(np.float64)

    def backward(g):
        g64 = g.astype(np.float64)
        return g64 @ b64.T, a64.T @ g64

    return _result(a64 @ b64, (a, b), backward, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` with ``w`` stored as (out_features, in_features)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    x64, w64 = x.data.astype(np.float64), w.data.astype(np.float64)
    out = x64 @ w64.T
    if b is not None:
        out += b.data

    def backward(g):
        g64 = g.astype(np.float64)
        grads = [g64 @ w64, g64.T @ x64]
        if b is not None:
            grads.append(g64.sum(axis=0))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, backward, "linear")


def log_softmax(x: Tensor) -> Tensor:
    """Log-softmax over the last axis."""
    z = x.data.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(out)

    def backward(g):
        g64 = g.astype(np.float64)
        return (g64 - p * g64.sum(axis=-1, keepdims=True),)

    return _result(out, (x,), backward, "log_softmax")


# -- convolution ---------------------------------------------------------------


def _padding_amount(padding, k: int) -> int:
    if padding == "same":
        if k % 2 == 0:
            raise ShapeError(f"'same' padding needs an odd kernel, got {k}")
        return k // 2
    if padding == "valid":
        return 0
    return int(padding)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, padding="same") -> Tensor:
    """Stride-1 2-D cross-correlation.

    ``x`` is (N, C, H, W), ``w`` is (O, C, k, k); ``padding`` is ``"same"``,
    ``"valid"`` or an explicit zero-padding width.
    """
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1] or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {w.shape}")
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    p = _padding_amount(padding, k)
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    ho, wo = xp.shape[2] - k + 1, xp.shape[3] - k + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {k} larger than padded input {xp.shape[2:]}")
    cols = sliding_window_view(xp, (k, k), axis=(2, 3)).transpose(0, 2, 3, 1, 4, 5)
    cols = cols.reshape(n * ho * wo, c * k * k).astype(np.float64)
    wmat = w.data.reshape(o, -1).astype(np.float64)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def backward(g):
        gcols = g.transpose(0, 2, 3, 1).reshape(-1, o).astype(np.float64)
        gw = (gcols.T @ cols).reshape(w.shape)
        dcols = (gcols @ wmat).reshape(n, ho, wo, c, k, k)
        gxp = np.zeros(xp.shape, dtype=np.float64)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + ho, j : j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, p : p + h, p : p + wd] if p else gxp
        grads = [gx, gw]
        if b is not None:
            grads.append(gcols.sum(axis=0))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, backward, "conv2d")
