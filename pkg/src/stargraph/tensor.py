"""Small reverse-mode autodiff engine over numpy arrays.

Only the ops the StarGraph architecture needs are provided. Every op
returns a new :class:`Tensor`; when any input requires a gradient the
result records its parents and a closure mapping the output gradient to
one gradient per parent. :meth:`Tensor.backward` walks the recorded graph
in reverse topological order.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, StarGraphError

_grad_enabled = True
_debug = False
_kinks: list | None = None


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording a graph."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def record_kinks():
    """Collect the sign pattern seen by every non-smooth op (relu, abs).

    Two evaluations that record identical patterns lie on the same smooth
    piece of the function, so a finite difference between them is valid.
    """
    global _kinks
    prev, _kinks = _kinks, []
    try:
        yield _kinks
    finally:
        _kinks = prev


def _note_signs(x: np.ndarray) -> None:
    if _kinks is not None:
        _kinks.append(np.packbits(x > 0).tobytes() + np.packbits(x < 0).tobytes())


def set_debug(flag: bool) -> None:
    """Check every op output for NaN/Inf."""
    global _debug
    _debug = bool(flag)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype})"

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
        if grad is None:
            if self.data.size != 1:
                raise StarGraphError("backward() without an explicit grad needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    if node.grad is None:
                        node.grad = np.array(g, dtype=node.dtype)
                    else:
                        node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg


class Parameter(Tensor):
    """Learnable leaf. ``grad`` is always allocated and accumulates across backward calls."""

    __slots__ = ()

    def __init__(self, data, name: str):
        super().__init__(np.array(data), requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad[...] = 0


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if _debug and not np.all(np.isfinite(out.data)):
        raise NumericError(f"non-finite output from {backward.__qualname__.split('.')[0]}")
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


# ---------------------------------------------------------------------------
# Elementwise


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def relu(x: Tensor) -> Tensor:
    on = x.data > 0
    _note_signs(x.data)
    return _result(np.where(on, x.data, 0).astype(x.dtype), (x,), lambda g: (g * on,))


def log_sigmoid(x: Tensor) -> Tensor:
    """log(1 / (1 + exp(-x))), stable for large |x|."""
    out = -np.logaddexp(0, -x.data)
    return _result(out.astype(x.dtype), (x,), lambda g: (g * _sigmoid(-x.data),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0, -z)).astype(z.dtype)


# ---------------------------------------------------------------------------
# Shape


def reshape(x: Tensor, shape) -> Tensor:
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    inverse = np.argsort(axes)
    return _result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _result(
        np.concatenate([x.data for x in xs], axis=axis),
        xs,
        lambda g: tuple(np.split(g, bounds, axis=axis)),
    )


def scatter_rows(num_rows: int, rows: np.ndarray, values: np.ndarray) -> np.ndarray:
    """``out[rows[i]] += values[i]`` for an ``out`` of ``num_rows`` rows (sort + reduceat)."""
    rows = rows.reshape(-1)
    out =np.zeros((num_rows,) + values.shape[1:], dtype=values.dtype)
    if len(rows) == 0:
        return out
    order = np.argsort(rows, kind="stable")
    sorted_rows = rows[order]
    starts = np.flatnonzero(np.r_[True, sorted_rows[1:] != sorted_rows[:-1]])
    out[sorted_rows[starts]] = np.add.reduceat(values[order], starts, axis=0)
    return out


def index(x: Tensor, key) -> Tensor:
    """``x[key]`` for basic or integer-array keys; repeated rows accumulate in backward."""
    if isinstance(key, np.ndarray) and key.dtype.kind in "iu":

        def backward(g):
            rows = key.reshape(-1)
            return (scatter_rows(x.shape[0], rows, g.reshape((rows.size,) + x.shape[1:])),)

    else:

        def backward(g):
            gx = np.zeros_like(x.data)
            np.add.at(gx, key, g)
            return (gx,)

    return _result(x.data[key], (x,), backward)


def total(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return _result(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), backward)


def mean(x: Tensor) -> Tensor:
    return mul(total(x), 1.0 / x.data.size)


# ---------------------------------------------------------------------------
# Layers


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise StarGraphError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise StarGraphError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(a.data @ b.data, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis of ``x``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise StarGraphError(f"linear shape mismatch: input {x.shape}, weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise StarGraphError(f"linear bias shape {bias.shape} != ({weight.shape[1]},)")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ weight.data.T
        gw = x.data.reshape(-1, x.shape[-1]).T @ g2
        return (gx, gw) if bias is None else (gx, gw, g2.sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, backward)


def embed_lookup(table: Tensor, ids, mask=None) -> Tensor:
    """Gather rows of ``table``; rows where ``mask`` is False come out as zeros.

    Masked ids are never dereferenced, so they may hold a pad sentinel.
    """
    ids = np.asarray(ids, dtype=np.int64)
    mask = np.ones(ids.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != ids.shape:
        raise StarGraphError(f"mask shape {mask.shape} != ids shape {ids.shape}")
    active = ids[mask]
    if active.size and (active.min() < 0 or active.max() >= table.shape[0]):
        raise StarGraphError(f"embedding id out of range [0, {table.shape[0]})")
    safe = np.where(mask, ids, 0)
    out = table.data[safe] * mask[..., None].astype(table.dtype)

    def backward(g):
        return (scatter_rows(table.shape[0], active, g[mask]),)

    return _result(out, (table,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        d = x.shape[-1]
        gxhat = g * gain.data
        gx = inv / d * (d * gxhat - gxhat.sum(-1, keepdims=True) - xhat * (gxhat * xhat).sum(-1, keepdims=True))
        lead = tuple(range(x.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(xhat * gain.data + bias.data, (x, gain, bias), backward)


def softmax(x: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis; positions where ``mask`` is False get exactly 0."""
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not mask.any(axis=-1).all():
            raise StarGraphError("softmax row with every position masked")
        z = np.where(mask, z, -np.inf)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _result(s.astype(x.dtype), (x,), backward)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: kept entries are scaled by 1/(1-p). Identity when not training."""
    if not 0 <= p < 1:
        raise StarGraphError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) * x.dtype.type(1.0 / (1.0 - p))
    return _result(x.data * keep, (x,), lambda g: (g * keep,))


def mean_pool(x: Tensor, mask) -> Tensor:
    """Average over the second-to-last axis, counting only rows where ``mask`` is True."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape[:-1]:
        raise StarGraphError(f"mean_pool mask shape {mask.shape} != {x.shape[:-1]}")
    count = mask.sum(axis=-1, keepdims=True)
    if (count == 0).any():
        raise StarGraphError("mean_pool over a sequence with every row masked")
    weight = (mask / count).astype(x.dtype)[..., None]
    return _result((x.data * weight).sum(axis=-2), (x,), lambda g: (g[..., None, :] * weight,))


def l1_norm(x: Tensor) -> Tensor:
    _note_signs(x.data)
    return _result(np.abs(x.data).sum(axis=-1), (x,), lambda g: (g[..., None] * np.sign(x.data),))


def l2_norm(x: Tensor) -> Tensor:
    n = np.sqrt((x.data * x.data).sum(axis=-1))

    def backward(g):
        safe = np.where(n > 0, n, 1)
        return ((g / safe)[..., None] * x.data,)

    return _result(n, (x,), backward)


def norm(x: Tensor, kind: str) -> Tensor:
    if kind == "l1":
        return l1_norm(x)
    if kind == "l2":
        return l2_norm(x)
    raise StarGraphError(f"unknown norm {kind!r} (expected l1|l2)")


def check_finite(x: Tensor, what: str) -> None:
    if not np.all(np.isfinite(x.data)):
        raise NumericError(f"non-finite {what}")


def kaiming_uniform(rng: np.random.Generator, fan_in: int, shape, dtype) -> np.ndarray:
    # same bound as torch.nn.Linear's default (a = sqrt(5))
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
