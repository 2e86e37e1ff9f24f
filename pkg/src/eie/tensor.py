"""Dense float32 tensors with define-by-run reverse-mode differentiation.

Operations executed while a :class:`Tape` is active are appended to it in
execution order; ``Tape.backward`` walks that list in reverse, summing
gradients into every tensor that needs one. Outside a tape nothing is
recorded, which is how inference runs.
"""

from __future__ import annotations

import contextlib
import itertools
import math
import threading
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float32

# checked after every forward op; turn off only for profiling
CHECK_FINITE = True

_local = threading.local()


class DimensionError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


def _compute_dtype():
    return getattr(_local, "dtype", DTYPE)


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype new tensors are cast to (gradient checks use float64)."""
    prev = _compute_dtype()
    _local.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _local.dtype = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        dt = _compute_dtype()
        if arr.dtype != dt:
            arr = arr.astype(dt)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


class _Node:
    __slots__ = ("seq", "op", "out", "parents", "backward")

    def __init__(self, seq, op, out, parents, backward):
        self.seq = seq
        self.op = op
        self.out = out
        self.parents = parents
        self.backward = backward


class Tape:
    """Records differentiable ops in execution order; use as a context manager."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._seq = itertools.count()

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "tapes", None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.tapes.pop()

    def record(self, op: str, out: Tensor, parents: Sequence[Tensor], backward: Callable) -> None:
        self.nodes.append(_Node(next(self._seq), op, out, tuple(parents), backward))

    def backward(self, loss: Tensor, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if loss.size != 1:
                raise DimensionError(f"backward needs a scalar or an explicit grad, got shape {loss.shape}")
            grad = np.ones_like(loss.data)
        loss.grad = grad if loss.grad is None else loss.grad + grad
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            pgrads = node.backward(g)
            for p, pg in zip(node.parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                if pg.shape != p.data.shape:
                    raise DimensionError(f"{node.op}: gradient shape {pg.shape} != input shape {p.data.shape}")
                p.grad = pg if p.grad is None else p.grad + pg

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> Tape | None:
    stack = getattr(_local, "tapes", None)
    return stack[-1] if stack else None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(op: str, data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    if CHECK_FINITE and not np.isfinite(data).all():
        raise NumericError(f"{op}: non-finite values in output of shape {data.shape}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = False
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(op, out, parents, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    return _result("mul", ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):  # reported by the finiteness check instead
        out = ad / bd
    return _result("div", out, (a, b),
                   lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _result("neg", -a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    return _result("scale", a.data * c, (a,), lambda g: (g * c,))


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _result("relu", np.where(pos, x.data, 0.0).astype(x.data.dtype), (x,), lambda g: (g * pos,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    xd = x.data
    x2 = xd * xd
    inner = xd * (1.0 + 0.044715 * x2)
    inner *= _GELU_C
    t = np.tanh(inner, out=inner)
    y = xd * (1.0 + t)
    y *= 0.5

    def backward(g):
        dt = (1.0 - t * t) * (_GELU_C * (1.0 + 3 * 0.044715 * x2))
        dt *= xd
        dt += 1.0 + t
        dt *= 0.5
        dt *= g
        return (dt,)

    return _result("gelu", y, (x,), backward)


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace positions where ``mask`` is True with a constant; no gradient flows there."""
    mask = np.asarray(mask, dtype=bool)
    keep = ~mask
    out = np.where(mask, x.data.dtype.type(value), x.data)
    return _result("masked_fill", out, (x,), lambda g: (_unbroadcast(g * keep, x.shape),))


# ---------------------------------------------------------------- reductions

def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result("sum", np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum_(x, axis, keepdims), 1.0 / float(n))


# ---------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _result("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def broadcast_to(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _result("broadcast_to", np.broadcast_to(x.data, shape).copy(), (x,),
                   lambda g: (_unbroadcast(g, old),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as err:
        raise DimensionError(f"concat along axis {axis}: shapes {[t.shape for t in tensors]}") from err

    def backward(g):
        idx = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            parts.append(g[tuple(idx)])
        return tuple(parts)

    return _result("concat", out, tensors, backward)


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts)


def getitem(x: Tensor, idx) -> Tensor:
    shape = x.shape
    basic = _is_basic_index(idx)

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _result("slice", np.array(x.data[idx]), (x,), backward)


def embedding(weight: Tensor, ids) -> Tensor:
    """Row gather ``weight[ids]``; repeated ids accumulate gradient."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise DimensionError(f"embedding ids out of range for table of shape {weight.shape}")
    shape = weight.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return _result("embedding", weight.data[ids], (weight,), backward)


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    if bd.ndim == 2 and ad.ndim > 2:
        # shared weight: one GEMM over all leading rows
        k, n = bd.shape
        a2 = ad.reshape(-1, k)
        out = (a2 @ bd).reshape(*ad.shape[:-1], n)

        def backward(g):
            g2 = g.reshape(-1, n)
            return (g2 @ bd.T).reshape(ad.shape), a2.T @ g2

        return _result("matmul", out, (a, b), backward)

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _result("matmul", ad @ bd, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    x = _as_tensor(x)
    if x.ndim == 1:
        y = reshape(matmul(reshape(x, (1, x.shape[0])), weight), (weight.shape[-1],))
        return y if bias is None else add(y, bias)
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# ---------------------------------------------------------------- fused ops

def softmax_lastdim(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result("softmax", y, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: x {x.shape} vs gamma {gamma.shape} / beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        red = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=red)
        gbeta = g.sum(axis=red)
        gx_hat = g * gamma.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    return _result("layer_norm", out, (x, gamma, beta), backward)


def cross_entropy_from_logits(logits: Tensor, targets, mask) -> Tensor:
    """Mean of -log softmax(logits)[target] over positions where ``mask`` is True.

    ``logits`` is ``[..., V]``; ``targets`` and ``mask`` have the leading shape.
    """
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    lead = logits.shape[:-1]
    if targets.shape != lead or mask.shape != lead:
        raise DimensionError(f"cross_entropy: logits {logits.shape}, targets {targets.shape}, mask {mask.shape}")
    count = int(mask.sum())
    if count == 0:
        raise ValueError("cross_entropy: mask selects no positions, loss undefined")
    V = logits.shape[-1]
    sel_t = targets[mask]
    if sel_t.size and (sel_t.min() < 0 or sel_t.max() >= V):
        raise DimensionError(f"cross_entropy: target id out of range for vocabulary of size {V}")

    flat = logits.data.reshape(-1, V)
    rows = np.flatnonzero(mask.reshape(-1))
    sel = flat[rows]
    z = sel - sel.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = logp[np.arange(rows.size), sel_t]
    loss = np.asarray(-picked.sum() / count, dtype=logits.data.dtype)

    def backward(g):
        p = np.exp(logp)
        p[np.arange(rows.size), sel_t] -= 1.0
        full = np.zeros_like(flat)
        full[rows] = p * (g / count)
        return (full.reshape(logits.shape),)

    return _result("cross_entropy", loss, (logits,), backward)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_compute_dtype()), requires_grad=requires_grad)
