"""Dense tensors with tape-based reverse-mode differentiation.

Operations record themselves on the active :class:`Tape` only when at least
one input requires a gradient, so inference outside a tape builds no graph.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

_DTYPES = {"f32": np.float32, "f64": np.float64}


class ShapeMismatch(ValueError):
    pass


class IndexOutOfRange(IndexError):
    pass


def as_dtype(dtype) -> np.dtype:
    if isinstance(dtype, str):
        dtype = _DTYPES[dtype]
    dt = np.dtype(dtype)
    if dt not in (np.float32, np.float64):
        raise TypeError(f"unsupported dtype {dt}")
    return dt


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float32
        self.data = np.ascontiguousarray(data, dtype=as_dtype(dtype))
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    # -- introspection --------------------------------------------------
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

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

    def backward(self, grad=None) -> None:
        tape = current_tape()
        if tape is None:
            raise RuntimeError("backward() needs the tape that recorded the graph")
        tape.backward(self, grad)


def tensor(data, requires_grad=False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


# -- the tape -------------------------------------------------------------

_TAPE_STACK: list["Tape"] = []


def current_tape() -> "Tape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tape:
    """Ordered record of primitive applications.

    Nodes are appended in execution order, which is already a topological
    order, so backward is a single reverse sweep visiting each node once.
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPE_STACK.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        self.nodes.append((out, inputs, backward))

    def backward(self, loss: Tensor, grad=None) -> None:
        if grad is None:
            if loss.size != 1:
                raise ShapeMismatch(f"implicit gradient needs a scalar, got shape {loss.shape}")
            grad = np.ones_like(loss.data)
        grads: dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=loss.dtype)}
        leaves: dict[int, Tensor] = {}
        for out, inputs, fn in reversed(self.nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            in_grads = fn(g)
            for inp, gi in zip(inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                gi = _unbroadcast(gi, inp.shape)
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                    leaves[key] = inp
        # whatever remains un-consumed belongs to tensors no node produced: leaves
        for key, g in grads.items():
            t = leaves.get(key)
            if t is None:
                if key == id(loss):
                    t = loss
                else:
                    continue
            t.grad = g.astype(t.dtype, copy=True) if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    if g.shape != shape:
        raise ShapeMismatch(f"cannot reduce gradient {g.shape} to {shape}")
    return g


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = False
    if needs:
        tape = current_tape()
        if tape is not None:
            out.requires_grad = True
            tape.record(out, inputs, backward)
    return out


def _broadcast_shapes(a: tuple, b: tuple, op: str) -> None:
    try:
        np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeMismatch(f"{op}: incompatible shapes {a} and {b}") from None


# -- primitives -----------------------------------------------------------

def add(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    _broadcast_shapes(a.shape, b.shape, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    if not isinstance(b, Tensor):
        c = np.asarray(b, dtype=a.dtype)
        return _make(a.data * c, (a,), lambda g: (g * c,))
    _broadcast_shapes(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: inner dimensions differ for {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeMismatch(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return _make(ad @ bd, (a, b), backward)


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeMismatch(f"transpose: axes {axes} invalid for shape {a.shape}")
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"reshape: cannot view {a.shape} as {shape}") from None
    src = a.shape
    return _make(out, (a,), lambda g: (g.reshape(src),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeMismatch("concat of nothing")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeMismatch(f"concat along {axis}: {ref} vs {t.shape}")
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    return _make(out, tensors, lambda g: tuple(np.split(g, cuts, axis=ax)))


def slice_(a: Tensor, index) -> Tensor:
    out = a.data[index]
    src_shape, dt = a.shape, a.dtype
    fancy = _is_fancy(index)

    def backward(g):
        full = np.zeros(src_shape, dtype=dt)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] += g
        return (full,)

    return _make(np.array(out, copy=True), (a,), backward)


def _is_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexOutOfRange(f"embedding id out of range [0, {table.shape[0]})")
    shape, dt = table.shape, table.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dt)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[-1]))
        return (full,)

    return _make(table.data[ids], (table,), backward)


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    src = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _make(np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[x] for x in axes]))
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make(y, (a,), backward)


def layer_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None,
               axis: int = -1, eps: float = 1e-5) -> Tensor:
    xd = x.data
    mu = xd.mean(axis=axis, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data if gamma is not None else None
    out = xhat * gd if gd is not None else xhat
    if beta is not None:
        out = out + beta.data
    inputs = tuple(t for t in (x, gamma, beta) if t is not None)
    ax = axis % xd.ndim
    red = tuple(i for i in range(xd.ndim) if i != ax)

    def backward(g):
        dxhat = g * gd if gd is not None else g
        dx = inv * (dxhat - dxhat.mean(axis=axis, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=axis, keepdims=True))
        grads = [dx]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=red).reshape(gamma.shape))
        if beta is not None:
            grads.append(g.sum(axis=red).reshape(beta.shape))
        return tuple(grads)

    return _make(out, inputs, backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    x = a.data
    u = _GELU_C * (x + 0.044715 * (x * x * x))
    t = np.tanh(u)
    y = 0.5 * x * (1.0 + t)

    def backward(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return _make(y, (a,), backward)


def masked_fill(a: Tensor, mask, value: float) -> Tensor:
    mask = np.asarray(mask, dtype=bool)
    try:
        np.broadcast_shapes(mask.shape, a.shape)
    except ValueError:
        raise ShapeMismatch(f"masked_fill: mask {mask.shape} vs {a.shape}") from None
    out = np.where(mask, np.asarray(value, dtype=a.dtype), a.data)
    keep = ~mask
    return _make(out, (a,), lambda g: (np.where(keep, g, 0),))


def bce_with_logits(logits: Tensor, labels) -> Tensor:
    """Elementwise binary cross-entropy on raw logits.

    Uses max(x,0) - x*y + log1p(exp(-|x|)), finite for any finite logit.
    """
    x = logits.data
    y = np.asarray(labels, dtype=x.dtype)
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0 or 1")
    loss = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    return _make(loss.astype(x.dtype), (logits,), lambda g: (g * (sig - y),))


def cross_entropy(logits: Tensor, target) -> Tensor:
    """``-log softmax(logits)[target]`` along the last axis.

    A 1-D ``logits`` with an int ``target`` yields a scalar; a leading batch
    of rows with an integer array yields one loss per row.
    """
    tgt = np.asarray(target, dtype=np.int64)
    n = logits.shape[-1]
    if tgt.shape != logits.shape[:-1]:
        raise ShapeMismatch(f"cross_entropy: targets {tgt.shape} vs logits {logits.shape}")
    if np.any((tgt < 0) | (tgt >= n)):
        raise IndexOutOfRange(f"target index outside [0, {n})")
    x = logits.data
    z = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, tgt[..., None], axis=-1)[..., 0]
    p = np.exp(logp)

    def backward(g):
        d = p.copy()
        np.put_along_axis(d, tgt[..., None], np.take_along_axis(d, tgt[..., None], -1) - 1.0, -1)
        return (d * np.asarray(g)[..., None],)

    return _make(np.asarray(-picked), (logits,), backward)
