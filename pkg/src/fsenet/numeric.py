"""Dense float64 tensors with a reverse-mode gradient tape.

Only the primitives the localization pipeline needs are provided.  Forward
math is plain numpy; when a :class:`GradientTape` is active on the current
thread, every primitive that touches a tracked tensor appends a backward
rule to it.  Without an active tape the ops are a thin numpy wrapper, which
keeps inference cheap.
"""
from __future__ import annotations

import struct
import threading
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64
TENSOR_MAGIC = b"FSETNSR1"


class ShapeError(ValueError):
    pass


class EvaluationError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def _raise_item(t):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=DTYPE))


# --------------------------------------------------------------------------
# tape

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


class GradientTape:
    """Ordered record of primitive ops, replayed backwards by :meth:`gradient`.

    Usage::

        with GradientTape() as tape:
            loss = f(params)
        grads = tape.gradient(loss, params)
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def gradient(self, target: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        if target.data.size != 1:
            raise ShapeError(f"gradient target must be scalar, got shape {target.shape}")
        grads: dict[int, np.ndarray] = {id(target): np.ones_like(target.data)}
        for out, parents, backward in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        # sources are leaves, so their entries are never popped
        return [grads.get(id(s), np.zeros_like(s.data)) for s in sources]


def _record(out_data, parents: tuple[Tensor, ...], backward) -> Tensor:
    stack = _tape_stack()
    track = bool(stack) and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=track)
    if track:
        stack[-1].records.append((out, parents, backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --------------------------------------------------------------------------
# elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    ga, gb = a.requires_grad, b.requires_grad
    return _record(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape) if ga else None,
                              _unbroadcast(g * ad, bd.shape) if gb else None))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data
    ga, gb = a.requires_grad, b.requires_grad
    out = ad / bd
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(g / bd, ad.shape) if ga else None,
                              _unbroadcast(-g * out / bd, bd.shape) if gb else None))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _record(out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    if np.any(xd <= 0):
        raise EvaluationError("log of non-positive value")
    return _record(np.log(xd), (x,), lambda g: (g / xd,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return _record(out, (x,), lambda g: (0.5 * g / out,))


def square(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _record(xd * xd, (x,), lambda g: (2.0 * g * xd,))


def power(x, p: float) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _record(xd ** p, (x,), lambda g: (g * p * xd ** (p - 1),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    # split by sign so neither branch overflows
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ez = np.exp(xd[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _record(out, (x,), lambda g: (g * out * (1.0 - out),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _record(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only where the value was not clamped."""
    x = as_tensor(x)
    xd = x.data
    mask = (xd >= lo) & (xd <= hi)
    return _record(np.clip(xd, lo, hi), (x,), lambda g: (g * mask,))


# --------------------------------------------------------------------------
# reductions and shape ops

def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(out, (x,), backward)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else x.shape[axis]
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / n)


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.shape}")
    return _record(x.data.T, (x,), lambda g: (g.T,))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def permute(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _record(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    parts = tuple(as_tensor(p) for p in parts)
    ref = parts[0].shape
    for p in parts[1:]:
        if len(p.shape) != len(ref) or any(
            p.shape[i] != ref[i] for i in range(len(ref)) if i != axis % len(ref)
        ):
            raise ShapeError(f"concat: shapes {ref} and {p.shape} disagree off axis {axis}")
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(parts))
        )

    return _record(np.concatenate([p.data for p in parts], axis=axis), parts, backward)


def slice_cols(x, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=DTYPE)
        full[:, start:stop] = g
        return (full,)

    return _record(x.data[:, start:stop], (x,), backward)


def take_rows(x, index) -> Tensor:
    """Gather rows by integer index; repeated indices accumulate in backward."""
    x = as_tensor(x)
    idx = np.asarray(index, dtype=np.intp)
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=DTYPE)
        np.add.at(full, idx, g)
        return (full,)

    return _record(x.data[idx], (x,), backward)


# --------------------------------------------------------------------------
# linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _record(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def bmm(a, b) -> Tensor:
    """Batched matrix product of B x m x k and B x k x n stacks."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 3 or b.data.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _record(np.matmul(ad, bd), (a, b),
                   lambda g: (np.matmul(g, bd.transpose(0, 2, 1)), np.matmul(ad.transpose(0, 2, 1), g)))


def softmax_rows(x, scale: float = 1.0) -> Tensor:
    """Softmax over the last axis of ``scale * x``, max-shifted for stability."""
    x = as_tensor(x)
    out = x.data * scale if scale != 1.0 else x.data.copy()
    out -= out.max(axis=-1, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=-1, keepdims=True)

    def backward(g):
        gx = g * out
        gx -= out * gx.sum(axis=-1, keepdims=True)
        if scale != 1.0:
            gx *= scale
        return (gx,)

    return _record(out, (x,), backward)


def conv1d(x, weight, bias=None) -> Tensor:
    """Temporal convolution with zero 'same' padding.

    x is T x Cin, weight is k x Cin x Cout with odd k, bias is Cout.
    Returns T x Cout.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.data.ndim != 3 or x.data.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} incompatible with kernel {weight.shape}")
    k = weight.shape[0]
    if k % 2 == 0:
        raise ShapeError(f"conv1d: kernel size must be odd for same padding, got {k}")
    T = x.shape[0]
    pad = k // 2
    wd = weight.data
    xp = np.pad(x.data, ((pad, pad), (0, 0))) if pad else x.data
    out = xp[0:T] @ wd[0]
    for j in range(1, k):
        out = out + xp[j:j + T] @ wd[j]

    parents: tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (wd.shape[2],):
            raise ShapeError(f"conv1d: bias shape {bias.shape} != ({wd.shape[2]},)")
        out = out + bias.data
        parents = parents + (bias,)

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(wd)
        for j in range(k):
            gxp[j:j + T] += g @ wd[j].T
            gw[j] = xp[j:j + T].T @ g
        gx = gxp[pad:pad + T] if pad else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return _record(out, parents, backward)


def l2_normalize_rows(x, eps: float = 1e-12) -> Tensor:
    """Rows scaled to unit length; an all-zero row stays zero."""
    x = as_tensor(x)
    return x / sqrt(tsum(square(x), axis=1, keepdims=True) + eps)


# --------------------------------------------------------------------------
# finite-difference check

def grad_check(fn: Callable[[], Tensor], params: Iterable[Tensor], eps: float = 1e-5) -> float:
    """Worst coordinate-wise relative error between tape and central-difference gradients.

    ``fn`` is re-evaluated with each parameter coordinate nudged in place, so it
    must read the parameters rather than capture copies.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError(f"eps must lie in [1e-7, 1e-4], got {eps}")
    params = list(params)

    def evaluate() -> float:
        val = fn()
        v = float(np.asarray(val.data).reshape(-1)[0])
        if not np.isfinite(v):
            raise EvaluationError(f"non-finite function value {v}")
        return v

    with GradientTape() as tape:
        out = fn()
    if not np.isfinite(out.data).all():
        raise EvaluationError("non-finite function value")
    analytic = tape.gradient(out, params)

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = evaluate()
            flat[i] = orig - eps
            fm = evaluate()
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            a = gflat[i]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    return worst


# --------------------------------------------------------------------------
# binary tensor files

def tensor_to_bytes(t) -> bytes:
    arr = np.asarray(t.data if isinstance(t, Tensor) else t)
    head = TENSOR_MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple[Tensor, int]:
    """Decode one tensor record starting at ``offset``; returns it and the end offset."""
    if buf[offset:offset + 8] != TENSOR_MAGIC:
        raise ValueError("bad tensor magic")
    (rank,) = struct.unpack_from("<I", buf, offset + 8)
    dims = struct.unpack_from(f"<{rank}I", buf, offset + 12)
    start = offset + 12 + 4 * rank
    count = int(np.prod(dims)) if rank else 1
    end = start + 4 * count
    if end > len(buf):
        raise ValueError("truncated tensor payload")
    arr = np.frombuffer(buf, dtype="<f4", count=count, offset=start).astype(DTYPE)
    return Tensor(arr.reshape(dims)), end


def save_tensor(path, t) -> None:
    Path(path).write_bytes(tensor_to_bytes(t))


def load_tensor(path) -> Tensor:
    t, _ = tensor_from_bytes(Path(path).read_bytes())
    return t
