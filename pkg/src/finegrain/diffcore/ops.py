"""Differentiable operations.

Shape rules (no implicit broadcasting anywhere):

========================  ==============================================  ========================
op                        operands                                        result
========================  ==============================================  ========================
add / sub / mul / div     two tensors of identical shape                  same shape
scale                     tensor, python float                            same shape
expand                    tensor whose extents are 1 or equal to target   target shape
add_bias                  x, vector of length ``x.shape[axis]``           shape of x
matmul                    (m,k)@(k,n), (b,m,k)@(b,k,n) or (b,m,k)@(k,n)   (m,n) / (b,m,n)
conv2d                    x (N,C,H,W), w (O,C,kh,kw)                      (N,O,Ho,Wo)
upsample2x_nearest        (...,H,W)                                       (...,2H,2W)
concat                    tensors equal except along ``axis``             summed extent on axis
gather_rows               x (R,C), integer indices (k,)                   (k,C)
sum / mean                any, optional axis                              reduced
softmax / log_softmax     any, axis with extent > 0                       same shape
========================  ==============================================  ========================

Shape violations raise :class:`ShapeError` naming the op and the shapes.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import Tensor, _make, as_tensor, get_dtype


class ShapeError(ValueError):
    pass


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _unary_axis(axis, ndim):
    if axis is None:
        return None
    return axis % ndim if isinstance(axis, int) else tuple(a % ndim for a in axis)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("div", a, b)
    out = a.data / b.data
    return _make(out, (a, b), lambda g: (g / b.data, -g * out / b.data), "div")


def scale(x: Tensor, c: float) -> Tensor:
    return _make(x.data * c, (x,), lambda g: (g * c,), "scale")


def add_scalar(x: Tensor, c: float) -> Tensor:
    return _make(x.data + c, (x,), lambda g: (g,), "add_scalar")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (0.5 * g / out,), "sqrt")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only where the value was inside."""
    inside = (x.data >= lo) & (x.data <= hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clip")


# ---------------------------------------------------------------- shape

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _make(out, (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose")


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit broadcast of size-1 axes up to ``shape`` (same rank only)."""
    shape = tuple(shape)
    if x.ndim != len(shape) or any(s != t and s != 1 for s, t in zip(x.shape, shape)):
        raise ShapeError(f"expand: cannot expand {x.shape} to {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(x.shape, shape)) if s != t)
    return _make(
        np.broadcast_to(x.data, shape).copy(),
        (x,),
        lambda g: (g.sum(axis=axes, keepdims=True),),
        "expand",
    )


def add_bias(x: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    axis = axis % x.ndim
    if b.ndim != 1 or b.shape[0] != x.shape[axis]:
        raise ShapeError(f"add_bias: bias {b.shape} does not fit axis {axis} of {x.shape}")
    view = [1] * x.ndim
    view[axis] = -1
    others = tuple(i for i in range(x.ndim) if i != axis)
    return _make(
        x.data + b.data.reshape(view),
        (x, b),
        lambda g: (g, g.sum(axis=others)),
        "add_bias",
    )


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no tensors given")
    ref = tensors[0]
    axis = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref.shape)) if i != axis
        ):
            raise ShapeError(f"concat: shape mismatch {ref.shape} vs {t.shape} off axis {axis}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        idx = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            parts.append(g[tuple(idx)])
        return parts

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def gather_rows(x: Tensor, indices) -> Tensor:
    """Rows of a 2-D tensor at integer ``indices``; indices carry no gradient."""
    if x.ndim != 2:
        raise ShapeError(f"gather_rows: expected a 2-D tensor, got {x.shape}")
    idx = np.asarray(indices, dtype=np.intp).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError(f"gather_rows: index out of range for {x.shape[0]} rows")
    rows = x.shape[0]
    unique = np.unique(idx).size == idx.size

    def backward(g):
        out = np.zeros((rows, g.shape[1]), dtype=g.dtype)
        if unique:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _make(x.data[idx], (x,), backward, "gather_rows")


def upsample2x_nearest(x: Tensor) -> Tensor:
    if x.ndim < 2:
        raise ShapeError(f"upsample2x_nearest: need at least 2 axes, got {x.shape}")
    out = x.data.repeat(2, axis=-2).repeat(2, axis=-1)

    def backward(g):
        h, w = g.shape[-2] // 2, g.shape[-1] // 2
        return (g.reshape(g.shape[:-2] + (h, 2, w, 2)).sum(axis=(-3, -1)),)

    return _make(out, (x,), backward, "upsample2x_nearest")


# ---------------------------------------------------------------- reductions

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axis = _unary_axis(axis, x.ndim)
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axis = _unary_axis(axis, x.ndim)
    if axis is None:
        count = x.size
    elif isinstance(axis, int):
        count = x.shape[axis]
    else:
        count = int(np.prod([x.shape[a] for a in axis]))
    if count == 0:
        raise ShapeError(f"mean: empty reduction over axis {axis} of {x.shape}")
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------- softmax family

def _check_axis(op: str, x: Tensor, axis: int) -> int:
    if x.ndim == 0:
        raise ShapeError(f"{op}: scalar input has no axis")
    axis = axis % x.ndim
    if x.shape[axis] == 0:
        raise ShapeError(f"{op}: axis {axis} of {x.shape} has extent 0")
    return axis


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis("softmax", x, axis)
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis("log_softmax", x, axis)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), backward, "log_softmax")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under row-wise softmax."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy: expected (batch, classes), got {logits.shape}")
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    if labels.shape[0] != logits.shape[0]:
        raise ShapeError(f"cross_entropy: {labels.shape[0]} labels for {logits.shape} logits")
    onehot = np.zeros(logits.shape, dtype=get_dtype())
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    picked = sum(mul(log_softmax(logits, axis=1), Tensor(onehot)))
    return scale(picked, -1.0 / labels.shape[0])


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ok = (
        (a.ndim == 2 and b.ndim == 2 and a.shape[1] == b.shape[0])
        or (a.ndim == 3 and b.ndim == 3 and a.shape[0] == b.shape[0] and a.shape[2] == b.shape[1])
        or (a.ndim == 3 and b.ndim == 2 and a.shape[2] == b.shape[0])
    )
    if not ok:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if a.ndim == 3 and b.ndim == 2:
            gb = a.data.reshape(-1, a.shape[2]).T @ g.reshape(-1, g.shape[2])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """(N*Ho*Wo, C*kh*kw) patch matrix of a padded (N, C, H, W) array."""
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    win = as_strided(
        xp,
        shape=(n, ho, wo, c, kh, kw),
        strides=(sn, sh * stride, sw * stride, sc, sh, sw),
        writeable=False,
    )
    return win.reshape(n * ho * wo, c * kh * kw)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, zero padding, no bias (see :func:`add_bias`)."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: shape mismatch {x.shape} vs {w.shape}")
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: kernel {w.shape} too large for input {x.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    xp = np.ascontiguousarray(xp)
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wm = w.data.reshape(o, -1)
    out = (cols @ wm.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (g2.T @ cols).reshape(w.shape)
        dcols = (g2 @ wm).reshape(n, ho, wo, c, kh, kw)
        gxp = np.zeros((n, c) + xp.shape[2:], dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        gx = gxp[:, :, padding:padding + h, padding:padding + wd] if padding else gxp
        return gx, gw

    return _make(np.ascontiguousarray(out), (x, w), backward, "conv2d")
