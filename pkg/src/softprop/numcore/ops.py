"""Differentiable operations on :class:`~softprop.numcore.tensor.Tensor`.

Every op computes its forward value with numpy and registers a closure that
maps the output gradient to one gradient per parent (``None`` for parents that
receive nothing).
"""

from __future__ import annotations

import numpy as np

from softprop.errors import ShapeError
from softprop.numcore.tensor import Tensor, check_finite, is_checked


def _t(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def _pair(a, b) -> tuple:
    # plain numbers/arrays adopt the dtype of the tensor operand
    if isinstance(a, Tensor):
        return a, _t(b, like=a)
    b = _t(b)
    return _t(a, like=b), b


def _checked(*tensors: Tensor) -> None:
    if is_checked():
        for t in tensors:
            check_finite(t.data, repr(t))


_ROW_BLOCK = 256


def _mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # BLAS picks its kernel from the matrix shape, so a row's rounding can
    # depend on how many rows came with it. Feeding fixed-size row blocks
    # (the last one zero-padded) makes every row's result independent of
    # the others, which nested grids and batch splits rely on.
    m = a.shape[0]
    out = np.empty((m, b.shape[1]), dtype=np.result_type(a, b))
    full = m - m % _ROW_BLOCK
    for s in range(0, full, _ROW_BLOCK):
        np.matmul(a[s : s + _ROW_BLOCK], b, out=out[s : s + _ROW_BLOCK])
    if full < m:
        pad = np.zeros((_ROW_BLOCK, a.shape[1]), dtype=a.dtype)
        pad[: m - full] = a[full:]
        out[full:] = (pad @ b)[: m - full]
    return out


def rowwise_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Plain-array ``a @ b`` whose row ``i`` never depends on the other rows of ``a``."""
    return _mm(np.asarray(a), np.asarray(b))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# elementwise -----------------------------------------------------------


def add(a, b) -> Tensor:
    """Elementwise sum with numpy broadcasting (bias add is the common case)."""
    a, b = _pair(a, b)
    try:
        out = np.add(a.data, b.data)
    except ValueError:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}") from None
    _checked(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.from_op(out, (a, b), backward)


def bias_add(x: Tensor, bias: Tensor) -> Tensor:
    if bias.ndim != 1 or x.shape[-1] != bias.shape[0]:
        raise ShapeError(f"bias of shape {bias.shape} does not fit input of shape {x.shape}")
    return add(x, bias)


def scale(x: Tensor, factor: float) -> Tensor:
    x = _t(x)
    out = x.data * x.dtype.type(factor)

    def backward(g):
        return (g * g.dtype.type(factor),)

    return Tensor.from_op(out, (x,), backward)


def mul(a, b) -> Tensor:
    """Elementwise product of same-shape tensors (or tensor and broadcastable constant)."""
    a, b = _pair(a, b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}") from None
    _checked(a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(out, (a, b), backward)


def square(x: Tensor) -> Tensor:
    return mul(x, x)


def relu(x: Tensor) -> Tensor:
    x = _t(x)
    _checked(x)
    out = np.maximum(x.data, x.dtype.type(0))

    def backward(g):
        return (g * (x.data > 0),)

    return Tensor.from_op(out, (x,), backward)


# reductions and shape ------------------------------------------------------


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    x = _t(x)
    out = np.asarray(x.data.sum(axis=axis), dtype=x.dtype)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),)

    return Tensor.from_op(out, (x,), backward)


def mean(x: Tensor, axis=None) -> Tensor:
    x = _t(x)
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis=axis), 1.0 / float(count))


def reshape(x: Tensor, shape) -> Tensor:
    x = _t(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} into {tuple(shape)}") from None

    def backward(g):
        return (g.reshape(x.shape),)

    return Tensor.from_op(out, (x,), backward)


def flatten(x: Tensor) -> Tensor:
    """Collapse all but the leading (batch) axis."""
    return reshape(x, (x.shape[0], -1))


def take_rows(x: Tensor, index) -> Tensor:
    """Gather ``x[index]`` along axis 0; repeated indices accumulate gradient."""
    x = _t(x)
    index = np.asarray(index, dtype=np.intp)
    out = x.data[index]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return Tensor.from_op(out, (x,), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_t(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("cannot concatenate shapes " + ", ".join(str(t.shape) for t in tensors)) from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return Tensor.from_op(out, tuple(tensors), backward)


# linear algebra ------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for ``a`` of shape (..., K) and ``b`` of shape (K, H)."""
    a, b = _t(a), _t(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    _checked(a, b)
    lead = a.shape[:-1]
    a2 = a.data.reshape(-1, a.shape[-1])
    out = _mm(a2, b.data).reshape(*lead, b.shape[1])

    def backward(g):
        g2 = g.reshape(-1, b.shape[1])
        ga = _mm(g2, b.data.T).reshape(a.shape) if a.requires_grad else None
        gb = a2.T @ g2 if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(out, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as (in, out)."""
    y = matmul(x, weight)
    return bias_add(y, bias) if bias is not None else y


# convolution ---------------------------------------------------------------


def _conv_out(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0,
           channels_last: bool = False) -> Tensor:
    """2D cross-correlation with an (O, C, kh, kw) kernel on NCHW input (NHWC with ``channels_last``)."""
    x, weight = _t(x), _t(weight)
    cax = 3 if channels_last else 1
    if x.ndim != 4 or weight.ndim != 4 or x.shape[cax] != weight.shape[1]:
        raise ShapeError(f"conv2d shape mismatch: input {x.shape}, kernel {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"conv2d bias shape {bias.shape} does not fit kernel {weight.shape}")
    _checked(x, weight)
    if channels_last:
        n, h, w, c = x.shape
    else:
        n, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    ho, wo = _conv_out(h, kh, stride, padding), _conv_out(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d kernel {weight.shape} too large for input {x.shape}")
    # im2col in channels-last order so the copied rows are contiguous runs of c
    xp = x.data if channels_last else x.data.transpose(0, 2, 3, 1)
    xp = np.pad(xp, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else np.ascontiguousarray(xp)
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :]
    cols = cols.reshape(n * ho * wo, kh * kw * c)
    wmat = np.ascontiguousarray(weight.data.transpose(2, 3, 1, 0).reshape(kh * kw * c, o))
    out = cols @ wmat
    if bias is not None:
        out = out + bias.data
    out = out.reshape(n, ho, wo, o)
    if not channels_last:
        out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(g):
        g2 = (g if channels_last else np.ascontiguousarray(g.transpose(0, 2, 3, 1))).reshape(-1, o)
        gw = None
        if weight.requires_grad:
            gw = np.ascontiguousarray((cols.T @ g2).reshape(kh, kw, c, o).transpose(3, 2, 0, 1))
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wmat.T).reshape(n, ho, wo, kh, kw, c)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += gcols[:, :, :, i, j, :]
            if padding:
                gxp = gxp[:, padding : padding + h, padding : padding + w, :]
            gx = np.ascontiguousarray(gxp if channels_last else gxp.transpose(0, 3, 1, 2))
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor.from_op(out, parents, backward)


def max_pool2x2(x: Tensor, channels_last: bool = False) -> Tensor:
    """2x2 max pooling with stride 2; ties route gradient to the first maximum."""
    x = _t(x)
    h, w = x.shape[1:3] if channels_last else x.shape[2:4]
    if x.ndim != 4 or h % 2 or w % 2:
        raise ShapeError(f"max_pool2x2 needs even spatial size, got {x.shape}")
    xd = x.data
    offsets = ((0, 0), (0, 1), (1, 0), (1, 1))

    def corner(a, i, j):
        return a[:, i::2, j::2, :] if channels_last else a[:, :, i::2, j::2]

    corners = [corner(xd, i, j) for i, j in offsets]
    out = np.maximum(np.maximum(corners[0], corners[1]), np.maximum(corners[2], corners[3]))
    # first corner (row-major within the block) equal to the max takes the gradient
    free = np.ones(out.shape, dtype=bool)
    masks = []
    for cr in corners:
        m = free & (cr == out)
        free &= ~m
        masks.append(m)

    def backward(g):
        gx = np.zeros_like(xd, dtype=g.dtype)
        for (i, j), m in zip(offsets, masks):
            corner(gx, i, j)[...] = g * m
        return (gx,)

    return Tensor.from_op(out, (x,), backward)
