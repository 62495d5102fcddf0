"""Differentiable operations on `Tensor`.

Every op computes its forward result with numpy and, when an input requires a
gradient, records a closure that maps the output gradient to input gradients.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from src.core.tensor import Tensor, as_tensor, grad_enabled, record
from src.utils.errors import (
    DegenerateVectorError,
    DimensionError,
    InvalidValueError,
    RankError,
)

GELU_C = math.sqrt(2.0 / math.pi)


def _result(kind: str, data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor._wrap(data)
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = record(kind, inputs, backward)
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out the axes numpy broadcasting added so `grad` matches `shape`."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, kind: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{kind}: incompatible shapes {a.shape} and {b.shape}")


# elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _result(
        "add", a.data + b.data, (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _result(
        "sub", a.data - b.data, (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return _result(
        "mul", a.data * b.data, (a, b),
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    return _result(
        "div", a.data / b.data, (a, b),
        lambda g: (
            unbroadcast(g / b.data, a.shape),
            unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _result("neg", -x.data, (x,), lambda g: (-g,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _result("exp", out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    return _result("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return _result("sqrt", out, (x,), lambda g: (g * 0.5 / out,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _result("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _result("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def gelu(x) -> Tensor:
    """tanh-approximated GELU."""
    x = as_tensor(x)
    u = x.data
    inner = GELU_C * (u + 0.044715 * u ** 3)
    t = np.tanh(inner)
    out = 0.5 * u * (1.0 + t)

    def backward(g):
        d_inner = GELU_C * (1.0 + 3.0 * 0.044715 * u * u)
        return (g * (0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * d_inner),)

    return _result("gelu", out, (x,), backward)


ACTIVATIONS = {"gelu": gelu, "relu": relu}


# reductions and shape ops

def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result("sum", out, (x,), backward)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))
    return div(sum(x, axis=axis, keepdims=keepdims), float(count))


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {tuple(shape)}")
    return _result("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def swapaxes(x, axis1: int, axis2: int) -> Tensor:
    x = as_tensor(x)
    out = np.swapaxes(x.data, axis1, axis2)
    return _result("swapaxes", out, (x,), lambda g: (np.swapaxes(g, axis1, axis2),))


def broadcast_to(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    out = np.broadcast_to(x.data, tuple(shape)).copy()
    return _result("broadcast_to", out, (x,), lambda g: (unbroadcast(g, x.shape),))


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    out = np.array(x.data[index])

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _result("getitem", out, (x,), backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    parts = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[p.shape for p in parts]} on axis {axis}")
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result("concat", out, parts, backward)


def take_rows(table, ids: np.ndarray) -> Tensor:
    """Embedding lookup: rows of a 2-D `table` gathered by an integer id array."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    out = table.data[ids]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _result("take_rows", out, (table,), backward)


# linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise RankError(f"matmul expects matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _result("matmul", out, (a, b), backward)


def kron(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise RankError(f"kron expects two matrices, got shapes {a.shape} and {b.shape}")
    p, q = a.shape
    r, s = b.shape
    out = np.kron(a.data, b.data)

    def backward(g):
        blocks = g.reshape(p, r, q, s)
        ga = np.einsum("irjs,rs->ij", blocks, b.data)
        gb = np.einsum("irjs,ij->rs", blocks, a.data)
        return ga, gb

    return _result("kron", out, (a, b), backward)


# normalisation and softmax

def _check_finite(x: Tensor, kind: str):
    if np.isnan(x.data).any():
        raise InvalidValueError(f"{kind}: input contains NaN")
    if not np.isfinite(x.data).all():
        raise InvalidValueError(f"{kind}: input contains non-finite values")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    _check_finite(x, "log_softmax")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    out = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * np.sum(g, axis=axis, keepdims=True),)

    return _result("log_softmax", out, (x,), backward)


def log_softmax_row(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 1:
        raise RankError(f"log_softmax_row expects a vector, got shape {x.shape}")
    return log_softmax(x, axis=-1)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _result("softmax", out, (x,), backward)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: parameters {gamma.shape}/{beta.shape} do not match feature size {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv_std
    out = xhat * gamma.data + beta.data

    def backward(g):
        gxhat = g * gamma.data
        gx = inv_std * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result("layer_norm", out, (x, gamma, beta), backward)


# similarity

def row_norms(x) -> Tensor:
    x = as_tensor(x)
    if (np.sum(x.data * x.data, axis=-1) == 0).any():
        raise DegenerateVectorError(f"zero-norm row in tensor of shape {x.shape}")
    return sqrt(sum(mul(x, x), axis=-1, keepdims=True))


def normalize_rows(x) -> Tensor:
    x = as_tensor(x)
    return div(x, row_norms(x))


def cosine_sim(u, v) -> Tensor:
    u, v = as_tensor(u), as_tensor(v)
    if u.ndim != 1 or v.ndim != 1:
        raise RankError(f"cosine_sim expects vectors, got shapes {u.shape} and {v.shape}")
    if u.shape != v.shape:
        raise DimensionError(f"cosine_sim shape mismatch: {u.shape} vs {v.shape}")
    dot = sum(mul(u, v))
    return div(dot, mul(row_norms(u), row_norms(v)).reshape(()))


def cosine_matrix(a, b) -> Tensor:
    """Pairwise cosine similarities between the rows of `a` [N×d] and `b` [M×d]."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise RankError(f"cosine_matrix expects matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"cosine_matrix dimension mismatch: {a.shape} vs {b.shape}")
    return matmul(normalize_rows(a), swapaxes(normalize_rows(b), 0, 1))
