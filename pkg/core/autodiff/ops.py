"""
Differentiable primitives.

Every function takes Tensors (or array-likes promoted to constants), computes the
forward value with numpy in float64, and registers a closure that maps the output
gradient to input gradients. Broadcasting follows numpy; gradients are summed back
to the input shape.
"""
from __future__ import annotations
import math
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import erf, xlogy

from core.autodiff.tensor import ArrayLike, Tensor, as_tensor, make_result
from core.errors import ConfigError, ShapeError

Axis = Optional[Union[int, Tuple[int, ...]]]

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)
LAYER_NORM_EPS = 1e-5


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, *tensors: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(*(t.shape for t in tensors))
    except ValueError:
        shapes = " vs ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"{op}: shapes do not broadcast ({shapes})") from None


# elementwise arithmetic

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def back(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), back, "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def back(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), back, "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def back(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), back, "mul")


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def back(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), back, "div")


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def broadcast_to(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {shape}") from None
    return make_result(out, (a,), lambda g: (unbroadcast(g, a.shape),), "broadcast_to")


# linear algebra and structure

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: batch dims do not broadcast {a.shape} @ {b.shape}") from None

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make_result(out, (a, b), back, "matmul")


def concat(tensors: Sequence[ArrayLike], axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: no inputs")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in ts)
        raise ShapeError(f"concat: shapes {shapes} do not agree off axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(out, ts, back, "concat")


def stack(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("stack: no inputs")
    expanded = [reshape(t, _insert_axis(t.shape, axis)) for t in ts]
    return concat(expanded, axis=axis)


def _insert_axis(shape: Tuple[int, ...], axis: int) -> Tuple[int, ...]:
    axis = axis % (len(shape) + 1)
    return shape[:axis] + (1,) + shape[axis:]


def getitem(a: ArrayLike, index) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data[index]
    except IndexError as e:
        raise ShapeError(f"slice: {e} for shape {a.shape}") from None

    def back(g):
        full = np.zeros(a.shape, dtype=np.float64)
        np.add.at(full, index, g)
        return (full,)

    return make_result(np.array(out, dtype=np.float64), (a,), back, "slice")


def reshape(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return make_result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: ArrayLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(ax % a.ndim for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inverse = tuple(np.argsort(axes))
    return make_result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def swapaxes(a: ArrayLike, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, axes)


# reductions

def _expand_reduced(g: np.ndarray, shape: Tuple[int, ...], axis: Axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else axis
        for ax in sorted(ax % len(shape) for ax in axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum(a: ArrayLike, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return make_result(
        np.asarray(out, dtype=np.float64),
        (a,),
        lambda g: (np.array(_expand_reduced(g, a.shape, axis, keepdims)),),
        "sum",
    )


def mean(a: ArrayLike, axis: Axis = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    if count == 0:
        raise ShapeError(f"mean: empty reduction over shape {a.shape}")
    out = a.data.mean(axis=axis, keepdims=keepdims)
    return make_result(
        np.asarray(out, dtype=np.float64),
        (a,),
        lambda g: (np.array(_expand_reduced(g, a.shape, axis, keepdims)) / count,),
        "mean",
    )


# normalizations and activations

def _check_axis(op: str, a: Tensor, axis: int) -> int:
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"{op}: axis {axis} out of range for shape {a.shape}")
    return axis % a.ndim


def softmax(a: ArrayLike, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    axis = _check_axis("softmax", a, axis)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (a,), back, "softmax")


def log_softmax(a: ArrayLike, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    axis = _check_axis("log_softmax", a, axis)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def back(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (a,), back, "log_softmax")


def layer_norm(x: ArrayLike, gamma: ArrayLike, beta: ArrayLike, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis, then scale by gamma and shift by beta."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    width = x.shape[-1]
    if gamma.shape != (width,) or beta.shape != (width,):
        raise ShapeError(f"layer_norm: gamma {gamma.shape} / beta {beta.shape} vs width {width}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data

    def back(g):
        lead = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        dbeta = g.sum(axis=lead) if beta.requires_grad else None
        dx = None
        if x.requires_grad:
            dxhat = g * gamma.data
            dx = inv_std * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        return dx, dgamma, dbeta

    return make_result(out, (x, gamma, beta), back, "layer_norm")


def gelu(x: ArrayLike) -> Tensor:
    """Exact GELU: x * Phi(x)."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)

    def back(g):
        return (g * (cdf + x.data * pdf),)

    return make_result(x.data * cdf, (x,), back, "gelu")


def relu(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def exp(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return make_result(out, (x,), lambda g: (g * out,), "exp")


def log(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    with np.errstate(divide="ignore"):
        out = np.log(x.data)
    return make_result(out, (x,), lambda g: (g / x.data,), "log")


def sqrt(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(x.data)
    return make_result(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def xlogx(x: ArrayLike) -> Tensor:
    """x * ln(x) with the continuous extension 0 at x = 0."""
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise ValueError("xlogx: negative input")
    out = xlogy(x.data, x.data)
    safe = np.where(x.data > 0, x.data, 1.0)
    deriv = np.where(x.data > 0, np.log(safe) + 1.0, 0.0)
    return make_result(out, (x,), lambda g: (g * deriv,), "xlogx")


def dropout(x: ArrayLike, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return make_result(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# attention

def multi_head_attention(q: ArrayLike, k: ArrayLike, v: ArrayLike, heads: int, axis: int = -2) -> Tensor:
    """
    Scaled dot-product attention along `axis`, split into `heads` groups of channels.

    q, k, v share every dimension except the last (channel) one; q and k share
    their channel width. The output has the shape of v.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if heads < 1 or q.shape[-1] % heads or v.shape[-1] % heads:
        raise ConfigError(
            f"attention: widths q={q.shape[-1]} v={v.shape[-1]} not divisible by heads={heads}"
        )
    if q.shape != k.shape or q.shape[:-1] != v.shape[:-1]:
        raise ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape} do not conform")
    ndim = q.ndim
    axis = axis % ndim
    if axis == ndim - 1:
        raise ShapeError("attention: the channel axis cannot be the sequence axis")

    perm = [i for i in range(ndim - 1) if i != axis] + [axis, ndim - 1]
    inverse = list(np.argsort(perm))
    qt, kt, vt = (transpose(t, perm) for t in (q, k, v))

    def split(t: Tensor) -> Tensor:
        lead, length, width = t.shape[:-2], t.shape[-2], t.shape[-1]
        t = reshape(t, lead + (length, heads, width // heads))
        return swapaxes(t, -3, -2)

    qh, kh, vh = split(qt), split(kt), split(vt)
    scale = 1.0 / math.sqrt(qh.shape[-1])
    scores = mul(matmul(qh, swapaxes(kh, -1, -2)), scale)
    weights = softmax(scores, axis=-1)
    out = matmul(weights, vh)
    out = swapaxes(out, -3, -2)
    out = reshape(out, out.shape[:-2] + (v.shape[-1],))
    return transpose(out, inverse)


PRIMITIVES = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "concat": concat,
    "slice": getitem,
    "reshape": reshape,
    "transpose": transpose,
    "sum": sum,
    "mean": mean,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "layer_norm": layer_norm,
    "gelu": gelu,
    "relu": relu,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "xlogx": xlogx,
}


def primitive_forward(kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch a primitive by name; used by tooling that builds graphs from descriptions."""
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ConfigError(f"unknown primitive {kind!r}; known: {', '.join(sorted(PRIMITIVES))}") from None
    return fn(*inputs, **kwargs)
