# core/ops.py
"""
Differentiable primitives. Each returns a new Tensor whose backward closure
maps the upstream gradient to one gradient per parent (None when a parent
needs none). Rank must match between operands; the only broadcasting allowed
is along axes of size 1 (e.g. a one-channel mask over an RGB image).
"""
from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from core.errors import ShapeError
from core.tensor import Tensor, as_tensor


def _node(data: np.ndarray, parents: Sequence[Tensor], op: str, backward) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(
        data,
        requires_grad=req,
        op=op,
        _parents=tuple(parents) if req else (),
        _backward=backward if req else None,
    )


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True) if axes else g


def _check_pair(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    if a.data.ndim != b.data.ndim:
        raise ShapeError(op, a.shape, b.shape, "operands must have equal rank")
    out = []
    for x, y in zip(a.shape, b.shape):
        if x != y and x != 1 and y != 1:
            raise ShapeError(op, a.shape, b.shape)
        out.append(max(x, y))
    return tuple(out)


# ---------- affine / conv ----------

def dense(x: Tensor, w: Tensor, b: Optional[Tensor] = None, name: str = "dense") -> Tensor:
    """x: (N, F); w: (O, F); b: (O,). Returns x @ w.T + b."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(name, (None, w.shape[1] if w.data.ndim == 2 else None), x.shape)
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"{name}.bias", (w.shape[0],), b.shape)
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def backward(g):
        gx = g @ w.data if x.requires_grad else None
        gw = g.T @ x.data if w.requires_grad else None
        gb = g.sum(axis=0) if b is not None and b.requires_grad else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _node(out, parents, name, backward)


def _conv_out(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d(
    x: Tensor,
    w: Tensor,
    b: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    name: str = "conv2d",
) -> Tensor:
    """x: (N, C, H, W); w: (O, C, k, k); zero padding; stride 1 or 2."""
    if stride not in (1, 2):
        raise ShapeError(name, "stride in (1, 2)", stride)
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(name, (None, w.shape[1] if w.data.ndim == 4 else None, None, None), x.shape)
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"{name}.bias", (w.shape[0],), b.shape)
    n, c, h, wd = x.shape
    o, _, k, k2 = w.shape
    if k != k2:
        raise ShapeError(f"{name}.kernel", (o, c, k, k), w.shape)
    ho, wo = _conv_out(h, k, stride, padding), _conv_out(wd, k, stride, padding)
    if ho <= 0 or wo <= 0:
        raise ShapeError(name, "input larger than kernel", x.shape)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    out = np.einsum("nchwij,ocij->nohw", win, w.data, optimize=True)
    if b is not None:
        out = out + b.data[None, :, None, None]

    def backward(g):
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.einsum("nohw,nchwij->ocij", g, win, optimize=True)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += np.einsum(
                        "nohw,oc->nchw", g, w.data[:, :, i, j], optimize=True
                    )
            gx = gxp[:, :, padding:padding + h, padding:padding + wd] if padding else gxp
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _node(out, parents, name, backward)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
    name: str = "batch_norm",
) -> Tensor:
    """
    Normalizes (N, F) over N or (N, C, H, W) over N, H, W. Training mode uses
    batch statistics and folds them into the running buffers in place
    (running = momentum * running + (1 - momentum) * batch); inference mode
    uses the running buffers.
    """
    if x.data.ndim == 2:
        axes, bshape = (0,), (1, -1)
    elif x.data.ndim == 4:
        axes, bshape = (0, 2, 3), (1, -1, 1, 1)
    else:
        raise ShapeError(name, "(N, F) or (N, C, H, W)", x.shape)
    feat = x.shape[1]
    if gamma.shape != (feat,) or beta.shape != (feat,):
        raise ShapeError(f"{name}.affine", (feat,), gamma.shape)

    g_ = gamma.data.reshape(bshape)
    if training:
        m = int(np.prod([x.shape[a] for a in axes]))
        mean = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mean) * inv_std
        if running_mean is not None:
            running_mean *= momentum
            running_mean += (1.0 - momentum) * mean.reshape(-1).astype(running_mean.dtype)
            running_var *= momentum
            running_var += (1.0 - momentum) * var.reshape(-1).astype(running_var.dtype)
    else:
        inv_std = 1.0 / np.sqrt(running_var.reshape(bshape) + eps)
        xhat = (x.data - running_mean.reshape(bshape)) * inv_std
    out = g_ * xhat + beta.data.reshape(bshape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * g_
            if training:
                gx = (inv_std / m) * (
                    m * gxhat
                    - gxhat.sum(axis=axes, keepdims=True)
                    - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
                )
            else:
                gx = gxhat * inv_std
        return gx, ggamma, gbeta

    return _node(out, (x, gamma, beta), name, backward)


# ---------- nonlinearities ----------

def relu(x: Tensor, name: str = "relu") -> Tensor:
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0).astype(x.dtype), (x,), name, lambda g: (g * mask,))


def maximum0(x: Tensor, name: str = "max0") -> Tensor:
    """max(x, 0); the hinge of the triplet term."""
    return relu(x, name=name)


def sigmoid(x: Tensor, name: str = "sigmoid") -> Tensor:
    s = expit(x.data).astype(x.dtype)
    return _node(s, (x,), name, lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor, name: str = "tanh") -> Tensor:
    t = np.tanh(x.data)
    return _node(t, (x,), name, lambda g: (g * (1.0 - t * t),))


# ---------- spatial ----------

def global_avg_pool(x: Tensor, name: str = "gap") -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(name, (None, None, None, None), x.shape)
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

    return _node(out, (x,), name, backward)


def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """
    (n_out, n_in) interpolation weights with half-pixel centers (align-corners
    off), source coordinate clamped to [0, n_in - 1]. Rows sum to 1.
    """
    a = np.zeros((n_out, n_in), dtype=dtype)
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    rows = np.arange(n_out)
    np.add.at(a, (rows, i0), 1.0 - frac)
    np.add.at(a, (rows, i1), frac)
    return a


def upsample_bilinear(x: Tensor, height: int, width: int, name: str = "upsample") -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(name, (None, None, None, None), x.shape)
    _, _, h, w = x.shape
    ah = bilinear_matrix(h, height, x.dtype)
    aw = bilinear_matrix(w, width, x.dtype)
    out = np.einsum("Hh,nchw,Ww->ncHW", ah, x.data, aw, optimize=True)

    def backward(g):
        return (np.einsum("Hh,ncHW,Ww->nchw", ah, g, aw, optimize=True),)

    return _node(out, (x,), name, backward)


# ---------- elementwise ----------

def mul(a: Tensor, b: Tensor, name: str = "mul") -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(name, a, b)
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), name, backward)


def add(a: Tensor, b: Tensor, name: str = "add") -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(name, a, b)
    out = a.data + b.data

    def backward(g):
        ga = _unbroadcast(g, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), name, backward)


def scale_shift(x: Tensor, scale: float = 1.0, shift: float = 0.0, name: str = "scale_shift") -> Tensor:
    """scale * x + shift with constant scalars; 1 - x is scale_shift(x, -1, 1)."""
    out = (scale * x.data + shift).astype(x.dtype)
    return _node(out, (x,), name, lambda g: (g * scale,))


def complement(x: Tensor, name: str = "complement") -> Tensor:
    return scale_shift(x, -1.0, 1.0, name=name)


# ---------- structural ----------

def concat(tensors: Sequence[Tensor], axis: int = 1, name: str = "concat") -> Tensor:
    if not tensors:
        raise ShapeError(name, "at least one operand", 0)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(i != axis and a != r for i, (a, r) in enumerate(zip(t.shape, ref))):
            raise ShapeError(name, ref, t.shape, f"concat axis={axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) if t.requires_grad else None
            for i, t in enumerate(tensors)
        )

    return _node(out, tuple(tensors), name, backward)


def slice_axis(x: Tensor, start: int, stop: int, axis: int = 1, name: str = "slice") -> Tensor:
    if not 0 <= start <= stop <= x.shape[axis]:
        raise ShapeError(name, f"0 <= {start} <= {stop} <= dim", x.shape)
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = x.data[idx].copy()

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        return (gx,)

    return _node(out, (x,), name, backward)


# ---------- reductions ----------

def squared_error(x: Tensor, target, name: str = "sq_err") -> Tensor:
    """Per-row sum of (x - target)^2 over all non-batch axes; target is a constant."""
    t = np.asarray(target, dtype=x.dtype)
    diff = x.data - t
    axes = tuple(range(1, x.data.ndim))
    out = (diff * diff).sum(axis=axes) if axes else diff * diff
    shape = (-1,) + (1,) * len(axes)

    def backward(g):
        return (2.0 * diff * g.reshape(shape),)

    return _node(out, (x,), name, backward)


def l1_norm(x: Tensor, name: str = "l1") -> Tensor:
    """Sum of |x|; subgradient 0 at 0."""
    sign = np.sign(x.data)
    return _node(np.abs(x.data).sum(), (x,), name, lambda g: (g * sign,))


def euclidean(a: Tensor, b: Tensor, name: str = "euclid") -> Tensor:
    """Row-wise ||a - b||_2 for (N, F) operands; gradient 0 where the distance is 0."""
    if a.shape != b.shape or a.data.ndim != 2:
        raise ShapeError(name, a.shape, b.shape)
    diff = a.data - b.data
    d = np.sqrt((diff * diff).sum(axis=1))
    safe = np.where(d > 0, d, 1.0)
    unit = np.where((d > 0)[:, None], diff / safe[:, None], 0.0)

    def backward(g):
        ga = unit * g[:, None] if a.requires_grad else None
        gb = -unit * g[:, None] if b.requires_grad else None
        return ga, gb

    return _node(d, (a, b), name, backward)


def mean(x: Tensor, name: str = "mean") -> Tensor:
    n = x.data.size
    return _node(np.asarray(x.data.mean()), (x,), name, lambda g: (np.full_like(x.data, g / n),))


def total(x: Tensor, name: str = "sum") -> Tensor:
    return _node(np.asarray(x.data.sum()), (x,), name, lambda g: (np.full_like(x.data, g),))


def scale(x: Tensor, c: float, name: str = "scale") -> Tensor:
    return scale_shift(x, c, 0.0, name=name)
