"""Differentiable primitives.

Each function takes Tensors (or arrays/scalars where noted), returns a new
Tensor and registers an analytic backward rule. Reductions use numpy's
fixed evaluation order so results are reproducible for fixed inputs.
"""

import builtins

import numpy as np
from scipy.special import erf, expit

from ..errors import BadLabel, ByteOutOfRange, ShapeMismatch
from .tensor import Tensor, as_tensor

_SQRT_2 = float(np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))
SOFTPLUS_THRESHOLD = 20.0


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _wrap(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float64
    return Tensor(np.asarray(x, dtype=dtype))


# -- elementwise arithmetic ------------------------------------------------

def add(a, b):
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor._from_op(a.data + b.data, (a, b), backward)


def sub(a, b):
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return Tensor._from_op(a.data - b.data, (a, b), backward)


def mul(a, b):
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(ad * bd, (a, b), backward)


def matmul(a, b):
    """Batched matrix product ``a @ b`` with broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    ad, bd = a.data, b.data

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return Tensor._from_op(out, (a, b), backward)


def linear(x, weight, bias=None):
    """``x @ weight + bias`` for x of shape [..., K] and weight [K, N]."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeMismatch(f"linear: input width {x.shape[-1]} vs weight {weight.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data
    if bias is not None:
        out += bias.data
    out = out.reshape(lead + (weight.shape[1],))
    wd = weight.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ wd.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return Tensor._from_op(out, parents, backward)


# -- shape manipulation -----------------------------------------------------

def reshape(x, shape):
    old = x.shape

    def backward(g):
        return (g.reshape(old),)

    return Tensor._from_op(x.data.reshape(shape), (x,), backward)


def transpose(x, axes):
    inv = np.argsort(axes)

    def backward(g):
        return (np.transpose(g, inv),)

    return Tensor._from_op(np.transpose(x.data, axes), (x,), backward)


def narrow(x, axis, start, stop):
    """Slice ``[start:stop]`` along ``axis``."""
    axis = axis % x.ndim
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    shape, dtype = x.shape, x.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        full[idx] = g
        return (full,)

    return Tensor._from_op(x.data[idx], (x,), backward)


def split(x, sizes, axis=-1):
    if builtins.sum(sizes) != x.shape[axis]:
        raise ShapeMismatch(f"split sizes {sizes} do not sum to extent {x.shape[axis]}")
    out, start = [], 0
    for n in sizes:
        out.append(narrow(x, axis, start, start + n))
        start += n
    return out


def select(x, index, axis):
    """Pick one position along ``axis`` (the axis is dropped)."""
    axis = axis % x.ndim
    idx = [slice(None)] * x.ndim
    idx[axis] = index
    idx = tuple(idx)
    shape, dtype = x.shape, x.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        full[idx] = g
        return (full,)

    return Tensor._from_op(x.data[idx], (x,), backward)


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        out = []
        for i in range(len(tensors)):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(bounds[i], bounds[i + 1])
            out.append(g[tuple(idx)])
        return tuple(out)

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=axis),
                           tensors, backward)


def sum(x, axis=None):  # noqa: A001 - mirrors numpy naming
    shape = x.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return Tensor._from_op(np.asarray(x.data.sum(axis=axis)), (x,), backward)


def mean(x, axis=None):
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis), 1.0 / float(n))


# -- activations ------------------------------------------------------------

def exp(x):
    y = np.exp(x.data)

    def backward(g):
        return (g * y,)

    return Tensor._from_op(y, (x,), backward)


def log(x):
    xd = x.data

    def backward(g):
        return (g / xd,)

    return Tensor._from_op(np.log(xd), (x,), backward)


def silu(x):
    xd = x.data
    s = expit(xd)

    def backward(g):
        return (g * s * (1.0 + xd * (1.0 - s)),)

    return Tensor._from_op(xd * s, (x,), backward)


def gelu(x):
    """Exact GELU, ``x * Phi(x)``."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / _SQRT_2))

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return Tensor._from_op(xd * cdf, (x,), backward)


def softplus(x):
    xd = x.data
    big = xd > SOFTPLUS_THRESHOLD
    y = np.where(big, xd, np.log1p(np.exp(np.minimum(xd, SOFTPLUS_THRESHOLD))))

    def backward(g):
        return (g * np.where(big, 1.0, expit(xd)),)

    return Tensor._from_op(y, (x,), backward)


ACTIVATIONS = {"silu": silu, "gelu": gelu, "softplus": softplus, "exp": exp}


def activation(kind, x):
    try:
        fn = ACTIVATIONS[kind.lower()]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


# -- normalisation ------------------------------------------------------------

def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalise the last axis to zero mean / unit population variance, then affine."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data
    gd = gamma.data
    lead_axes = tuple(range(xd.ndim - 1))

    def backward(g):
        gx = None
        if x.requires_grad:
            gh = g * gd
            gx = rstd * (gh - gh.mean(axis=-1, keepdims=True)
                         - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        ggamma = (g * xhat).sum(axis=lead_axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=lead_axes) if beta.requires_grad else None
        return gx, ggamma, gbeta

    return Tensor._from_op(out, (x, gamma, beta), backward)


def rms_norm(x, gamma, eps=1e-5):
    xd = x.data
    ms = (xd * xd).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(ms + eps)
    xhat = xd * rstd
    gd = gamma.data
    lead_axes = tuple(range(xd.ndim - 1))

    def backward(g):
        gx = None
        if x.requires_grad:
            gh = g * gd
            gx = rstd * (gh - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        ggamma = (g * xhat).sum(axis=lead_axes) if gamma.requires_grad else None
        return gx, ggamma

    return Tensor._from_op(xhat * gd, (x, gamma), backward)


# -- convolution ------------------------------------------------------------

def depthwise_causal_conv1d(x, w, bias=None):
    """Per-channel causal convolution.

    ``y[b, t, d] = sum_k w[d, k] * x[b, t - K + 1 + k, d] + bias[d]`` with
    zeros before the first position.
    """
    if x.ndim != 3 or w.ndim != 2 or w.shape[0] != x.shape[2]:
        raise ShapeMismatch(f"conv1d: x {x.shape}, w {w.shape}")
    if bias is not None and bias.shape != (x.shape[2],):
        raise ShapeMismatch(f"conv1d: bias {bias.shape} for {x.shape[2]} channels")
    xd, wd = x.data, w.data
    L = xd.shape[1]
    K = wd.shape[1]
    y = np.zeros_like(xd)
    for k in range(K):
        shift = K - 1 - k
        if shift >= L:
            continue
        y[:, shift:, :] += wd[:, k] * xd[:, :L - shift, :]
    if bias is not None:
        y += bias.data
    parents = (x, w) if bias is None else (x, w, bias)

    def backward(g):
        gx = np.zeros_like(xd) if x.requires_grad else None
        gw = np.zeros_like(wd) if w.requires_grad else None
        for k in range(K):
            shift = K - 1 - k
            if shift >= L:
                continue
            if gx is not None:
                gx[:, :L - shift, :] += wd[:, k] * g[:, shift:, :]
            if gw is not None:
                gw[:, k] = np.einsum("btd,btd->d", g[:, shift:, :], xd[:, :L - shift, :])
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 1))

    return Tensor._from_op(y, parents, backward)


# -- embedding / dropout --------------------------------------------------------

def embedding(indices, table):
    """Row lookup ``table[indices]``; gradients scatter-add into the table."""
    idx = np.asarray(indices)
    if idx.dtype.kind not in "iu":
        raise ByteOutOfRange("embedding indices must be integers")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ByteOutOfRange(f"index outside [0, {table.shape[0]})")
    idx = idx.astype(np.intp, copy=False)
    n, d = table.shape

    def backward(g):
        gt = np.zeros((n, d), dtype=g.dtype)
        np.add.at(gt, idx.ravel(), g.reshape(-1, d))
        return (gt,)

    return Tensor._from_op(table.data[idx], (table,), backward)


def dropout(x, p, rng, training=True):
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)

    def backward(g):
        return (g * keep,)

    return Tensor._from_op(x.data * keep, (x,), backward)


# -- loss ------------------------------------------------------------------

def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood. Returns ``(loss, probs)``."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatch(f"logits {logits.shape} vs labels {labels.shape}")
    C = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise BadLabel(f"labels must lie in [0, {C})")
    labels = labels.astype(np.intp)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    probs = np.exp(logp)
    rows = np.arange(labels.size)
    nb = labels.size
    loss = np.asarray(-logp[rows, labels].sum() / nb)

    def backward(g):
        d = probs.copy()
        d[rows, labels] -= 1.0
        return (d * (g / nb),)

    return Tensor._from_op(loss, (logits,), backward), probs
