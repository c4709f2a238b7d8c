"""Scalar-decay state-space recurrences: discretisation, the sequential
reference scan, and the chunked block-matmul evaluation.

Shapes (one state group shared by all heads):

    a_bar  [B, L, H]       per-head decay in (0, 1]
    b_bar  [B, L, H, S]    discretised input matrix
    c      [B, L, S]       output matrix
    x      [B, L, H, P]    per-head values
    d_skip [H]             direct feed-through
"""

import numpy as np

from .. import kernels
from ..core import ops
from ..core.tensor import Tensor, as_tensor
from ..errors import ShapeMismatch

DEFAULT_CHUNK = 64


def discretize(delta, A, B_in):
    """Return ``(a_bar, b_bar)`` with ``a_bar = exp(delta * A)`` and
    ``b_bar[..., h, s] = delta[..., h] * B_in[..., s]``."""
    log_a, b_bar = discretize_log(delta, A, B_in)
    return ops.exp(log_a), b_bar


def discretize_log(delta, A, B_in):
    """Like :func:`discretize` but returns the log-decay ``delta * A``."""
    delta, A, B_in = as_tensor(delta), as_tensor(A), as_tensor(B_in)
    log_a = ops.mul(delta, A)
    nb, L, H = delta.shape
    S = B_in.shape[-1]
    b_bar = ops.mul(ops.reshape(delta, (nb, L, H, 1)), ops.reshape(B_in, (nb, L, 1, S)))
    return log_a, b_bar


def _check_shapes(a, bb, c, x, d):
    if x.ndim != 4:
        raise ShapeMismatch(f"x must be [B, L, H, P], got {x.shape}")
    nb, L, H, P = x.shape
    S = c.shape[-1]
    if a.shape != (nb, L, H):
        raise ShapeMismatch(f"a_bar {a.shape} != {(nb, L, H)}")
    if bb.shape != (nb, L, H, S):
        raise ShapeMismatch(f"b_bar {bb.shape} != {(nb, L, H, S)}")
    if c.shape != (nb, L, S):
        raise ShapeMismatch(f"c {c.shape} != {(nb, L, S)}")
    if d.shape != (H,):
        raise ShapeMismatch(f"d_skip {d.shape} != {(H,)}")


def _data(t):
    return t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)


def ssd_naive(a_bar, b_bar, c, x, d_skip, backend=None):
    """Sequential recurrence, O(L * S * P) per (batch, head). Returns an ndarray.

    ``S_t = a_t * S_{t-1} + outer(b_bar_t, x_t)``, ``y_t = c_t . S_t + d * x_t``.
    """
    a, bb, cc, xx, dd = (_data(v) for v in (a_bar, b_bar, c, x, d_skip))
    _check_shapes(a, bb, cc, xx, dd)
    out = kernels.ssd_scan_fwd(a, bb, cc, xx, dd, backend=backend)
    return out.astype(xx.dtype, copy=False)


# -- chunked evaluation -----------------------------------------------------

def _segsum(la):
    """``out[..., i, j] = sum_{k=j+1..i} la[..., k]`` for j <= i, -inf above.

    Built from a masked cumulative sum (no differences of prefix sums), so
    entries stay exact when some ``la`` are -inf.
    """
    Q = la.shape[-1]
    strict = np.tril(np.ones((Q, Q), dtype=bool), -1)
    rep = np.where(strict, la[..., :, None], 0.0)
    seg = np.cumsum(rep, axis=-2)
    return np.where(np.tril(np.ones((Q, Q), dtype=bool)), seg, -np.inf)


def _to_chunks(arr, n, Q):
    """[B, Lp, ...] -> [B, n, Q, ...]"""
    return arr.reshape((arr.shape[0], n, Q) + arr.shape[2:])


def _pad_time(arr, Lp, value=0.0):
    L = arr.shape[1]
    if L == Lp:
        return arr
    pad = [(0, 0)] * arr.ndim
    pad[1] = (0, Lp - L)
    return np.pad(arr, pad, constant_values=value)


def _chunked_forward(la, bb, c, x, Q):
    """Core chunked pass on padded inputs. Returns (y_heads, saved)."""
    nb, Lp, H, P = x.shape
    S = c.shape[-1]
    n = Lp // Q
    la_c = _to_chunks(la, n, Q).transpose(0, 3, 1, 2)            # [B,H,n,Q]
    bb_c = _to_chunks(bb, n, Q).transpose(0, 3, 1, 2, 4)         # [B,H,n,Q,S]
    c_c = _to_chunks(c, n, Q)[:, None]                           # [B,1,n,Q,S]
    x_c = _to_chunks(x, n, Q).transpose(0, 3, 1, 2, 4)           # [B,H,n,Q,P]

    cs = np.cumsum(la_c, axis=-1)                                # [B,H,n,Q]
    seg = _segsum(la_c)                                          # [B,H,n,Q,Q]
    E = np.exp(seg)                                              # zero above diagonal
    CB = np.matmul(c_c, np.swapaxes(bb_c, -1, -2))               # [B,H,n,Q,Q]
    y = np.matmul(CB * E, x_c)                                   # intra-chunk part

    w = E[..., -1, :]                                            # decay to chunk end
    bw = bb_c * w[..., None]
    st = np.matmul(np.swapaxes(bw, -1, -2), x_c)                 # [B,H,n,S,P]
    T = np.exp(cs[..., -1])                                      # [B,H,n]

    R = np.zeros((nb, H, n, S, P), dtype=x.dtype)                # state entering chunk
    for k in range(1, n):
        R[:, :, k] = T[:, :, k - 1, None, None] * R[:, :, k - 1] + st[:, :, k - 1]
    u = np.exp(cs)
    CR = np.matmul(c_c, R)                                       # [B,H,n,Q,P]
    y += u[..., None] * CR

    y = y.transpose(0, 2, 3, 1, 4).reshape(nb, Lp, H, P)
    saved = dict(c_c=c_c, bb_c=bb_c, x_c=x_c, E=E, CB=CB, w=w, bw=bw,
                 T=T, R=R, u=u, CR=CR, n=n)
    return y, saved


def _chunked_backward(dy, sv, Q):
    """Gradients w.r.t. (la, bb, c, x) for padded inputs."""
    nb, Lp, H, P = dy.shape
    n = sv["n"]
    c_c, bb_c, x_c = sv["c_c"], sv["bb_c"], sv["x_c"]
    E, CB, w, bw, T, R, u, CR = (sv[k] for k in ("E", "CB", "w", "bw", "T", "R", "u", "CR"))

    dY = _to_chunks(dy, n, Q).transpose(0, 3, 1, 2, 4)          # [B,H,n,Q,P]

    # intra-chunk
    dM = np.matmul(dY, np.swapaxes(x_c, -1, -2))                 # [B,H,n,Q,Q]
    dx = np.matmul(np.swapaxes(CB * E, -1, -2), dY)
    dCB = dM * E
    dseg = dM * CB * E
    dc = np.matmul(dCB, bb_c).sum(axis=1)                        # [B,n,Q,S]
    dbb = np.matmul(np.swapaxes(dCB, -1, -2), c_c)               # [B,H,n,Q,S]

    # carried-state contribution
    dCR = dY * u[..., None]
    du = (dY * CR).sum(axis=-1)
    dcs = du * u
    dc += np.matmul(dCR, np.swapaxes(R, -1, -2)).sum(axis=1)
    dR_local = np.matmul(np.swapaxes(c_c, -1, -2), dCR)          # [B,H,n,S,P]

    dst = np.zeros_like(R)
    dT = np.zeros_like(T)
    g_next = np.zeros_like(R[:, :, 0])
    for k in range(n - 1, -1, -1):
        # g_next is the gradient w.r.t. R_{k+1}
        dst[:, :, k] = g_next
        dT[:, :, k] = (g_next * R[:, :, k]).sum(axis=(-1, -2))
        g_next = dR_local[:, :, k] + T[:, :, k, None, None] * g_next
    dcs[..., -1] += dT * T

    # chunk-state construction
    dbw = np.matmul(x_c, np.swapaxes(dst, -1, -2))               # [B,H,n,Q,S]
    dx += np.matmul(bw, dst)
    dbb += dbw * w[..., None]
    dw = (dbw * bb_c).sum(axis=-1)                               # [B,H,n,Q]

    # back to the log-decays
    # dla_k = sum_{i >= k} dcs_i + sum_{i >= k, j < k} dseg_ij, summed without
    # cancellation so structurally zero entries stay exactly zero
    dla = np.flip(np.cumsum(np.flip(dcs, -1), axis=-1), -1)
    tail = np.flip(np.cumsum(np.flip(dseg, -2), axis=-2), -2)   # sum over i' >= i
    Q_ = tail.shape[-1]
    dla += np.where(np.tril(np.ones((Q_, Q_), dtype=bool), -1), tail, 0.0).sum(axis=-1)
    dww = dw * w
    dla += np.cumsum(dww, axis=-1) - dww                         # sum over j < k

    dla = dla.transpose(0, 2, 3, 1).reshape(nb, Lp, H)
    dbb = dbb.transpose(0, 2, 3, 1, 4).reshape(nb, Lp, H, -1)
    dc = dc.reshape(nb, Lp, -1)
    dx = dx.transpose(0, 2, 3, 1, 4).reshape(nb, Lp, H, P)
    return dla, dbb, dc, dx


def ssd_chunked_log(log_a, b_bar, c, x, d_skip, chunk=DEFAULT_CHUNK):
    """Chunked SSD taking log-decays ``log_a = delta * A`` (Tensor op)."""
    log_a, b_bar, c, x, d_skip = (as_tensor(v) for v in (log_a, b_bar, c, x, d_skip))
    _check_shapes(log_a.data, b_bar.data, c.data, x.data, d_skip.data)
    if chunk < 1:
        raise ShapeMismatch(f"chunk must be >= 1, got {chunk}")
    nb, L, H, P = x.shape
    Q = int(min(chunk, L))
    Lp = -(-L // Q) * Q
    # padding steps: decay 1 (log 0), zero input -> states and outputs unaffected
    la = _pad_time(log_a.data, Lp)
    bb = _pad_time(b_bar.data, Lp)
    cc = _pad_time(c.data, Lp)
    xx = _pad_time(x.data, Lp)
    y, saved = _chunked_forward(la, bb, cc, xx, Q)
    dd = d_skip.data
    xd = x.data
    y = y[:, :L] + dd[:, None] * xd

    def backward(g):
        gpad = _pad_time(g, Lp)
        dla, dbb, dc, dx = _chunked_backward(gpad, saved, Q)
        dx = dx[:, :L] + dd[:, None] * g
        dD = np.einsum("blhp,blhp->h", g, xd)
        return dla[:, :L], dbb[:, :L], dc[:, :L], dx, dD

    return Tensor._from_op(np.ascontiguousarray(y), (log_a, b_bar, c, x, d_skip), backward)


def ssd_chunked(a_bar, b_bar, c, x, d_skip, chunk=DEFAULT_CHUNK):
    """Chunked SSD on decays ``a_bar`` in (0, 1]; numerically equal to
    :func:`ssd_naive`. Differentiable in every input."""
    a_bar = as_tensor(a_bar)
    with np.errstate(divide="ignore"):
        log_a = ops.log(a_bar)
    return ssd_chunked_log(log_a, b_bar, c, x, d_skip, chunk=chunk)
