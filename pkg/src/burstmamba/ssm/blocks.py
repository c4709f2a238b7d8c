"""Residual pre-norm Mamba blocks.

Parameters are plain ``dict[str, Tensor]`` so a model can flatten them
under a block prefix. Both blocks map ``[B, L, D] -> [B, L, D]``.
"""

import math
from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..core import ops
from ..core.tensor import Tensor
from ..errors import ShapeMismatch
from .ssd import DEFAULT_CHUNK, discretize_log, ssd_chunked_log

DT_MIN, DT_MAX, DT_FLOOR = 1e-3, 1e-1, 1e-4


@dataclass(frozen=True)
class BlockDims:
    d_model: int
    d_state: int = 16
    expand: int = 2
    d_conv: int = 4
    headdim: int = 64

    @property
    def d_inner(self):
        return self.expand * self.d_model

    @property
    def nheads(self):
        return self.d_inner // self.headdim

    @property
    def dt_rank(self):
        return math.ceil(self.d_model / 16)


def _uniform(rng, shape, bound, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _dt_bias(rng, n, dtype):
    """Inverse-softplus of a log-uniform step size in [DT_MIN, DT_MAX]."""
    dt = np.exp(rng.uniform(math.log(DT_MIN), math.log(DT_MAX), size=n))
    dt = np.maximum(dt, DT_FLOOR)
    return (dt + np.log(-np.expm1(-dt))).astype(dtype)


def init_mamba2_block(dims, rng, dtype=np.float64):
    D, E, S, H, K = dims.d_model, dims.d_inner, dims.d_state, dims.nheads, dims.d_conv
    if E % dims.headdim:
        raise ShapeMismatch(f"expand*d_model={E} not divisible by headdim={dims.headdim}")
    p = {
        "norm_gamma": np.ones(D, dtype=dtype),
        "norm_beta": np.zeros(D, dtype=dtype),
        "in_proj": _uniform(rng, (D, 2 * E + 2 * S + H), 1 / math.sqrt(D), dtype),
        "conv_w": _uniform(rng, (E, K), 1 / math.sqrt(K), dtype),
        "conv_bias": np.zeros(E, dtype=dtype),
        "dt_bias": _dt_bias(rng, H, dtype),
        "A_log": np.log(rng.uniform(1.0, 16.0, size=H)).astype(dtype),
        "D_skip": np.ones(H, dtype=dtype),
        "gated_norm_gamma": np.ones(E, dtype=dtype),
        "out_proj": _uniform(rng, (E, D), 1 / math.sqrt(E), dtype),
    }
    return {k: Tensor(v, requires_grad=True) for k, v in p.items()}


def init_mamba1_block(dims, rng, dtype=np.float64):
    D, E, S, K, R = dims.d_model, dims.d_inner, dims.d_state, dims.d_conv, dims.dt_rank
    p = {
        "norm_gamma": np.ones(D, dtype=dtype),
        "norm_beta": np.zeros(D, dtype=dtype),
        "in_proj": _uniform(rng, (D, 2 * E), 1 / math.sqrt(D), dtype),
        "conv_w": _uniform(rng, (E, K), 1 / math.sqrt(K), dtype),
        "conv_bias": np.zeros(E, dtype=dtype),
        "x_proj": _uniform(rng, (E, R + 2 * S), 1 / math.sqrt(E), dtype),
        "dt_proj_w": _uniform(rng, (R, E), 1 / math.sqrt(R), dtype),
        "dt_proj_b": _dt_bias(rng, E, dtype),
        # S4D-real: -A[e, s] = s + 1
        "A_log": np.log(np.tile(np.arange(1, S + 1, dtype=np.float64), (E, 1))).astype(dtype),
        "D_skip": np.ones(E, dtype=dtype),
        "out_proj": _uniform(rng, (E, D), 1 / math.sqrt(E), dtype),
    }
    return {k: Tensor(v, requires_grad=True) for k, v in p.items()}


def mamba2_block(x_in, p, dims, chunk=DEFAULT_CHUNK, gated_norm=True):
    """LayerNorm -> parallel projection (z, x, B, C, dt) -> causal conv + SiLU on x
    -> softplus step -> discretise -> chunked SSD per head -> SiLU(z) gate
    [-> gated RMS norm] -> output projection -> residual."""
    nb, L, D = x_in.shape
    E, S, H, P = dims.d_inner, dims.d_state, dims.nheads, dims.headdim
    if D != dims.d_model:
        raise ShapeMismatch(f"block expects width {dims.d_model}, got {D}")
    xn = ops.layer_norm(x_in, p["norm_gamma"], p["norm_beta"])
    proj = ops.linear(xn, p["in_proj"])
    z, xs, Bm, Cm, dt_raw = ops.split(proj, [E, E, S, S, H], axis=-1)
    xc = ops.silu(ops.depthwise_causal_conv1d(xs, p["conv_w"], p["conv_bias"]))
    dt = ops.softplus(ops.add(dt_raw, p["dt_bias"]))
    A = ops.mul(ops.exp(p["A_log"]), -1.0)
    log_a, b_bar = discretize_log(dt, A, Bm)
    y = ssd_chunked_log(log_a, b_bar, Cm, ops.reshape(xc, (nb, L, H, P)), p["D_skip"], chunk=chunk)
    y = ops.mul(ops.reshape(y, (nb, L, E)), ops.silu(z))
    if gated_norm:
        y = ops.rms_norm(y, p["gated_norm_gamma"])
    return ops.add(ops.linear(y, p["out_proj"]), x_in)


def selective_scan(u, delta, A, Bm, Cm, D):
    """Diagonal selective scan as a differentiable op (compiled kernel when built)."""
    dtype = u.dtype
    y = kernels.selective_scan_fwd(u.data, delta.data, A.data, Bm.data, Cm.data, D.data)

    def backward(g):
        grads = kernels.selective_scan_bwd(u.data, delta.data, A.data, Bm.data, Cm.data,
                                           D.data, g)
        return tuple(gr.astype(dtype, copy=False) for gr in grads)

    return Tensor._from_op(y.astype(dtype, copy=False), (u, delta, A, Bm, Cm, D), backward)


def mamba1_block(x_in, p, dims):
    """LayerNorm -> (x, z) projection -> causal conv + SiLU on x -> input-dependent
    (dt, B, C) -> per-channel diagonal scan -> SiLU(z) gate -> output projection
    -> residual."""
    nb, L, D = x_in.shape
    E, S, R = dims.d_inner, dims.d_state, dims.dt_rank
    if D != dims.d_model:
        raise ShapeMismatch(f"block expects width {dims.d_model}, got {D}")
    xn = ops.layer_norm(x_in, p["norm_gamma"], p["norm_beta"])
    xs, z = ops.split(ops.linear(xn, p["in_proj"]), [E, E], axis=-1)
    xc = ops.silu(ops.depthwise_causal_conv1d(xs, p["conv_w"], p["conv_bias"]))
    dt_raw, Bm, Cm = ops.split(ops.linear(xc, p["x_proj"]), [R, S, S], axis=-1)
    dt = ops.softplus(ops.linear(dt_raw, p["dt_proj_w"], p["dt_proj_b"]))
    A = ops.mul(ops.exp(p["A_log"]), -1.0)
    y = selective_scan(xc, dt, A, Bm, Cm, p["D_skip"])
    y = ops.mul(y, ops.silu(z))
    return ops.add(ops.linear(y, p["out_proj"]), x_in)
