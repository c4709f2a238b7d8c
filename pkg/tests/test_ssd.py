import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from burstmamba import kernels
from burstmamba.core import Tensor, grad_check, ops
from burstmamba.errors import ShapeMismatch
from burstmamba.ssm import (BlockDims, discretize, init_mamba1_block, init_mamba2_block,
                            mamba1_block, mamba2_block, ssd_chunked, ssd_naive)
from helpers import condition, ssd_inputs

SEEDS = settings(max_examples=20, deadline=None, derandomize=True)


def matrix_form(a, bb, c, x, d):
    """Independent oracle: Y = M X + d X with the explicit lower-triangular
    M[i, j] = (C_i . B_j) * prod_{k=j+1..i} a_k per (batch, head)."""
    nb, L, H, P = x.shape
    y = np.zeros_like(x)
    for b in range(nb):
        for h in range(H):
            M = np.zeros((L, L))
            for i in range(L):
                for j in range(i + 1):
                    M[i, j] = float(c[b, i] @ bb[b, j, h]) * math.prod(a[b, j + 1:i + 1, h])
            y[b, :, h] = M @ x[b, :, h] + d[h] * x[b, :, h]
    return y


# -- discretize -----------------------------------------------------------------

def test_discretize_zero_step():
    a, b = discretize(np.zeros((1, 3, 2)), np.array([-1.0, -2.0]), np.ones((1, 3, 4)))
    assert np.array_equal(a.data, np.ones((1, 3, 2)))
    assert np.array_equal(b.data, np.zeros((1, 3, 2, 4)))


def test_discretize_half_decay():
    a, _ = discretize(np.full((1, 1, 1), math.log(2.0)), np.array([-1.0]), np.ones((1, 1, 1)))
    assert a.data[0, 0, 0] == pytest.approx(0.5, abs=1e-15)


def test_discretize_matches_scalar_loop():
    rng = np.random.default_rng(0)
    delta, A, B = rng.uniform(0.01, 1, (2, 8, 4)), -rng.uniform(1, 16, 4), rng.normal(size=(2, 8, 16))
    a, bb = discretize(delta, A, B)
    for b in range(2):
        for l in range(8):
            for h in range(4):
                assert a.data[b, l, h] == pytest.approx(math.exp(delta[b, l, h] * A[h]), rel=1e-15)
                for s in range(16):
                    assert bb.data[b, l, h, s] == delta[b, l, h] * B[b, l, s]


# -- naive recurrence -------------------------------------------------------------

def test_naive_single_step_closed_form():
    rng = np.random.default_rng(1)
    a, bb, c, x, d = ssd_inputs(rng, L=1)
    want = np.einsum("s,hs,hp->hp", c[0, 0], bb[0, 0], x[0, 0]) + d[:, None] * x[0, 0]
    assert np.allclose(ssd_naive(a, bb, c, x, d)[0, 0], want, rtol=0, atol=1e-14)


def test_naive_zero_decay_is_memoryless():
    rng = np.random.default_rng(2)
    a, bb, c, x, d = ssd_inputs(rng, zero_decay=True)
    y = ssd_naive(a, bb, c, x, d)
    want = np.einsum("bls,blhs,blhp->blhp", c, bb, x) + d[:, None] * x
    assert np.allclose(y, want, rtol=0, atol=1e-13)


def test_naive_matches_matrix_form():
    rng = np.random.default_rng(3)
    args = ssd_inputs(rng, nb=1, L=32, H=2, P=8, S=16)
    assert np.max(np.abs(ssd_naive(*args) - matrix_form(*args))) < 1e-12


@pytest.mark.parametrize("backend", kernels.available_backends())
def test_naive_backends_agree_with_matrix_form(backend):
    rng = np.random.default_rng(4)
    args = ssd_inputs(rng, nb=2, L=12, H=3, P=4, S=5)
    assert np.max(np.abs(ssd_naive(*args, backend=backend) - matrix_form(*args))) < 1e-12


def test_shape_checks():
    rng = np.random.default_rng(5)
    a, bb, c, x, d = ssd_inputs(rng, L=4)
    with pytest.raises(ShapeMismatch):
        ssd_naive(a[:, :3], bb, c, x, d)
    with pytest.raises(ShapeMismatch):
        ssd_chunked(a, bb, c, x, d[:1])
    with pytest.raises(ShapeMismatch):
        ssd_chunked(a, bb, c, x, d, chunk=0)


# -- chunked evaluation -------------------------------------------------------------

def test_chunk_equal_to_length():
    rng = np.random.default_rng(6)
    args = ssd_inputs(rng, nb=2, L=40, H=2, P=4, S=8)
    assert np.max(np.abs(ssd_chunked(*args, chunk=40).data - ssd_naive(*args))) < 1e-10


def test_chunk_one_degenerates_to_recurrence():
    rng = np.random.default_rng(7)
    args = ssd_inputs(rng, nb=2, L=40, H=2, P=4, S=8)
    assert np.max(np.abs(ssd_chunked(*args, chunk=1).data - ssd_naive(*args))) < 1e-12


def test_full_burst_length_with_remainder_chunk():
    rng = np.random.default_rng(8)
    args = ssd_inputs(rng, nb=1, L=1601, H=2, P=8, S=16)
    assert np.max(np.abs(ssd_chunked(*args, chunk=64).data - ssd_naive(*args))) < 1e-10


def test_chunked_zero_decay():
    rng = np.random.default_rng(9)
    args = ssd_inputs(rng, L=20, zero_decay=True)
    assert np.max(np.abs(ssd_chunked(*args, chunk=7).data - ssd_naive(*args))) < 1e-12


@SEEDS
@given(seed=st.integers(0, 2**32 - 1), chunk=st.sampled_from([1, 7, 64, None]),
       nb=st.integers(1, 2), L=st.integers(1, 130), H=st.integers(1, 4),
       P=st.integers(1, 8), S=st.integers(1, 16))
def test_chunked_equals_naive_property(seed, chunk, nb, L, H, P, S):
    rng = np.random.default_rng(seed)
    args = ssd_inputs(rng, nb, L, H, P, S)
    y = ssd_chunked(*args, chunk=L if chunk is None else chunk).data
    assert np.max(np.abs(y - ssd_naive(*args))) < 1e-10


@pytest.mark.parametrize("chunk", [1, 3, 16])
def test_chunked_gradients(chunk):
    rng = np.random.default_rng(10)
    a, bb, c, x, d = ssd_inputs(rng, nb=2, L=11, H=2, P=3, S=4)
    leaves = [Tensor(v, requires_grad=True) for v in (np.exp(-rng.uniform(0.05, 1.0, a.shape)), bb, c, x, d)]
    w = rng.normal(size=x.shape)
    f = lambda: ops.sum(ops.mul(ssd_chunked(*leaves, chunk=chunk), w))
    assert grad_check(f, leaves, h=1e-2, order=6) < 1e-6


# -- stability ------------------------------------------------------------------

def test_negative_A_gives_contracting_decay():
    rng = np.random.default_rng(11)
    a, _ = discretize(rng.uniform(1e-4, 5.0, (2, 64, 4)), -np.exp(rng.normal(size=4)), np.ones((2, 64, 1)))
    assert np.all((a.data > 0) & (a.data < 1))


def test_states_stay_bounded_over_long_sequence():
    rng = np.random.default_rng(12)
    L, H, P, S = 4096, 2, 2, 3
    delta = rng.uniform(1e-3, 0.1, (1, L, H))
    a, bb = discretize(delta, -rng.uniform(1, 16, H), rng.uniform(-1, 1, (1, L, S)))
    x_bounded = rng.uniform(-1, 1, (1, L, H, P))
    x_walk = np.cumsum(rng.normal(size=(1, L, H, P)), axis=1)
    amax = float(a.data.max())
    bound = float(np.abs(bb.data).max()) / (1.0 - amax)
    for s in range(S):
        # c = e_s and d = 0 read row s of the state straight out of y
        c = np.zeros((1, L, S))
        c[..., s] = 1.0
        state = ssd_naive(a.data, bb.data, c, x_bounded, np.zeros(H))
        assert np.all(np.isfinite(state)) and np.abs(state).max() <= bound * (1 + 1e-12)
        assert np.all(np.isfinite(ssd_naive(a.data, bb.data, c, x_walk, np.zeros(H))))


# -- blocks -------------------------------------------------------------------

TINY2 = BlockDims(d_model=8, d_state=4, headdim=8)
TINY1 = BlockDims(d_model=8, d_state=4)


def block(kind, seed=0, conditioned=True):
    rng = np.random.default_rng(seed)
    if kind == "mamba2":
        p = init_mamba2_block(TINY2, rng)
        fn = lambda x, q=p: mamba2_block(x, q, TINY2, chunk=3)
    else:
        p = init_mamba1_block(TINY1, rng)
        fn = lambda x, q=p: mamba1_block(x, q, TINY1)
    return (condition(p, seed) if conditioned else p), fn


def test_mamba2_default_dims():
    dims = BlockDims(d_model=256, d_state=16, headdim=64)
    p = init_mamba2_block(dims, np.random.default_rng(0))
    assert dims.d_inner == 512 and dims.nheads == 8
    assert p["in_proj"].shape == (256, 1064)
    assert p["A_log"].shape == (8,) and p["gated_norm_gamma"].shape == (512,)


def test_mamba1_default_dims():
    dims = BlockDims(d_model=256, d_state=16)
    p = init_mamba1_block(dims, np.random.default_rng(0))
    assert dims.d_inner == 512 and dims.dt_rank == 16
    assert p["A_log"].shape == (512, 16)
    assert p["x_proj"].shape == (512, 16 + 32) and p["dt_proj_w"].shape == (16, 512)


@pytest.mark.parametrize("kind", ["mamba2", "mamba1"])
def test_initial_A_strictly_negative(kind):
    p, _ = block(kind, conditioned=False)
    assert np.all(-np.exp(p["A_log"].data) < 0)


@pytest.mark.parametrize("kind", ["mamba2", "mamba1"])
def test_zero_out_proj_is_identity(kind):
    p, fn = block(kind)
    p["out_proj"].data[:] = 0.0
    x = np.random.default_rng(1).normal(size=(2, 9, 8))
    assert np.array_equal(fn(Tensor(x)).data, x)


@pytest.mark.parametrize("kind", ["mamba2", "mamba1"])
def test_block_is_causal(kind):
    _, fn = block(kind)
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 12, 8))
    base = fn(Tensor(x)).data
    for t in (0, 4, 7, 11):
        x2 = x.copy()
        x2[0, t] += rng.normal(size=8)
        out = fn(Tensor(x2)).data
        assert np.array_equal(out[0, :t], base[0, :t])
        assert not np.allclose(out[0, t], base[0, t])


@pytest.mark.parametrize("kind", ["mamba2", "mamba1"])
def test_huge_decay_leaves_only_the_conv_window(kind):
    # A_log large -> A_bar = exp(-dt * e^A_log) underflows to 0: no state carry,
    # so position t only reaches outputs t .. t + d_conv - 1 through the conv
    p, fn = block(kind)
    p["A_log"].data[:] = 50.0
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 14, 8))
    base = fn(Tensor(x)).data
    t, K = 3, TINY1.d_conv
    x2 = x.copy()
    x2[0, t] += 1.0
    out = fn(Tensor(x2)).data
    assert np.array_equal(out[0, t + K:], base[0, t + K:])
    assert not np.allclose(out[0, t], base[0, t])


@pytest.mark.parametrize("kind", ["mamba2", "mamba1"])
def test_block_gradients_every_parameter(kind):
    p, fn = block(kind, seed=4)
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(size=(2, 8, 8)), requires_grad=True)
    w = rng.normal(size=(2, 8, 8))
    f = lambda: ops.sum(ops.mul(fn(x), w))
    err = grad_check(f, {**p, "x_in": x}, h=1e-2, order=6)
    assert err < 1e-6


def test_gated_norm_flag_changes_output():
    p, _ = block("mamba2")
    x = Tensor(np.random.default_rng(6).normal(size=(1, 5, 8)))
    on = mamba2_block(x, p, TINY2, gated_norm=True).data
    off = mamba2_block(x, p, TINY2, gated_norm=False).data
    assert not np.allclose(on, off)


def test_block_rejects_wrong_width():
    p, _ = block("mamba2")
    with pytest.raises(ShapeMismatch):
        mamba2_block(Tensor(np.ones((1, 4, 6))), p, TINY2)
