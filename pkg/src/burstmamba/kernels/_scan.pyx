# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled sequential scans.

All kernels take C-contiguous float64 arrays and loop over one
(batch, channel) lane at a time, so accumulation order is fixed.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from libc.stdlib cimport malloc, free

cnp.import_array()


def selective_scan_fwd(double[:, :, ::1] u, double[:, :, ::1] delta,
                       double[:, ::1] A, double[:, :, ::1] Bm,
                       double[:, :, ::1] Cm, double[::1] D):
    """Diagonal selective scan.

    h_t[s] = exp(delta_t * A[e, s]) * h_{t-1}[s] + delta_t * B_t[s] * u_t
    y_t    = sum_s C_t[s] * h_t[s] + D[e] * u_t
    """
    cdef Py_ssize_t nb = u.shape[0], L = u.shape[1], E = u.shape[2], S = A.shape[1]
    cdef Py_ssize_t b, t, e, s
    cdef double dt, ut, acc
    y_arr = np.empty((nb, L, E), dtype=np.float64)
    cdef double[:, :, ::1] y = y_arr
    cdef double *h = <double *> malloc(S * sizeof(double))
    if h == NULL:
        raise MemoryError()
    try:
        with nogil:
            for b in range(nb):
                for e in range(E):
                    for s in range(S):
                        h[s] = 0.0
                    for t in range(L):
                        dt = delta[b, t, e]
                        ut = u[b, t, e]
                        acc = 0.0
                        for s in range(S):
                            h[s] = exp(dt * A[e, s]) * h[s] + dt * Bm[b, t, s] * ut
                            acc = acc + Cm[b, t, s] * h[s]
                        y[b, t, e] = acc + D[e] * ut
    finally:
        free(h)
    return y_arr


def selective_scan_bwd(double[:, :, ::1] u, double[:, :, ::1] delta,
                       double[:, ::1] A, double[:, :, ::1] Bm,
                       double[:, :, ::1] Cm, double[::1] D,
                       double[:, :, ::1] dy):
    """Gradients of ``selective_scan_fwd``; states are recomputed per lane."""
    cdef Py_ssize_t nb = u.shape[0], L = u.shape[1], E = u.shape[2], S = A.shape[1]
    cdef Py_ssize_t b, t, e, s
    cdef double dt, ut, g, a, hprev, dd, dut, gh
    du_arr = np.zeros((nb, L, E), dtype=np.float64)
    ddelta_arr = np.zeros((nb, L, E), dtype=np.float64)
    dA_arr = np.zeros((E, S), dtype=np.float64)
    dB_arr = np.zeros((nb, L, S), dtype=np.float64)
    dC_arr = np.zeros((nb, L, S), dtype=np.float64)
    dD_arr = np.zeros(E, dtype=np.float64)
    cdef double[:, :, ::1] du = du_arr
    cdef double[:, :, ::1] ddelta = ddelta_arr
    cdef double[:, ::1] dA = dA_arr
    cdef double[:, :, ::1] dB = dB_arr
    cdef double[:, :, ::1] dC = dC_arr
    cdef double[::1] dD = dD_arr
    cdef double *hist = <double *> malloc((L + 1) * S * sizeof(double))
    cdef double *dh = <double *> malloc(S * sizeof(double))
    if hist == NULL or dh == NULL:
        free(hist)
        free(dh)
        raise MemoryError()
    try:
        with nogil:
            for b in range(nb):
                for e in range(E):
                    # hist[(t + 1) * S + s] holds h_t; hist[0:S] is the zero state
                    for s in range(S):
                        hist[s] = 0.0
                        dh[s] = 0.0
                    for t in range(L):
                        dt = delta[b, t, e]
                        ut = u[b, t, e]
                        for s in range(S):
                            hist[(t + 1) * S + s] = (exp(dt * A[e, s]) * hist[t * S + s]
                                                     + dt * Bm[b, t, s] * ut)
                    for t in range(L - 1, -1, -1):
                        g = dy[b, t, e]
                        dt = delta[b, t, e]
                        ut = u[b, t, e]
                        dD[e] += g * ut
                        dut = g * D[e]
                        dd = 0.0
                        for s in range(S):
                            dh[s] += g * Cm[b, t, s]
                            dC[b, t, s] += g * hist[(t + 1) * S + s]
                            gh = dh[s]
                            a = exp(dt * A[e, s])
                            hprev = hist[t * S + s]
                            dd += gh * (hprev * a * A[e, s] + Bm[b, t, s] * ut)
                            dA[e, s] += gh * hprev * a * dt
                            dB[b, t, s] += gh * dt * ut
                            dut += gh * dt * Bm[b, t, s]
                            dh[s] = gh * a
                        du[b, t, e] = dut
                        ddelta[b, t, e] = dd
    finally:
        free(hist)
        free(dh)
    return du_arr, ddelta_arr, dA_arr, dB_arr, dC_arr, dD_arr


def ssd_scan_fwd(double[:, :, ::1] a_bar, double[:, :, :, ::1] b_bar,
                 double[:, :, ::1] c, double[:, :, :, ::1] x, double[::1] d_skip):
    """Scalar-decay recurrence per head.

    S_t = a_t * S_{t-1} + outer(bbar_t, x_t);  y_t = c_t . S_t + d * x_t
    """
    cdef Py_ssize_t nb = x.shape[0], L = x.shape[1], H = x.shape[2], P = x.shape[3]
    cdef Py_ssize_t S = c.shape[2]
    cdef Py_ssize_t b, t, h, s, p
    cdef double a, bs, cs
    y_arr = np.empty((nb, L, H, P), dtype=np.float64)
    cdef double[:, :, :, ::1] y = y_arr
    cdef double *st = <double *> malloc(S * P * sizeof(double))
    if st == NULL:
        raise MemoryError()
    try:
        with nogil:
            for b in range(nb):
                for h in range(H):
                    for s in range(S * P):
                        st[s] = 0.0
                    for t in range(L):
                        a = a_bar[b, t, h]
                        for p in range(P):
                            y[b, t, h, p] = d_skip[h] * x[b, t, h, p]
                        for s in range(S):
                            bs = b_bar[b, t, h, s]
                            cs = c[b, t, s]
                            for p in range(P):
                                st[s * P + p] = a * st[s * P + p] + bs * x[b, t, h, p]
                                y[b, t, h, p] += cs * st[s * P + p]
    finally:
        free(st)
    return y_arr
