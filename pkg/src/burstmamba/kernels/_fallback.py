"""Pure numpy versions of the compiled scans (same signatures and results).

Loops run over time only; every step is vectorised across batch, channel
and state. The backward scan keeps a state checkpoint every ``CHECKPOINT``
steps and recomputes each segment, so memory is O(B * E * S * CHECKPOINT).
"""

import numpy as np

CHECKPOINT = 64


def selective_scan_fwd(u, delta, A, Bm, Cm, D):
    nb, L, E = u.shape
    S = A.shape[1]
    h = np.zeros((nb, E, S))
    y = np.empty((nb, L, E))
    for t in range(L):
        dt = delta[:, t, :, None]
        h = np.exp(dt * A) * h + dt * Bm[:, t, None, :] * u[:, t, :, None]
        y[:, t] = (h * Cm[:, t, None, :]).sum(axis=-1) + D * u[:, t]
    return y


def _advance(h, t, u, delta, A, Bm):
    dt = delta[:, t, :, None]
    return np.exp(dt * A) * h + dt * Bm[:, t, None, :] * u[:, t, :, None]


def selective_scan_bwd(u, delta, A, Bm, Cm, D, dy):
    nb, L, E = u.shape
    S = A.shape[1]
    starts = list(range(0, L, CHECKPOINT))
    checkpoints = []
    h = np.zeros((nb, E, S))
    for t in range(L):
        if t % CHECKPOINT == 0:
            checkpoints.append(h)
        h = _advance(h, t, u, delta, A, Bm)

    du = np.zeros_like(u)
    ddelta = np.zeros_like(delta)
    dA = np.zeros_like(A)
    dB = np.zeros_like(Bm)
    dC = np.zeros_like(Cm)
    dD = np.zeros_like(D)
    dh = np.zeros((nb, E, S))
    for seg in range(len(starts) - 1, -1, -1):
        t0 = starts[seg]
        t1 = min(t0 + CHECKPOINT, L)
        hist = [checkpoints[seg]]
        for t in range(t0, t1):
            hist.append(_advance(hist[-1], t, u, delta, A, Bm))
        for t in range(t1 - 1, t0 - 1, -1):
            g = dy[:, t]                      # [B, E]
            ut = u[:, t]
            dt = delta[:, t]
            h_t, h_prev = hist[t - t0 + 1], hist[t - t0]
            dD += (g * ut).sum(axis=0)
            dh = dh + g[:, :, None] * Cm[:, t, None, :]
            dC[:, t] = np.einsum("be,bes->bs", g, h_t)
            a = np.exp(dt[:, :, None] * A)
            ddelta[:, t] = ((dh * h_prev * a * A).sum(axis=-1)
                            + (dh * Bm[:, t, None, :]).sum(axis=-1) * ut)
            dA += (dh * h_prev * a * dt[:, :, None]).sum(axis=0)
            dB[:, t] = np.einsum("bes,be->bs", dh, dt * ut)
            du[:, t] = g * D + (dh * Bm[:, t, None, :]).sum(axis=-1) * dt
            dh = dh * a
    return du, ddelta, dA, dB, dC, dD


def ssd_scan_fwd(a_bar, b_bar, c, x, d_skip):
    nb, L, H, P = x.shape
    S = c.shape[2]
    st = np.zeros((nb, H, S, P))
    y = np.empty_like(x)
    for t in range(L):
        st = (a_bar[:, t, :, None, None] * st
              + b_bar[:, t, :, :, None] * x[:, t, :, None, :])
        y[:, t] = np.einsum("bs,bhsp->bhp", c[:, t], st) + d_skip[:, None] * x[:, t]
    return y
