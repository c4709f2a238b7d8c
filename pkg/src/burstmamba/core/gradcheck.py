"""Central finite-difference gradient checking."""

import numpy as np


def rel_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(1e-12, np.abs(a) + np.abs(n))


def _richardson(d, order):
    """Combine central differences at steps h, h/2, h/4, ... (``d[j]`` uses
    h / 2**j) into an estimate with truncation error O(h**order)."""
    d = list(d)
    k = 1
    while len(d) > 1:
        f = 4.0 ** k
        d = [(f * d[j + 1] - d[j]) / (f - 1.0) for j in range(len(d) - 1)]
        k += 1
    return d[0]


def numeric_grad(f, param, h=1e-5, coords=None, order=2):
    """Central differences of scalar ``f()`` w.r.t. the entries of ``param.data``.

    ``order=2`` is the plain ``(f(x+h) - f(x-h)) / 2h``. ``order`` 4 or 6
    Richardson-extrapolates central differences at h, h/2 (, h/4); this
    allows a larger h and so far less rounding noise, which matters for
    coordinates whose true gradient is tiny. ``coords`` optionally restricts
    the flat indices probed; unprobed entries are returned as NaN.
    """
    if order not in (2, 4, 6):
        raise ValueError(f"order must be 2, 4 or 6, got {order}")
    levels = order // 2
    flat = param.data.reshape(-1)
    out = np.full(flat.shape, np.nan)
    idx = range(flat.size) if coords is None else coords
    for i in idx:
        orig = flat[i]
        ds = []
        for j in range(levels):
            hj = h / 2 ** j
            flat[i] = orig + hj
            fp = float(f())
            flat[i] = orig - hj
            fm = float(f())
            flat[i] = orig
            ds.append((fp - fm) / (2.0 * hj))
        out[i] = _richardson(ds, order)
    return out.reshape(param.shape)


def grad_check(f, params, h=1e-5, max_coords=None, seed=0, return_detail=False, order=2):
    """Worst relative error between analytic and central-difference gradients.

    ``f`` builds the graph and returns a scalar Tensor. ``params`` is a list of
    leaf Tensors (or a name -> Tensor mapping). Parameters must be 64-bit.
    With ``max_coords`` only that many randomly chosen entries per parameter
    are probed. ``order`` selects the difference stencil (see
    :func:`numeric_grad`).
    """
    named = params.items() if isinstance(params, dict) else enumerate(params)
    named = list(named)
    for _, p in named:
        if p.data.dtype != np.float64:
            raise TypeError("grad_check needs 64-bit parameters")
        p.requires_grad = True
        p.grad = None
    loss = f()
    loss.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in named}

    def scalar():
        return f().data

    rng = np.random.default_rng(seed)
    worst = 0.0
    detail = {}
    for k, p in named:
        coords = None
        if max_coords is not None and p.size > max_coords:
            coords = rng.choice(p.size, size=max_coords, replace=False)
        num = numeric_grad(scalar, p, h=h, coords=coords, order=order)
        mask = ~np.isnan(num)
        err = rel_error(analytic[k][mask], num[mask])
        e = float(err.max()) if err.size else 0.0
        detail[k] = e
        worst = max(worst, e)
    if return_detail:
        return worst, detail
    return worst
