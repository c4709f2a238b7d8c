"""Sequential scan kernels with a compiled core and a numpy fallback.

The compiled extension is used when it imports; setting
``BURSTMAMBA_PURE_PYTHON=1`` forces the fallback. ``BACKEND`` names the
active implementation and :func:`get_backend` returns either one
explicitly (the kernel benchmark compares both).
"""

import os

import numpy as np

from . import _fallback

try:
    from . import _scan as _compiled
except ImportError:  # extension not built
    _compiled = None

if _compiled is not None and os.environ.get("BURSTMAMBA_PURE_PYTHON", "") not in ("1", "true", "yes"):
    _active = _compiled
    BACKEND = "cython"
else:
    _active = _fallback
    BACKEND = "python"


def available_backends():
    return ["python"] + (["cython"] if _compiled is not None else [])


def get_backend(name=None):
    if name is None:
        return _active
    if name == "python":
        return _fallback
    if name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


def _c64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def selective_scan_fwd(u, delta, A, Bm, Cm, D, backend=None):
    k = get_backend(backend)
    return k.selective_scan_fwd(_c64(u), _c64(delta), _c64(A), _c64(Bm), _c64(Cm), _c64(D))


def selective_scan_bwd(u, delta, A, Bm, Cm, D, dy, backend=None):
    k = get_backend(backend)
    return k.selective_scan_bwd(_c64(u), _c64(delta), _c64(A), _c64(Bm), _c64(Cm),
                                _c64(D), _c64(dy))


def ssd_scan_fwd(a_bar, b_bar, c, x, d_skip, backend=None):
    k = get_backend(backend)
    return k.ssd_scan_fwd(_c64(a_bar), _c64(b_bar), _c64(c), _c64(x), _c64(d_skip))
