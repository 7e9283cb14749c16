"""Backend dispatch for the hot kernels.

The compiled extension (orthoview._core, Cython) is used when importable;
otherwise the pure-numpy fallback takes over.  Setting ORTHOVIEW_NO_EXT=1
forces the fallback.  Both backends are bit-identical; see
``python -m orthoview.bench`` for the speed comparison.
"""

import os

import numpy as np

from . import _core_py

try:
    from . import _core as _core_c
except ImportError:  # running from source without build_ext
    _core_c = None

_BACKENDS = {"python": _core_py}
if _core_c is not None:
    _BACKENDS["cython"] = _core_c

if _core_c is None or os.environ.get("ORTHOVIEW_NO_EXT", "") not in ("", "0"):
    _active_name = "python"
else:
    _active_name = "cython"


def backend_name() -> str:
    return _active_name


def available_backends() -> tuple:
    return tuple(sorted(_BACKENDS))


def set_backend(name: str) -> None:
    global _active_name
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available; have {available_backends()}")
    _active_name = name


def _c64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _ci64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def depth_min(pix, z, size):
    return _BACKENDS[_active_name].depth_min(_ci64(pix), _c64(z), size)


def depth_harmonic(pix, z, size):
    return _BACKENDS[_active_name].depth_harmonic(_ci64(pix), _c64(z), size)


def im2col(x, kh, kw, sh, sw, ph, pw):
    return _BACKENDS[_active_name].im2col(_c64(x), kh, kw, sh, sw, ph, pw)


def col2im(cols, B, H, W, C, kh, kw, sh, sw, ph, pw):
    return _BACKENDS[_active_name].col2im(_c64(cols), B, H, W, C, kh, kw, sh, sw, ph, pw)


def maxpool_fwd(x, k, s, p):
    return _BACKENDS[_active_name].maxpool_fwd(_c64(x), k, s, p)


def maxpool_bwd(dy, arg, H, W):
    return _BACKENDS[_active_name].maxpool_bwd(_c64(dy), _ci64(arg), H, W)


def adam_step(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2, weight_decay):
    """In-place; p/m/v must be flat contiguous float64 views."""
    _BACKENDS[_active_name].adam_step(
        p, _c64(g), m, v, lr, beta1, beta2, eps, bc1, bc2, weight_decay
    )
