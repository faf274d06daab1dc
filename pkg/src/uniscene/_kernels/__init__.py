"""Hot numeric kernels with a compiled core and a pure-NumPy fallback.

The Cython extension (``_speedups``) is used when it is importable; set
``UNISCENE_BACKEND=numpy`` to force the fallback, ``=cython`` to require the
extension.  ``benchmarks/benchmark_kernels.py`` compares the two.
"""

from __future__ import annotations

import os

from . import numpy_backend

_BACKENDS = {"numpy": numpy_backend}
try:
    from . import _speedups  # compiled extension, optional
    _BACKENDS["cython"] = _speedups
except ImportError:
    _speedups = None

_requested = os.environ.get("UNISCENE_BACKEND", "auto")
if _requested == "auto":
    _active = _BACKENDS.get("cython", numpy_backend)
elif _requested in _BACKENDS:
    _active = _BACKENDS[_requested]
else:
    raise ImportError(
        f"UNISCENE_BACKEND={_requested!r} unavailable "
        f"(have: {', '.join(sorted(_BACKENDS))})")


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def get_backend() -> str:
    return _active.NAME


def set_backend(name: str) -> None:
    """Switch kernels at runtime (used by tests and benchmarks)."""
    global _active
    if name not in _BACKENDS:
        raise ImportError(f"backend {name!r} unavailable")
    _active = _BACKENDS[name]


def conv2d_forward(x, w):
    return _active.conv2d_forward(x, w)


def conv2d_grad_input(w, gy):
    return _active.conv2d_grad_input(w, gy)


def conv2d_grad_weight(x, gy, kh, kw):
    return _active.conv2d_grad_weight(x, gy, kh, kw)


def conv3d_forward(x, w):
    return _active.conv3d_forward(x, w)


def conv3d_grad_input(w, gy):
    return _active.conv3d_grad_input(w, gy)


def conv3d_grad_weight(x, gy, kd, kh, kw):
    return _active.conv3d_grad_weight(x, gy, kd, kh, kw)


def splat_forward(feat, wgt, cell, n_cells):
    return _active.splat_forward(feat, wgt, cell, n_cells)


def splat_grad_feat(wgt, cell, gout):
    return _active.splat_grad_feat(wgt, cell, gout)


def splat_grad_weight(feat, cell, gout):
    return _active.splat_grad_weight(feat, cell, gout)
