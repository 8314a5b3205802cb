"""Kernel backend selection.

The compiled extension ``aeg._kernels`` is used when it was built; otherwise
(or when ``AEG_PURE_PYTHON=1``) the numpy versions in ``aeg._kernels_py``
are used.  ``BACKEND`` names the active one.
"""
import os

import numpy as np

from . import _kernels_py

if os.environ.get("AEG_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def _resolve(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _kernels_py
    if backend != "cython":
        raise ValueError(f"unknown backend {backend!r}")
    from . import _kernels
    return _kernels


def set_backend(backend):
    """Switch the process-wide default backend; returns the previous name."""
    global _impl, BACKEND
    impl = _resolve(backend)
    prev, _impl, BACKEND = BACKEND, impl, backend
    return prev


def grid_search(X, labels, W, exponents, include_bias, offsets, backend=None):
    impl = _resolve(backend)
    return impl.grid_search(
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(labels, dtype=np.int64),
        np.ascontiguousarray(W, dtype=np.float64),
        np.ascontiguousarray(exponents, dtype=np.int64),
        bool(include_bias),
        np.ascontiguousarray(offsets, dtype=np.float64),
    )
