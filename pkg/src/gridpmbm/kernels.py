"""Backend selection for the hot grid kernels.

The Cython extension is used when it was built; otherwise, or when
``GRIDPMBM_PURE_PYTHON=1`` is set, the numpy implementation is used.
"""

import os

import numpy as np

from . import _fallback

_compiled = None
if os.environ.get("GRIDPMBM_PURE_PYTHON", "") != "1":
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "numpy"


def available_backends() -> list[str]:
    return ["cython", "numpy"] if _compiled is not None else ["numpy"]


def _impl(backend):
    backend = backend or BACKEND
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        return _compiled
    if backend == "numpy":
        return _fallback
    raise ValueError(f"unknown backend {backend!r}")


def stencil_predict(src, offsets, values, out=None, backend=None):
    """Return ``out`` after adding the stencil scatter of ``src`` into it."""
    src = np.ascontiguousarray(src, dtype=np.float64)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64).reshape(-1, 2)
    values = np.ascontiguousarray(values, dtype=np.float64)
    if out is None:
        out = np.zeros_like(src)
    _impl(backend).stencil_predict(src, offsets, values, out)
    return out
