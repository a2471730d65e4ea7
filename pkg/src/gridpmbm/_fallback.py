"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def stencil_predict(src, offsets, values, out):
    """Scatter ``src`` through the stencil into ``out`` in place.

    out[i + d0, j + d1] += values[k] * src[i, j]; off-grid mass is dropped.
    """
    n0, n1 = src.shape
    if out.shape != src.shape:
        raise ValueError("out must have the same shape as src")
    for (d0, d1), v in zip(np.asarray(offsets), np.asarray(values)):
        d0 = int(d0)
        d1 = int(d1)
        if abs(d0) >= n0 or abs(d1) >= n1:
            continue
        out[max(d0, 0):n0 + min(d0, 0), max(d1, 0):n1 + min(d1, 0)] += (
            v * src[max(-d0, 0):n0 - max(d0, 0), max(-d1, 0):n1 - max(d1, 0)]
        )
