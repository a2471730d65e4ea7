# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stencil kernels for the grid intensity."""


def stencil_predict(const double[:, ::1] src,
                    const long long[:, ::1] offsets,
                    const double[::1] values,
                    double[:, ::1] out):
    """Scatter ``src`` through the stencil into ``out`` in place.

    out[i + d0, j + d1] += values[k] * src[i, j] for every offset k = (d0, d1);
    contributions landing outside the grid are dropped.
    """
    cdef Py_ssize_t n0 = src.shape[0]
    cdef Py_ssize_t n1 = src.shape[1]
    cdef Py_ssize_t nk = values.shape[0]
    cdef Py_ssize_t k, i, j, d0, d1, lo0, hi0, lo1, hi1
    cdef double v
    if out.shape[0] != n0 or out.shape[1] != n1:
        raise ValueError("out must have the same shape as src")
    if offsets.shape[0] != nk or offsets.shape[1] != 2:
        raise ValueError("offsets must be (K, 2) matching values")
    with nogil:
        for k in range(nk):
            d0 = <Py_ssize_t>offsets[k, 0]
            d1 = <Py_ssize_t>offsets[k, 1]
            v = values[k]
            lo0 = -d0 if d0 < 0 else 0
            hi0 = n0 - d0 if d0 > 0 else n0
            lo1 = -d1 if d1 < 0 else 0
            hi1 = n1 - d1 if d1 > 0 else n1
            for i in range(lo0, hi0):
                for j in range(lo1, hi1):
                    out[i + d0, j + d1] += v * src[i, j]
