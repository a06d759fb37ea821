# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled banded shift-model sub-step.

Must stay bitwise identical to ``_kernels_np.shift_substep``: same
floating-point operations in the same per-element order.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def shift_substep(
    const double[:, :] y,
    const double[::1] rfac,
    const double[::1] g,
    const double[:, :] dw,
    Py_ssize_t kcap,
    bint milstein,
    double[:, ::1] out,
):
    """See ``_kernels_np.shift_substep`` for the contract."""
    cdef Py_ssize_t n_samples = y.shape[0]
    cdef Py_ssize_t n_modes = y.shape[1]
    cdef Py_ssize_t kc = kcap
    if kc > n_modes:
        kc = n_modes
    if kc > dw.shape[1]:
        kc = dw.shape[1]
    cdef Py_ssize_t b, n
    cdef double t, ym1, ym2
    with nogil:
        for b in range(n_samples):
            for n in range(kc):
                ym1 = y[b, n - 1] if n > 0 else 0.0
                t = y[b, n] + (ym1 + g[n]) * dw[b, n]
                if milstein and n >= 1:
                    ym2 = y[b, n - 2] if n > 1 else 0.0
                    t = t + (0.5 * (ym2 + g[n - 1]) * dw[b, n]) * dw[b, n - 1]
                out[b, n] = rfac[n] * t
            for n in range(kc, n_modes):
                out[b, n] = rfac[n] * y[b, n]
