# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-slot recursion of the shared TDM amplifier."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def run_visits(const double[::1] v_eff, const signed char[::1] chop, double gain,
               double d_active, double d_reset, double limit,
               double b0, double b1, double a1, int n_channels):
    cdef Py_ssize_t n = v_eff.shape[0]
    cdef Py_ssize_t j
    cdef int k
    cdef double m = 0.0
    cdef double u, y, z
    cdef double carry = d_reset * d_active
    cdef double keep = 1.0 - d_active
    out_arr = np.empty(n, dtype=np.float64)
    clamp_arr = np.zeros(n, dtype=np.uint8)
    cdef double[::1] out = out_arr
    cdef unsigned char[::1] clamped = clamp_arr
    cdef double[::1] z_prev = np.zeros(n_channels, dtype=np.float64)
    cdef double[::1] lp = np.zeros(n_channels, dtype=np.float64)
    for j in range(n):
        k = j % n_channels
        u = chop[j] * gain * v_eff[j]
        y = u * keep + m * carry
        if y > limit:
            y = limit
            clamped[j] = 1
        elif y < -limit:
            y = -limit
            clamped[j] = 1
        m = y
        z = chop[j] * y
        lp[k] = b0 * z + b1 * z_prev[k] - a1 * lp[k]
        z_prev[k] = z
        out[j] = lp[k]
    return out_arr, clamp_arr
