# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled E-step accumulation for the shared-covariance Gaussian mixture."""
import numpy as np

from libc.math cimport exp, log


def estep_sums(const double[:, ::1] X, const Py_ssize_t[::1] idx,
               const double[::1] log_w, const double[:, ::1] wmeans,
               const double[:, ::1] whiten):
    """Sum responsibilities, responsibility-weighted observations and log-normalizers.

    ``whiten`` is the inverse lower Cholesky factor of the covariance and
    ``wmeans`` the component means mapped through it. The log-normalizer
    omits the Gaussian constant and the log-determinant.
    """
    cdef Py_ssize_t g = wmeans.shape[0]
    cdef Py_ssize_t d = wmeans.shape[1]
    cdef Py_ssize_t m = idx.shape[0]
    cdef Py_ssize_t a, i, j, k, l
    cdef double acc, diff, top, total, r, lse_sum = 0.0

    r_sum_arr = np.zeros(g)
    ry_sum_arr = np.zeros((g, d))
    z_arr = np.empty(d)
    lp_arr = np.empty(g)
    cdef double[::1] r_sum = r_sum_arr
    cdef double[:, ::1] ry_sum = ry_sum_arr
    cdef double[::1] z = z_arr
    cdef double[::1] lp = lp_arr

    for a in range(m):
        i = idx[a]
        for k in range(d):
            acc = 0.0
            for l in range(k + 1):
                acc = acc + whiten[k, l] * X[i, l]
            z[k] = acc
        top = -1e300
        for j in range(g):
            acc = 0.0
            for k in range(d):
                diff = z[k] - wmeans[j, k]
                acc = acc + diff * diff
            lp[j] = log_w[j] - 0.5 * acc
            if lp[j] > top:
                top = lp[j]
        total = 0.0
        for j in range(g):
            lp[j] = exp(lp[j] - top)
            total = total + lp[j]
        lse_sum = lse_sum + top + log(total)
        for j in range(g):
            r = lp[j] / total
            r_sum[j] = r_sum[j] + r
            for k in range(d):
                ry_sum[j, k] = ry_sum[j, k] + r * X[i, k]
    return r_sum_arr, ry_sum_arr, lse_sum
