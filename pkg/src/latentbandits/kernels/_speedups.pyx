# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-step hot kernels; twin of ``pyref``.

Plain O(d^2) loops beat numpy call overhead for the matrix sizes this
package runs at (d_A <= a few hundred).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

BACKEND = "compiled"


def rank_one_update(double[:, ::1] a, double[::1] x):
    """a += x xᵀ for symmetric a, in place."""
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t i, j
    cdef double xi
    for i in range(n):
        xi = x[i]
        for j in range(n):
            a[i, j] += xi * x[j]


def sherman_morrison_update(double[:, ::1] a_inv, double[::1] x):
    """Update a_inv in place to track a += x xᵀ."""
    cdef Py_ssize_t n = a_inv.shape[0]
    cdef cnp.ndarray[double, ndim=1] u_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] u = u_arr
    cdef Py_ssize_t i, j
    cdef double denom = 1.0, s, scale
    for i in range(n):
        s = 0.0
        for j in range(n):
            s += a_inv[i, j] * x[j]
        u[i] = s
    for i in range(n):
        denom += x[i] * u[i]
    scale = 1.0 / denom
    for i in range(n):
        s = u[i] * scale
        for j in range(n):
            a_inv[i, j] -= s * u[j]


def quad_forms(double[:, ::1] a, double[:, ::1] xs):
    """Return xs[i] @ a @ xs[i] for each row of xs."""
    cdef Py_ssize_t k = xs.shape[0]
    cdef Py_ssize_t n = xs.shape[1]
    cdef cnp.ndarray[double, ndim=1] out_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t m, i, j
    cdef double acc, row
    for m in range(k):
        acc = 0.0
        for i in range(n):
            row = 0.0
            for j in range(n):
                row += a[i, j] * xs[m, j]
            acc += xs[m, i] * row
        out[m] = acc
    return out_arr


def ucb_scores(double[:, ::1] xs, double[::1] beta, double[:, ::1] a_inv,
               double alpha):
    """Return xs @ beta + alpha * sqrt(max(xs[i] @ a_inv @ xs[i], 0))."""
    cdef Py_ssize_t k = xs.shape[0]
    cdef Py_ssize_t n = xs.shape[1]
    cdef cnp.ndarray[double, ndim=1] out_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t m, i, j
    cdef double mean, quad, row
    for m in range(k):
        mean = 0.0
        quad = 0.0
        for i in range(n):
            mean += xs[m, i] * beta[i]
            row = 0.0
            for j in range(n):
                row += a_inv[i, j] * xs[m, j]
            quad += xs[m, i] * row
        if quad < 0.0:
            quad = 0.0
        out[m] = mean + alpha * sqrt(quad)
    return out_arr


def projected_stats_update(double[:, ::1] c, double[:, ::1] gram_cc,
                           double[::1] psi, double[::1] phi):
    """Track c += psi phiᵀ and keep gram_cc = c cᵀ, both in place."""
    cdef Py_ssize_t dk = c.shape[0]
    cdef Py_ssize_t da = c.shape[1]
    cdef cnp.ndarray[double, ndim=1] w_arr = np.empty(dk, dtype=np.float64)
    cdef double[::1] w = w_arr
    cdef Py_ssize_t i, j
    cdef double s, phi2 = 0.0
    for i in range(dk):
        s = 0.0
        for j in range(da):
            s += c[i, j] * phi[j]
        w[i] = s
    for j in range(da):
        phi2 += phi[j] * phi[j]
    for i in range(dk):
        for j in range(dk):
            gram_cc[i, j] += psi[i] * w[j] + w[i] * psi[j] + phi2 * psi[i] * psi[j]
    for i in range(dk):
        s = psi[i]
        for j in range(da):
            c[i, j] += s * phi[j]
