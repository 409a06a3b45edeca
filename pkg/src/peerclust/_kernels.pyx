# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.

Mirrors _kernels_py.py operation for operation (same accumulation order,
same libm calls), so results are bitwise identical to the pure-Python
reference. See that module for the layout contract.
"""

from libc.math cimport exp, log1p, sqrt, INFINITY

import numpy as np

IMPLEMENTATION = "cython"


cdef inline double _sqdist_and_dir(const double* x, const double* y, Py_ssize_t d,
                                   const double* amat, double* dir_buf) noexcept nogil:
    cdef Py_ssize_t c, c2
    cdef double s, t, acc
    if amat == NULL:
        s = 0.0
        for c in range(d):
            t = x[c] - y[c]
            dir_buf[c] = t
            s += t * t
        return s
    for c in range(d):
        acc = 0.0
        for c2 in range(d):
            acc += amat[c * d + c2] * (x[c2] - y[c2])
        dir_buf[c] = acc
    s = 0.0
    for c in range(d):
        s += (x[c] - y[c]) * dir_buf[c]
    return s


cdef inline double _gamma(int loss_code, double s, double param) noexcept nogil:
    cdef double g
    if loss_code == 0:
        return 1.0
    if loss_code == 1:
        g = sqrt(s)
        if g <= param:
            return 1.0
        return param / g
    if loss_code == 2:
        return 2.0 / (1.0 + exp(-s))
    return 4.0 * param * (1.0 - param / (param + s))


cdef inline double _scalar_loss(int loss_code, double s, double param) noexcept nogil:
    cdef double g
    if loss_code == 0:
        return 0.5 * s
    if loss_code == 1:
        g = sqrt(s)
        if g <= param:
            return 0.5 * s
        return param * g - 0.5 * param * param
    if loss_code == 2:
        if s > 30.0:
            return s + log1p(exp(-s))
        return log1p(exp(s))
    return 2.0 * param * param * (s / param - log1p(s / param))


def assign_clusters(double[:, :, ::1] centers, double[:, ::1] points,
                    long[::1] offsets, amat_obj, int[::1] out_labels,
                    Py_ssize_t user_start, Py_ssize_t user_end):
    cdef Py_ssize_t k_count = centers.shape[1]
    cdef Py_ssize_t d = centers.shape[2]
    cdef double[:, ::1] amat_mv
    cdef const double* amat = NULL
    if amat_obj is not None:
        amat_mv = amat_obj
        amat = &amat_mv[0, 0]
    cdef double[::1] dir_buf = np.empty(d, dtype=np.float64)
    cdef Py_ssize_t i, r, k
    cdef int best_k
    cdef double s, best
    with nogil:
        for i in range(user_start, user_end):
            for r in range(offsets[i], offsets[i + 1]):
                best = INFINITY
                best_k = 0
                for k in range(k_count):
                    s = _sqdist_and_dir(&centers[i, k, 0], &points[r, 0], d,
                                        amat, &dir_buf[0])
                    if s < best:
                        best = s
                        best_k = <int> k
                out_labels[r] = best_k


def grad_field(double[:, :, ::1] centers, long[::1] indptr, long[::1] indices,
               double[:, ::1] points, double[::1] weights, int[::1] labels,
               long[::1] offsets, int loss_code, double param, double inv_rho,
               amat_obj, double[:, :, ::1] out,
               Py_ssize_t user_start, Py_ssize_t user_end):
    cdef Py_ssize_t k_count = centers.shape[1]
    cdef Py_ssize_t d = centers.shape[2]
    cdef double[:, ::1] amat_mv
    cdef const double* amat = NULL
    if amat_obj is not None:
        amat_mv = amat_obj
        amat = &amat_mv[0, 0]
    cdef double[::1] scratch = np.empty(3 * d, dtype=np.float64)
    cdef double* dir_buf
    cdef double* cons
    cdef double* inn
    cdef Py_ssize_t i, k, p, r, c, j
    cdef double s, coef
    cdef const double* x
    cdef const double* xj
    with nogil:
        dir_buf = &scratch[0]
        cons = &scratch[d]
        inn = &scratch[2 * d]
        for i in range(user_start, user_end):
            for k in range(k_count):
                x = &centers[i, k, 0]
                for c in range(d):
                    cons[c] = 0.0
                for p in range(indptr[i], indptr[i + 1]):
                    j = indices[p]
                    xj = &centers[j, k, 0]
                    for c in range(d):
                        cons[c] += x[c] - xj[c]
                for c in range(d):
                    inn[c] = 0.0
                for r in range(offsets[i], offsets[i + 1]):
                    if labels[r] != k:
                        continue
                    s = _sqdist_and_dir(x, &points[r, 0], d, amat, dir_buf)
                    coef = weights[r] * _gamma(loss_code, s, param)
                    for c in range(d):
                        inn[c] += coef * dir_buf[c]
                for c in range(d):
                    out[i, k, c] = cons[c] + inv_rho * inn[c]


def weighted_cost(double[:, :, ::1] centers, double[:, ::1] points,
                  double[::1] weights, int[::1] labels, long[::1] offsets,
                  int loss_code, double param, amat_obj):
    cdef Py_ssize_t k_count = centers.shape[1]
    cdef Py_ssize_t d = centers.shape[2]
    cdef Py_ssize_t m = offsets.shape[0] - 1
    cdef double[:, ::1] amat_mv
    cdef const double* amat = NULL
    if amat_obj is not None:
        amat_mv = amat_obj
        amat = &amat_mv[0, 0]
    cdef double[::1] dir_buf = np.empty(d, dtype=np.float64)
    cdef double[::1] partial = np.empty(k_count, dtype=np.float64)
    cdef Py_ssize_t i, r, k
    cdef double s, total = 0.0
    with nogil:
        for i in range(m):
            for k in range(k_count):
                partial[k] = 0.0
            for r in range(offsets[i], offsets[i + 1]):
                k = labels[r]
                s = _sqdist_and_dir(&centers[i, k, 0], &points[r, 0], d,
                                    amat, &dir_buf[0])
                partial[k] += weights[r] * _scalar_loss(loss_code, s, param)
            for k in range(k_count):
                total += partial[k]
    return total
