# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot per-query kernels.

Semantics mirror _kernels_np exactly (sentinel similarity -2.0 for
near-cancelled interpolations); only summation order may differ in the
last floating-point bits.
"""

from libc.math cimport sqrt

import numpy as np

cimport numpy as cnp

cnp.import_array()

NEAR_ZERO_NORM = 1e-12
INVALID_SIM = -2.0


def queue_sims(double[:, ::1] queue, double[::1] z):
    """Dot products of unit rows against a unit query, clamped to [-1, 1]."""
    cdef Py_ssize_t n = queue.shape[0]
    cdef Py_ssize_t h = queue.shape[1]
    cdef Py_ssize_t i, j
    cdef double s
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        s = 0.0
        for j in range(h):
            s += queue[i, j] * z[j]
        if s > 1.0:
            s = 1.0
        elif s < -1.0:
            s = -1.0
        out[i] = s
    return out_arr


def mix_pool_sims(double[:, ::1] easy, double[:, ::1] labeled,
                  cnp.int64_t[:, ::1] partner_idx, double[::1] mix_coeffs,
                  double[::1] z):
    """Interpolate easy negatives with labeled partners and score the pool."""
    cdef Py_ssize_t n_iter = partner_idx.shape[0]
    cdef Py_ssize_t n_easy = partner_idx.shape[1]
    cdef Py_ssize_t n_mu = mix_coeffs.shape[0]
    cdef Py_ssize_t h = easy.shape[1]
    cdef Py_ssize_t total = n_iter * n_easy * n_mu
    pool_arr = np.zeros((total, h), dtype=np.float64)
    sims_arr = np.empty(total, dtype=np.float64)
    norms_arr = np.empty(total, dtype=np.float64)
    cdef double[:, ::1] pool = pool_arr
    cdef double[::1] sims = sims_arr
    cdef double[::1] norms = norms_arr
    cdef Py_ssize_t row = 0
    cdef Py_ssize_t it, i, k, j, p
    cdef double mu, c, norm2, norm, inv, s
    for it in range(n_iter):
        for i in range(n_easy):
            p = partner_idx[it, i]
            for k in range(n_mu):
                mu = mix_coeffs[k]
                norm2 = 0.0
                for j in range(h):
                    c = mu * easy[i, j] + (1.0 - mu) * labeled[p, j]
                    pool[row, j] = c
                    norm2 += c * c
                norm = sqrt(norm2)
                norms[row] = norm
                if norm > 1e-12:
                    inv = 1.0 / norm
                    s = 0.0
                    for j in range(h):
                        pool[row, j] *= inv
                        s += pool[row, j] * z[j]
                    if s > 1.0:
                        s = 1.0
                    elif s < -1.0:
                        s = -1.0
                    sims[row] = s
                else:
                    for j in range(h):
                        pool[row, j] = 0.0
                    sims[row] = -2.0
                row += 1
    return pool_arr, sims_arr, norms_arr
