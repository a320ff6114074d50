# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
# distutils: language = c++
"""Compiled scalar kernels; behaviour must match ``_fallback`` exactly."""

import numpy as np

cimport numpy as cnp
from libcpp.algorithm cimport nth_element
from libcpp.vector cimport vector

cnp.import_array()


def stdm_codes(const double[:, :] u_time, const double[:, :, :] u_perm,
               const double[:, :, :] u_drop, double p_time, double p_lead,
               int k, int n_leads):
    """Per-column dual masking from pre-drawn uniforms.

    Returns int8 codes ``[S, C, N]``: 0 visible, 1 masked, 2 dropped.
    """
    cdef Py_ssize_t S = u_time.shape[0]
    cdef Py_ssize_t N = u_time.shape[1]
    cdef int C = n_leads
    out = np.empty((S, C, N), dtype=np.int8)
    cdef signed char[:, :, :] codes = out
    cdef vector[int] perm = vector[int](C)
    cdef Py_ssize_t s, n
    cdef int i, j, c, tmp
    for s in range(S):
        for n in range(N):
            if u_time[s, n] < p_time:
                for c in range(C):
                    codes[s, c, n] = 1
                continue
            for c in range(C):
                perm[c] = c
            # partial Fisher-Yates: first k slots become a uniform k-subset
            for i in range(k):
                j = i + <int>(u_perm[s, n, i] * (C - i))
                if j > C - 1:
                    j = C - 1
                tmp = perm[i]
                perm[i] = perm[j]
                perm[j] = tmp
            for c in range(C):
                codes[s, c, n] = 2 if u_drop[s, n, c] < p_lead else 1
            for i in range(k):
                codes[s, perm[i], n] = 0
    return out


def fda_noise_scale(const double[:, :] A, double eps):
    """Per-row median gate, inverse-importance scale and mean normalization.

    Returns ``(lam [R, K], theta [R])``.
    """
    cdef Py_ssize_t R = A.shape[0]
    cdef Py_ssize_t K = A.shape[1]
    lam_arr = np.zeros((R, K), dtype=np.float64)
    theta_arr = np.empty(R, dtype=np.float64)
    cdef double[:, :] lam = lam_arr
    cdef double[:] theta = theta_arr
    cdef vector[double] row = vector[double](K)
    cdef Py_ssize_t r, q, pos
    cdef double th, total, mu
    cdef Py_ssize_t count
    # nearest-rank-lower median: sorted index ceil(K / 2) - 1
    pos = (K + 1) // 2 - 1
    for r in range(R):
        for q in range(K):
            row[q] = A[r, q]
        nth_element(row.begin(), row.begin() + pos, row.end())
        th = row[pos]
        theta[r] = th
        total = 0.0
        count = 0
        for q in range(K):
            if A[r, q] < th:
                lam[r, q] = 1.0 / (eps + A[r, q])
                total += lam[r, q]
                count += 1
        if count:
            mu = total / count
            for q in range(K):
                if lam[r, q] != 0.0:
                    lam[r, q] = lam[r, q] / mu
    return lam_arr, theta_arr
