"""Pure NumPy versions of the compiled kernels.

Vectorised over columns/rows; the scalar logic mirrors ``_ckernels.pyx``
so that both backends consume the same uniforms identically.
"""

from __future__ import annotations

import numpy as np


def stdm_codes(u_time, u_perm, u_drop, p_time, p_lead, k, n_leads):
    u_time = np.asarray(u_time, dtype=np.float64)
    S, N = u_time.shape
    C = int(n_leads)
    full = u_time < p_time  # [S, N]
    codes = np.where(np.asarray(u_drop) < p_lead, 2, 1).astype(np.int8)  # [S, N, C]

    perm = np.broadcast_to(np.arange(C), (S, N, C)).copy()
    rows = np.arange(S)[:, None]
    cols = np.arange(N)[None, :]
    for i in range(k):
        j = np.minimum(i + (u_perm[:, :, i] * (C - i)).astype(np.int64), C - 1)
        pi = perm[:, :, i].copy()
        perm[:, :, i] = perm[rows, cols, j]
        perm[rows, cols, j] = pi
    for i in range(k):
        codes[rows, cols, perm[:, :, i]] = 0
    codes[full] = 1
    return np.ascontiguousarray(codes.transpose(0, 2, 1))


def fda_noise_scale(A, eps):
    A = np.asarray(A, dtype=np.float64)
    R, K = A.shape
    pos = (K + 1) // 2 - 1
    theta = np.partition(A, pos, axis=1)[:, pos]
    gated_off = A < theta[:, None]
    lam = np.zeros_like(A)
    lam[gated_off] = 1.0 / (eps + A[gated_off])
    count = gated_off.sum(axis=1)
    total = lam.sum(axis=1)
    mu = np.divide(total, count, out=np.ones_like(total), where=count > 0)
    lam = lam / mu[:, None]
    return lam, theta
