# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled LSTM recurrence. Same contract and buffer layout as ``_lstm_py``."""
from cython cimport floating
from libc.math cimport exp, tanh
from libc.string cimport memcpy, memset
from scipy.linalg.cython_blas cimport dgemm, sgemm

import numpy as np


cdef inline void rm_gemm(bint ta, bint tb, int M, int N, int K,
                         floating* A, floating* B, floating beta,
                         floating* C) noexcept nogil:
    # row-major C(MxN) = op(A) @ op(B) + beta * C, via column-major BLAS on
    # the transposed problem
    cdef char opa = b'T' if ta else b'N'
    cdef char opb = b'T' if tb else b'N'
    cdef int lda = M if ta else K
    cdef int ldb = K if tb else N
    cdef floating one = 1.0
    if floating is float:
        sgemm(&opb, &opa, &N, &M, &K, &one, B, &ldb, A, &lda, &beta, C, &N)
    else:
        dgemm(&opb, &opa, &N, &M, &K, &one, B, &ldb, A, &lda, &beta, C, &N)


cdef inline floating sig(floating x) noexcept nogil:
    cdef floating e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def lstm_recurrence_forward(floating[:, :, ::1] xs, floating[:, ::1] wx,
                            floating[:, ::1] wh, floating[::1] b,
                            const unsigned char[:, ::1] mask,
                            floating[:, :, ::1] hs, floating[:, :, ::1] cs,
                            floating[:, :, ::1] acts):
    cdef int T = xs.shape[0]
    cdef int B = xs.shape[1]
    cdef int D = xs.shape[2]
    cdef int H = wh.shape[0]
    cdef int G = 4 * H
    cdef int t, r, j
    cdef floating zi, zf, zg, zo, c
    cdef floating* z
    with nogil:
        for t in range(T):
            z = &acts[t, 0, 0]
            rm_gemm(False, False, B, G, D, &xs[t, 0, 0], &wx[0, 0], 0.0, z)
            rm_gemm(False, False, B, G, H, &hs[t, 0, 0], &wh[0, 0], 1.0, z)
            for r in range(B):
                if not mask[t, r]:
                    memcpy(&hs[t + 1, r, 0], &hs[t, r, 0], H * sizeof(floating))
                    memcpy(&cs[t + 1, r, 0], &cs[t, r, 0], H * sizeof(floating))
                    memset(&acts[t, r, 0], 0, G * sizeof(floating))
                    continue
                for j in range(H):
                    zi = sig(acts[t, r, j] + b[j])
                    zf = sig(acts[t, r, H + j] + b[H + j])
                    zg = tanh(acts[t, r, 2 * H + j] + b[2 * H + j])
                    zo = sig(acts[t, r, 3 * H + j] + b[3 * H + j])
                    c = zf * cs[t, r, j] + zi * zg
                    cs[t + 1, r, j] = c
                    hs[t + 1, r, j] = zo * tanh(c)
                    acts[t, r, j] = zi
                    acts[t, r, H + j] = zf
                    acts[t, r, 2 * H + j] = zg
                    acts[t, r, 3 * H + j] = zo


def lstm_recurrence_backward(floating[:, ::1] dh_last, floating[:, :, ::1] xs,
                             floating[:, ::1] wx, floating[:, ::1] wh,
                             const unsigned char[:, ::1] mask,
                             floating[:, :, ::1] hs, floating[:, :, ::1] cs,
                             floating[:, :, ::1] acts, floating[:, :, ::1] dxs,
                             floating[:, ::1] dwx, floating[:, ::1] dwh,
                             floating[::1] db):
    cdef int T = xs.shape[0]
    cdef int B = xs.shape[1]
    cdef int D = xs.shape[2]
    cdef int H = wh.shape[0]
    cdef int G = 4 * H
    cdef int t, r, j
    cdef floating i, f, g, o, tc, dct, dhv
    dtype = np.float32 if floating is float else np.float64
    cdef floating[:, ::1] dh = np.array(dh_last, dtype=dtype, copy=True)
    cdef floating[:, ::1] dc = np.zeros((B, H), dtype=dtype)
    cdef floating[:, ::1] dz = np.zeros((B, G), dtype=dtype)
    cdef floating[:, ::1] dhp = np.zeros((B, H), dtype=dtype)
    with nogil:
        for t in range(T - 1, -1, -1):
            for r in range(B):
                if not mask[t, r]:
                    memset(&dz[r, 0], 0, G * sizeof(floating))
                    continue
                for j in range(H):
                    i = acts[t, r, j]
                    f = acts[t, r, H + j]
                    g = acts[t, r, 2 * H + j]
                    o = acts[t, r, 3 * H + j]
                    tc = tanh(cs[t + 1, r, j])
                    dhv = dh[r, j]
                    dct = dc[r, j] + dhv * o * (1.0 - tc * tc)
                    dz[r, j] = dct * g * i * (1.0 - i)
                    dz[r, H + j] = dct * cs[t, r, j] * f * (1.0 - f)
                    dz[r, 2 * H + j] = dct * i * (1.0 - g * g)
                    dz[r, 3 * H + j] = dhv * tc * o * (1.0 - o)
                    dc[r, j] = dct * f
            rm_gemm(True, False, H, G, B, &hs[t, 0, 0], &dz[0, 0], 1.0, &dwh[0, 0])
            rm_gemm(True, False, D, G, B, &xs[t, 0, 0], &dz[0, 0], 1.0, &dwx[0, 0])
            rm_gemm(False, True, B, D, G, &dz[0, 0], &wx[0, 0], 0.0, &dxs[t, 0, 0])
            rm_gemm(False, True, B, H, G, &dz[0, 0], &wh[0, 0], 0.0, &dhp[0, 0])
            for r in range(B):
                for j in range(G):
                    db[j] += dz[r, j]
                if mask[t, r]:
                    memcpy(&dh[r, 0], &dhp[r, 0], H * sizeof(floating))
