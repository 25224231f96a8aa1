# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_pykernels``."""
import numpy as np
from libc.math cimport nextafter


def ode_rate_forward(x, nu, mu, f, double alpha, corr, double gamma):
    cdef double[:, :, ::1] X = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, ::1] M = np.ascontiguousarray(corr, dtype=np.float64)
    cdef double[::1] NU = np.ascontiguousarray(nu, dtype=np.float64)
    cdef double[::1] MU = np.ascontiguousarray(mu, dtype=np.float64)
    cdef double[::1] F = np.ascontiguousarray(f, dtype=np.float64)
    cdef Py_ssize_t B = X.shape[0], H = X.shape[1], D = X.shape[2]
    arg_arr = np.empty((B, H, D))
    cdef double[:, :, ::1] A = arg_arr
    cdef Py_ssize_t b, i, d
    cdef double up, dn, xc
    with nogil:
        for b in range(B):
            for i in range(H):
                for d in range(D):
                    xc = X[b, i, d]
                    up = X[b, i + 1, d] if i + 1 < H else 0.0
                    dn = X[b, i - 1, d] if i > 0 else 0.0
                    A[b, i, d] = NU[d] * (up - 2.0 * xc + dn) + MU[d] * ((up - dn) * 0.5) + F[d] + alpha * M[b, i, d]
    # numpy's vectorized tanh is several times faster than a libm call per element
    th = np.tanh(arg_arr)
    cap = nextafter(gamma, 0.0)
    return np.clip(gamma * th, -cap, cap), th


def ode_rate_backward(g, th, x, nu, mu, double alpha, corr, double gamma):
    cdef double[:, :, ::1] G = np.ascontiguousarray(g, dtype=np.float64)
    cdef double[:, :, ::1] T = np.ascontiguousarray(th, dtype=np.float64)
    cdef double[:, :, ::1] X = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, ::1] M = np.ascontiguousarray(corr, dtype=np.float64)
    cdef double[::1] NU = np.ascontiguousarray(nu, dtype=np.float64)
    cdef double[::1] MU = np.ascontiguousarray(mu, dtype=np.float64)
    cdef Py_ssize_t B = X.shape[0], H = X.shape[1], D = X.shape[2]
    ga_arr = np.empty((B, H, D))
    gx_arr = np.empty((B, H, D))
    gnu_arr = np.zeros(D)
    gmu_arr = np.zeros(D)
    gf_arr = np.zeros(D)
    cdef double[:, :, ::1] GA = ga_arr
    cdef double[:, :, ::1] GX = gx_arr
    cdef double[::1] GNU = gnu_arr
    cdef double[::1] GMU = gmu_arr
    cdef double[::1] GF = gf_arr
    cdef Py_ssize_t b, i, d
    cdef double up, dn, xc, a, t, galpha = 0.0, acc
    with nogil:
        for b in range(B):
            for i in range(H):
                for d in range(D):
                    t = T[b, i, d]
                    a = G[b, i, d] * (gamma * (1.0 - t * t))
                    GA[b, i, d] = a
                    xc = X[b, i, d]
                    up = X[b, i + 1, d] if i + 1 < H else 0.0
                    dn = X[b, i - 1, d] if i > 0 else 0.0
                    GNU[d] += a * (up - 2.0 * xc + dn)
                    GMU[d] += a * ((up - dn) * 0.5)
                    GF[d] += a
                    galpha += a * M[b, i, d]
        for b in range(B):
            for i in range(H):
                for d in range(D):
                    acc = -2.0 * NU[d] * GA[b, i, d]
                    if i > 0:
                        acc = acc + (NU[d] + 0.5 * MU[d]) * GA[b, i - 1, d]
                    if i + 1 < H:
                        acc = acc + (NU[d] - 0.5 * MU[d]) * GA[b, i + 1, d]
                    GX[b, i, d] = acc
    gcorr = alpha * ga_arr
    return gx_arr, gnu_arr, gmu_arr, gf_arr, galpha, gcorr


def filter_valid(img, win):
    cdef double[:, ::1] I = np.ascontiguousarray(img, dtype=np.float64)
    cdef double[::1] K = np.ascontiguousarray(win, dtype=np.float64)
    cdef Py_ssize_t H = I.shape[0], W = I.shape[1], k = K.shape[0]
    if H < k or W < k:
        raise ValueError("image smaller than window")
    cdef Py_ssize_t Ho = H - k + 1, Wo = W - k + 1
    tmp_arr = np.empty((H, Wo))
    out_arr = np.empty((Ho, Wo))
    cdef double[:, ::1] TMP = tmp_arr
    cdef double[:, ::1] O = out_arr
    cdef Py_ssize_t i, j, t
    cdef double s
    with nogil:
        for i in range(H):
            for j in range(Wo):
                s = 0.0
                for t in range(k):
                    s = s + I[i, j + t] * K[t]
                TMP[i, j] = s
        for i in range(Ho):
            for j in range(Wo):
                s = 0.0
                for t in range(k):
                    s = s + TMP[i + t, j] * K[t]
                O[i, j] = s
    return out_arr
