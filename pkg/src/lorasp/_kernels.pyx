# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled forward and backward sweeps over a packed factorization.

Same contract as :mod:`lorasp._sweep`: both functions update the
``total x p`` C-contiguous work array ``x`` in place.
"""
import numpy as np
cimport numpy as cnp

ctypedef const cnp.int64_t[::1] ivec
ctypedef const double[::1] dvec


cdef inline void _lsolve(const double* L, double* t, Py_ssize_t d, Py_ssize_t p) noexcept nogil:
    # t <- L^-1 t, L lower triangular row-major d x d, t is d x p
    cdef Py_ssize_t r, j, c
    cdef double a, piv
    for r in range(d):
        for j in range(r):
            a = L[r * d + j]
            if a != 0.0:
                for c in range(p):
                    t[r * p + c] -= a * t[j * p + c]
        piv = 1.0 / L[r * d + r]
        for c in range(p):
            t[r * p + c] *= piv


cdef inline void _ltsolve(const double* L, double* t, Py_ssize_t d, Py_ssize_t p) noexcept nogil:
    # t <- L^-T t
    cdef Py_ssize_t r, j, c
    cdef double a, piv
    for r in range(d - 1, -1, -1):
        piv = 1.0 / L[r * d + r]
        for c in range(p):
            t[r * p + c] *= piv
        for j in range(r):
            a = L[r * d + j]
            if a != 0.0:
                for c in range(p):
                    t[j * p + c] -= a * t[r * p + c]


cdef inline void _node(const double* base, Py_ssize_t d, Py_ssize_t k, Py_ssize_t m,
                       const double** L, const double** U, const double** Q,
                       const double** LS, const double** A) noexcept nogil:
    L[0] = base
    U[0] = L[0] + d * d
    Q[0] = U[0] + d * k
    LS[0] = Q[0] + d * k
    A[0] = LS[0] + k * k


def forward(ivec s_off, ivec s_len, ivec r_off, ivec rank, ivec nptr, ivec nidx,
            ivec doff, dvec data, double[:, ::1] x):
    cdef Py_ssize_t nn = s_off.shape[0], p = x.shape[1]
    cdef Py_ssize_t i, d, k, m, r, a, c, j, so, ro, row
    cdef const double *L
    cdef const double *U
    cdef const double *Q
    cdef const double *LS
    cdef const double *A
    cdef double s
    cdef Py_ssize_t dmax = 1, kmax = 1
    for i in range(nn):
        dmax = max(dmax, s_len[i])
        kmax = max(kmax, rank[i])
    cdef double[::1] tbuf = np.empty(dmax * p)
    cdef double[::1] vbuf = np.empty(kmax * p)
    cdef double* t = &tbuf[0]
    cdef double* v = &vbuf[0]
    cdef double* xp = &x[0, 0] if x.shape[0] else NULL
    with nogil:
        for i in range(nn):
            d = s_len[i]
            k = rank[i]
            m = nptr[i + 1] - nptr[i]
            if d == 0:
                continue
            _node(&data[0] + doff[i], d, k, m, &L, &U, &Q, &LS, &A)
            so = s_off[i]
            for r in range(d * p):
                t[r] = xp[so * p + r]
            _lsolve(L, t, d, p)
            _ltsolve(L, t, d, p)
            if k:
                for r in range(k * p):
                    v[r] = 0.0
                for r in range(d):
                    for a in range(k):
                        s = U[r * k + a]
                        for c in range(p):
                            v[a * p + c] += s * t[r * p + c]
                _lsolve(LS, v, k, p)
                _ltsolve(LS, v, k, p)
                for r in range(d):
                    for a in range(k):
                        s = Q[r * k + a]
                        for c in range(p):
                            t[r * p + c] -= s * v[a * p + c]
                ro = r_off[i]
                for r in range(k * p):
                    xp[ro * p + r] += v[r]
            for j in range(m):
                row = nidx[nptr[i] + j]
                for r in range(d):
                    s = A[j * d + r]
                    if s != 0.0:
                        for c in range(p):
                            xp[row * p + c] -= s * t[r * p + c]


def backward(ivec s_off, ivec s_len, ivec r_off, ivec rank, ivec nptr, ivec nidx,
             ivec doff, dvec data, double[:, ::1] x):
    cdef Py_ssize_t nn = s_off.shape[0], p = x.shape[1]
    cdef Py_ssize_t i, d, k, m, r, a, c, j, so, ro, row
    cdef const double *L
    cdef const double *U
    cdef const double *Q
    cdef const double *LS
    cdef const double *A
    cdef double s
    cdef Py_ssize_t dmax = 1, kmax = 1
    for i in range(nn):
        dmax = max(dmax, s_len[i])
        kmax = max(kmax, rank[i])
    cdef double[::1] tbuf = np.empty(dmax * p)
    cdef double[::1] vbuf = np.empty(kmax * p)
    cdef double* t = &tbuf[0]
    cdef double* v = &vbuf[0]
    cdef double* xp = &x[0, 0] if x.shape[0] else NULL
    with nogil:
        for i in range(nn - 1, -1, -1):
            d = s_len[i]
            k = rank[i]
            m = nptr[i + 1] - nptr[i]
            if d == 0:
                continue
            _node(&data[0] + doff[i], d, k, m, &L, &U, &Q, &LS, &A)
            so = s_off[i]
            for r in range(d * p):
                t[r] = xp[so * p + r]
            for j in range(m):
                row = nidx[nptr[i] + j]
                for r in range(d):
                    s = A[j * d + r]
                    if s != 0.0:
                        for c in range(p):
                            t[r * p + c] -= s * xp[row * p + c]
            _lsolve(L, t, d, p)
            _ltsolve(L, t, d, p)
            if k:
                ro = r_off[i]
                for r in range(k * p):
                    v[r] = -xp[ro * p + r]
                for r in range(d):
                    for a in range(k):
                        s = U[r * k + a]
                        for c in range(p):
                            v[a * p + c] += s * t[r * p + c]
                _lsolve(LS, v, k, p)
                _ltsolve(LS, v, k, p)
                for r in range(d):
                    for a in range(k):
                        s = Q[r * k + a]
                        for c in range(p):
                            t[r * p + c] -= s * v[a * p + c]
            for r in range(d * p):
                xp[so * p + r] = t[r]
