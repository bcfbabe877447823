"""Pure-numpy forward and backward sweeps over a packed factorization.

Used when the compiled ``_kernels`` extension is unavailable. Both sweeps
work in place on a ``total x p`` work array.
"""
import numpy as np
from scipy.linalg import solve_triangular

__all__ = ["forward", "backward"]


def _unpack(data, o, d, k, m):
    L = data[o:o + d * d].reshape(d, d)
    o += d * d
    U = data[o:o + d * k].reshape(d, k)
    o += d * k
    Q = data[o:o + d * k].reshape(d, k)
    o += d * k
    LS = data[o:o + k * k].reshape(k, k)
    o += k * k
    Ans = data[o:o + m * d].reshape(m, d)
    return L, U, Q, LS, Ans


def _chol_solve(L, rhs):
    y = solve_triangular(L, rhs, lower=True, check_finite=False)
    return solve_triangular(L, y, lower=True, trans="T", check_finite=False)


def forward(s_off, s_len, r_off, rank, nptr, nidx, doff, data, x):
    for i in range(s_off.size):
        d, k = int(s_len[i]), int(rank[i])
        a, b = int(nptr[i]), int(nptr[i + 1])
        if d == 0:
            continue
        L, U, Q, LS, Ans = _unpack(data, int(doff[i]), d, k, b - a)
        so = int(s_off[i])
        t = _chol_solve(L, x[so:so + d])
        if k:
            v = _chol_solve(LS, U.T @ t)
            t -= Q @ v
            ro = int(r_off[i])
            x[ro:ro + k] += v
        if b > a:
            x[nidx[a:b]] -= Ans @ t


def backward(s_off, s_len, r_off, rank, nptr, nidx, doff, data, x):
    for i in range(s_off.size - 1, -1, -1):
        d, k = int(s_len[i]), int(rank[i])
        a, b = int(nptr[i]), int(nptr[i + 1])
        if d == 0:
            continue
        L, U, Q, LS, Ans = _unpack(data, int(doff[i]), d, k, b - a)
        so = int(s_off[i])
        z = x[so:so + d]
        if b > a:
            z = z - Ans.T @ x[nidx[a:b]]
        t = _chol_solve(L, z)
        if k:
            ro = int(r_off[i])
            v = _chol_solve(LS, U.T @ t - x[ro:ro + k])
            t -= Q @ v
        x[so:so + d] = t
