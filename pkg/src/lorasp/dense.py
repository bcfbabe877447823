"""Dense linear-algebra kernels used by the factorization.

Rank decisions follow one rule everywhere: keep the smallest ``k`` with
``sigma[k] <= tol`` where ``tol`` is ``eps * sigma[0]`` (relative mode) or an
explicit absolute threshold. All routines accept zero-sized operands.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import NotSPDError

__all__ = [
    "LowRankFactor",
    "ProjectionResult",
    "CholeskyFactor",
    "truncated_svd",
    "orthonormalize",
    "preserving_compress",
    "spd_factor",
    "spd_solve",
    "project_one_sided",
    "project_symmetric_first",
    "project_symmetric_second",
    "PROJECTIONS",
]

_EPS = np.finfo(np.float64).eps


@dataclass
class LowRankFactor:
    """``M ~= U @ Rt`` with orthonormal ``U``; ``err`` is the achieved 2-norm error."""

    U: np.ndarray
    Rt: np.ndarray
    err: float
    norm: float = 0.0  # 2-norm of the compressed matrix

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    def dense(self) -> np.ndarray:
        return self.U @ self.Rt


def _svd(M):
    try:
        return np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError:
        # gesdd occasionally fails to converge; gesvd is slower but robust
        return sla.svd(M, full_matrices=False, lapack_driver="gesvd")


def _rank_from_sigma(s, tol, numerical=False):
    if s.size == 0 or s[0] == 0.0:
        return 0
    if numerical:
        tol = max(tol, max(s.size, 1) * _EPS * s[0])
        return int(np.count_nonzero(s > tol))
    # smallest k with s[k] <= tol; s is non-increasing
    return int(np.count_nonzero(s > tol))


def truncated_svd(M, eps: float, mode: str = "relative", abs_tol: float | None = None) -> LowRankFactor:
    """Truncated SVD ``M = U @ Rt + E``, ``Rt = diag(s) @ Vt``.

    Parameters
    ----------
    eps : float
        Relative 2-norm tolerance: the rank is the smallest ``k`` with
        ``sigma_{k+1} <= eps * sigma_1``. ``eps == 0`` keeps the full numerical
        rank.
    mode : {"relative", "absolute-fro", "absolute"}
        ``absolute-fro`` truncates so that ``||E||_F <= eps``; ``absolute``
        uses ``sigma_{k+1} <= abs_tol`` (``abs_tol`` defaults to ``eps``).
    """
    if eps < 0:
        raise ValueError("eps must be >= 0")
    M = np.asarray(M, dtype=np.float64)
    m, n = M.shape
    if m == 0 or n == 0 or not M.any():
        return LowRankFactor(np.zeros((m, 0)), np.zeros((0, n)), 0.0, 0.0)
    u, s, vt = _svd(M)
    if mode == "relative":
        k = _rank_from_sigma(s, eps * s[0], numerical=(eps == 0))
        err = float(s[k]) if k < s.size else 0.0
    elif mode == "absolute":
        tol = eps if abs_tol is None else abs_tol
        k = _rank_from_sigma(s, tol, numerical=(tol == 0))
        err = float(s[k]) if k < s.size else 0.0
    elif mode == "absolute-fro":
        tail = np.sqrt(np.cumsum((s ** 2)[::-1])[::-1])  # tail[k] = ||s[k:]||
        k = int(np.count_nonzero(tail > eps))
        if eps == 0:
            k = _rank_from_sigma(s, 0.0, numerical=True)
        err = float(tail[k]) if k < s.size else 0.0
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return LowRankFactor(u[:, :k].copy(), s[:k, None] * vt[:k], err, float(s[0]))


def orthonormalize(C, drop_tol: float = 1e-12) -> np.ndarray:
    """Orthonormal basis of the columns of ``C`` by Gram-Schmidt, twice.

    A column is dropped when its norm after projection is below
    ``drop_tol`` times its original norm (zero columns are always dropped).
    """
    C = np.asarray(C, dtype=np.float64)
    m = C.shape[0]
    Q = np.zeros((m, 0))
    for j in range(C.shape[1]):
        v = C[:, j].copy()
        nrm0 = np.linalg.norm(v)
        if nrm0 == 0.0:
            continue
        for _ in range(2):
            v -= Q @ (Q.T @ v)
        nrm = np.linalg.norm(v)
        if nrm < drop_tol * nrm0:
            continue
        Q = np.column_stack([Q, v / nrm])
    return Q


def preserving_compress(A_sw, phi_x, phi_y_image, eps: float, ref_norm: float | None = None,
                        drop_tol: float = 1e-12) -> LowRankFactor:
    """Low-rank factor of ``A_sw`` whose basis contains given columns exactly.

    ``U = [U1, U2]`` where ``U1`` orthonormalizes ``[phi_x, phi_y_image]``
    (``phi_y_image = A_sw @ phi_y``) and ``U2`` is the truncated SVD basis of
    ``(I - U1 U1^T) A_sw`` at absolute tolerance ``eps * ||A_sw||_2``. Then
    ``U U^T phi_x = phi_x`` and ``U Rt phi_y = A_sw phi_y``.
    """
    A_sw = np.asarray(A_sw, dtype=np.float64)
    m, n = A_sw.shape
    cols = [np.asarray(c, dtype=np.float64).reshape(m, -1)
            for c in (phi_x, phi_y_image) if c is not None]
    P = np.hstack(cols) if cols else np.zeros((m, 0))
    if P.shape[1] == 0:
        return truncated_svd(A_sw, eps)
    nrm = ref_norm if ref_norm is not None else (np.linalg.norm(A_sw, 2) if A_sw.size else 0.0)
    U1 = orthonormalize(P, drop_tol)
    K1t = U1.T @ A_sw
    resid = A_sw - U1 @ K1t
    # roundoff left in the residual must not count as numerical rank
    floor = max(m, n) * _EPS * nrm
    tail = truncated_svd(resid, eps, mode="absolute", abs_tol=max(eps * nrm, floor))
    U = orthonormalize(np.hstack([U1, tail.U]), drop_tol=1e-8) if tail.rank else U1
    return LowRankFactor(U, U.T @ A_sw, tail.err, float(nrm))


@dataclass
class CholeskyFactor:
    """Lower Cholesky factor ``L`` with ``M = L L^T``."""

    L: np.ndarray

    @property
    def n(self) -> int:
        return self.L.shape[0]


def spd_factor(M, where=None) -> CholeskyFactor:
    M = np.asarray(M, dtype=np.float64)
    if M.shape[0] == 0:
        return CholeskyFactor(np.zeros((0, 0)))
    try:
        L = sla.cholesky(M, lower=True, check_finite=False)
    except sla.LinAlgError:
        raise NotSPDError("non-positive pivot in Cholesky factorization", where) from None
    if not np.all(np.isfinite(L)):
        raise NotSPDError("non-finite Cholesky factor", where)
    return CholeskyFactor(L)


def spd_solve(F: CholeskyFactor, rhs) -> np.ndarray:
    rhs = np.asarray(rhs, dtype=np.float64)
    if F.n == 0:
        return rhs.copy()
    y = sla.solve_triangular(F.L, rhs, lower=True, check_finite=False)
    return sla.solve_triangular(F.L, y, lower=True, trans="T", check_finite=False)


# ---------------------------------------------------------------------------
# approximate preservation (two-stage projections)


@dataclass
class ProjectionResult:
    """Approximation ``Bt_approx`` of ``B^T`` (``|s| x |w|``) with bound checks.

    ``bounds`` maps a name to ``(measured, bound)``; ``slack`` is
    ``bound - measured`` for each.
    """

    Bt_approx: np.ndarray
    stage1: tuple
    U2: np.ndarray
    bounds: dict = field(default_factory=dict)

    @property
    def slack(self) -> dict:
        return {k: b - m for k, (m, b) in self.bounds.items()}

    def factor(self) -> LowRankFactor:
        """Orthonormal column basis of ``Bt_approx`` with coefficients."""
        f = truncated_svd(self.Bt_approx, 0.0)
        return LowRankFactor(f.U, f.U.T @ self.Bt_approx, 0.0, f.norm)


def _norm2(M):
    return float(np.linalg.norm(M, 2)) if M.size else 0.0


def _stage2(Bt, Bt_hat, eps2, nB):
    """Second truncated SVD of ``B^T - Bhat^T`` at absolute tol ``eps2 ||B||``."""
    f = truncated_svd(Bt - Bt_hat, eps2, mode="absolute", abs_tol=eps2 * nB)
    U2 = f.U
    return Bt_hat + U2 @ (U2.T @ (Bt - Bt_hat)), U2


def _prep(B, X_s, X_w):
    B = np.asarray(B, dtype=np.float64)
    nw, ns = B.shape
    X_s = np.zeros((ns, 0)) if X_s is None else np.asarray(X_s, dtype=np.float64).reshape(ns, -1)
    X_w = np.zeros((nw, 0)) if X_w is None else np.asarray(X_w, dtype=np.float64).reshape(nw, -1)
    return B, B.T, X_s, X_w


def _check_eps(eps1, eps2):
    if eps1 < 0 or eps2 < 0:
        raise ValueError("tolerances must be >= 0")
    if eps1 > eps2:
        raise ValueError("eps1 must not exceed eps2")


def project_one_sided(B, X_s, X_w, eps1: float, eps2: float) -> ProjectionResult:
    """First-order one-sided projection of ``B^T``.

    ``U1`` comes from a truncated SVD of ``[X_s, B^T X_w]`` (tol ``eps1``);
    the remainder ``(I - U1 U1^T) B^T`` is truncated at ``eps2 ||B||``.
    """
    _check_eps(eps1, eps2)
    B, Bt, X_s, X_w = _prep(B, X_s, X_w)
    Y = np.hstack([X_s, Bt @ X_w])
    U1 = truncated_svd(Y, eps1).U
    Bt_hat = U1 @ (U1.T @ Bt)
    Bt_tilde, U2 = _stage2(Bt, Bt_hat, eps2, _norm2(Bt))
    nB, nY = _norm2(Bt), _norm2(Y)
    D = Bt - Bt_tilde
    bounds = {
        "B": (_norm2(D), eps2 * nB),
        "Xw": (_norm2(D @ X_w), min(eps1 * nY, eps2 * nB * _norm2(X_w))),
        # ||(B - B~) X_s a|| <= eps1 eps2 ||B|| ||Y|| ||a|| for every a
        "Xs": (_norm2(D.T @ X_s), eps1 * eps2 * nB * nY),
    }
    return ProjectionResult(Bt_tilde, (U1,), U2, bounds)


def project_symmetric_first(B, X_s, X_w, eps1: float, eps2: float) -> ProjectionResult:
    """First-order symmetric projection: ``Bhat^T = P_s B^T P_w`` then a second SVD."""
    _check_eps(eps1, eps2)
    B, Bt, X_s, X_w = _prep(B, X_s, X_w)
    Ys = np.hstack([X_s, Bt @ X_w])
    Yw = np.hstack([X_w, B @ X_s])
    U1s = truncated_svd(Ys, eps1).U
    U1w = truncated_svd(Yw, eps1).U
    Bt_hat = U1s @ ((U1s.T @ Bt @ U1w) @ U1w.T)
    nB = _norm2(Bt)
    Bt_tilde, U2 = _stage2(Bt, Bt_hat, eps2, nB)
    nYs, nYw = _norm2(Ys), _norm2(Yw)
    D = Bt - Bt_tilde
    bounds = {
        "B": (_norm2(D), eps2 * nB),
        "Xw": (_norm2(D @ X_w), min(eps1 * (nYs + nB * nYw), eps2 * nB * _norm2(X_w))),
        "Xs": (_norm2(D.T @ X_s), min(eps1 * (nB * nYs + nYw), eps2 * nB * _norm2(X_s))),
    }
    return ProjectionResult(Bt_tilde, (U1s, U1w), U2, bounds)


def project_symmetric_second(B, X_s, X_w, eps1: float, eps2: float,
                             eigenvalues=None) -> ProjectionResult:
    """Second-order symmetric projection.

    ``Bhat^T = B^T - (I - P_s) B^T (I - P_w)`` with ``P_s``, ``P_w`` the
    projectors onto truncated SVD bases of ``X_s`` and ``X_w``. When the
    columns of ``X_s`` are ``e_i / lambda_i``, pass ``eigenvalues`` to also
    check ``||(B - B~) e_i|| <= lambda_i eps1 eps2 ||B|| ||X_s||`` per column.
    """
    _check_eps(eps1, eps2)
    B, Bt, X_s, X_w = _prep(B, X_s, X_w)
    U1s = truncated_svd(X_s, eps1).U
    U1w = truncated_svd(X_w, eps1).U
    Ps_perp_Bt = Bt - U1s @ (U1s.T @ Bt)
    inner = Ps_perp_Bt - (Ps_perp_Bt @ U1w) @ U1w.T
    Bt_hat = Bt - inner
    nB = _norm2(Bt)
    Bt_tilde, U2 = _stage2(Bt, Bt_hat, eps2, nB)
    D = Bt - Bt_tilde
    bounds = {
        "B": (_norm2(D), eps2 * nB),
        "Xs": (_norm2(D.T @ X_s), eps1 * eps2 * nB * _norm2(X_s)),
        "Xw": (_norm2(D @ X_w), eps1 * eps2 * nB * _norm2(X_w)),
    }
    if eigenvalues is not None:
        lam = np.asarray(eigenvalues, dtype=np.float64)
        nXs = _norm2(X_s)
        for i, li in enumerate(lam):
            e_i = X_s[:, i] * li
            bounds[f"e{i}"] = (float(np.linalg.norm(D.T @ e_i)), li * eps1 * eps2 * nB * nXs)
    return ProjectionResult(Bt_tilde, (U1s, U1w), U2, bounds)


PROJECTIONS = {
    "one-sided": project_one_sided,
    "symmetric-first": project_symmetric_first,
    "symmetric-second": project_symmetric_second,
}
