"""Dense desk-scale checks of a factorization.

Everything here materializes ``n x n`` (or larger) dense matrices and is
meant for ``n <= 4096``. ``A_H`` is recovered by inverting the materialized
solve operator ``H^-1``.
"""
from __future__ import annotations

import json
import math

import numpy as np
import scipy.linalg as sla

from .errors import SolverError, UnsupportedError
from .factor import HFactorization, compress_step, extend_step
from .solve import apply_inverse

__all__ = [
    "materialize_solve_operator",
    "approximate_operator",
    "factorization_error",
    "preconditioned_condition_number",
    "preservation_residual",
    "extended_factorization",
    "verify_equivalent_extension",
    "extension_defect",
    "single_step_extension",
    "reassembly_error",
    "error_bound_report",
    "eigen_bound_report",
    "diagnostics_report",
    "MAX_DENSE_N",
]

MAX_DENSE_N = 4096


def _dense(A):
    return A.toarray() if hasattr(A, "toarray") else np.asarray(A, dtype=np.float64)


def _guard(n, limit=MAX_DENSE_N):
    if n > limit:
        raise UnsupportedError(f"dense diagnostics need n <= {limit}, got {n}")


def materialize_solve_operator(fac: HFactorization, max_n: int = MAX_DENSE_N) -> np.ndarray:
    """Dense ``H^-1``; column ``j`` is ``apply_inverse(fac, e_j)``."""
    _guard(fac.n, max_n)
    return apply_inverse(fac, np.eye(fac.n))


def approximate_operator(fac: HFactorization, Hinv=None) -> np.ndarray:
    """``A_H`` as the inverse of the materialized solve operator."""
    Hinv = materialize_solve_operator(fac) if Hinv is None else Hinv
    Hs = 0.5 * (Hinv + Hinv.T)
    try:
        c = sla.cho_factor(Hs)
        AH = sla.cho_solve(c, np.eye(fac.n))
    except sla.LinAlgError:
        lu = sla.lu_factor(Hs)
        if np.min(np.abs(np.diag(lu[0]))) == 0.0:
            raise SolverError("solve operator is singular") from None
        AH = sla.lu_solve(lu, np.eye(fac.n))
    return 0.5 * (AH + AH.T)


def factorization_error(fac: HFactorization, A, AH=None) -> dict:
    """``||A - A_H||_F`` and its value relative to ``||A||_F``."""
    Ad = _dense(A)
    AH = approximate_operator(fac) if AH is None else AH
    err = float(np.linalg.norm(Ad - AH))
    if not math.isfinite(err):
        raise SolverError("factorization error is not finite")
    nA = float(np.linalg.norm(Ad))
    return {"abs_fro": err, "rel_fro": err / nA if nA else err,
            "abs_2": float(np.linalg.norm(Ad - AH, 2))}


def preconditioned_condition_number(fac: HFactorization, A, Hinv=None) -> dict:
    """Extreme eigenvalues of ``A_H^-1 A`` from the symmetrized pencil.

    With ``H^-1 = G G^T`` the eigenvalues are those of ``G^T A G``. An
    indefinite ``H^-1`` is reported (``spd`` false) rather than raised.
    """
    Ad = _dense(A)
    Hinv = materialize_solve_operator(fac) if Hinv is None else Hinv
    Hs = 0.5 * (Hinv + Hinv.T)
    try:
        G = sla.cholesky(Hs, lower=True)
    except sla.LinAlgError:
        w = np.linalg.eigvalsh(Hs)
        return {"spd": False, "kappa": math.inf, "lambda_min": math.nan,
                "lambda_max": math.nan, "solve_operator_min_eig": float(w[0])}
    ev = np.linalg.eigvalsh(G.T @ Ad @ G)
    lo, hi = float(ev[0]), float(ev[-1])
    return {"spd": True, "kappa": hi / lo if lo > 0 else math.inf,
            "lambda_min": lo, "lambda_max": hi}


def preservation_residual(fac: HFactorization, A, phi) -> float:
    """``max_j ||H^-1 (A phi_j) - phi_j|| / ||phi_j||``."""
    phi = np.asarray(phi, dtype=np.float64).reshape(A.shape[0], -1)
    out = apply_inverse(fac, A @ phi)
    return float(np.max(np.linalg.norm(out - phi, axis=0) / np.linalg.norm(phi, axis=0)))


# ---------------------------------------------------------------------------
# extended systems


def extended_factorization(fac: HFactorization, max_n: int = 1024):
    """Dense extended matrix ``K = L D L^T`` realized by the factorization.

    Unknowns are the global work vector (original unknowns in bisection
    order, then every parent red level) followed by one black block per
    eliminated node. Each node contributes the pivot
    ``[[A_ss, U], [U^T, 0]]`` on ``(s, b)`` and the multipliers for its
    neighbors and its parent red node (coupled to ``b`` by ``-I``); the
    root block closes the factorization. The Schur complement of ``K`` onto
    the first ``n`` unknowns is ``A_H`` in bisection order.
    """
    _guard(fac.n, max_n)
    f = fac.flat
    nb = int(f.rank.sum())
    N = fac.total + nb
    Lm = np.eye(N)
    D = np.zeros((N, N))
    boff = fac.total
    for nf in fac.nodes():
        d, k = nf.size, nf.rank
        sb = np.r_[np.arange(nf.s_off, nf.s_off + d), np.arange(boff, boff + k)]
        P = np.zeros((d + k, d + k))
        P[:d, :d] = nf.L @ nf.L.T
        P[:d, d:] = nf.U
        P[d:, :d] = nf.U.T
        D[np.ix_(sb, sb)] = P
        rows = np.r_[nf.neighbors, np.arange(nf.r_off, nf.r_off + k)].astype(np.int64)
        Kx = np.zeros((rows.size, d + k))
        Kx[:nf.neighbors.size, :d] = nf.A_ns
        Kx[nf.neighbors.size:, d:] = -np.eye(k)
        if rows.size and d + k:
            Lm[np.ix_(rows, sb)] = np.linalg.solve(P, Kx.T).T
        boff += k
    r = np.arange(fac.root_off, fac.total)
    D[np.ix_(r, r)] = fac.root_factor @ fac.root_factor.T
    return Lm @ D @ Lm.T


def extension_defect(A, K) -> float:
    """``||A_- - B^T C^-1 B - A||_F / ||A||_F`` with ``A_-`` the leading block."""
    Ad = _dense(A)
    n = Ad.shape[0]
    Am, Bt, C = K[:n, :n], K[:n, n:], K[n:, n:]
    S = Am - Bt @ np.linalg.solve(C, Bt.T) if C.size else Am
    return float(np.linalg.norm(S - Ad) / np.linalg.norm(Ad))


def verify_equivalent_extension(A, K, tol: float = 1e-10) -> bool:
    """True when the extended matrix ``K`` reduces to ``A`` (to ``tol``)."""
    return extension_defect(A, K) <= tol


def single_step_extension(A, s, n, w, eps: float = 0.0):
    """Compress ``A[s, w]`` at tolerance ``eps`` and extend the dense ``A``.

    Returns ``(K, info)``; ``K`` keeps the unknowns of ``A`` first, then
    the black and parent red blocks.
    """
    Ad = _dense(A)
    s, n, w = (np.asarray(v, dtype=np.int64) for v in (s, n, w))
    A_sw = Ad[np.ix_(s, w)]
    f = compress_step(A_sw, eps)
    K, b, r = extend_step(Ad, s, n, w, f.U, f.Rt)
    return K, {"U": f.U, "Rt": f.Rt, "b": b, "r": r,
               "compress_error": float(np.linalg.norm(A_sw - f.U @ f.Rt))}


def reassembly_error(K, elim) -> float:
    """Relative Frobenius error of ``L K2 L^T`` against ``K``.

    ``elim`` indexes the eliminated block. ``K2`` is block diagonal with the
    pivot block and its Schur complement; ``L`` holds the multipliers.
    """
    elim = np.asarray(elim, dtype=np.int64)
    rest = np.setdiff1d(np.arange(K.shape[0]), elim)
    order = np.r_[elim, rest]
    Kp = K[np.ix_(order, order)]
    e = elim.size
    P = Kp[:e, :e]
    X = np.linalg.solve(P, Kp[:e, e:]).T
    Lm = np.eye(K.shape[0])
    Lm[e:, :e] = X
    K2 = np.zeros_like(Kp)
    K2[:e, :e] = P
    K2[e:, e:] = Kp[e:, e:] - X @ Kp[:e, e:]
    return float(np.linalg.norm(Lm @ K2 @ Lm.T - Kp) / np.linalg.norm(Kp))


def error_bound_report(fac: HFactorization, A, AH=None, K=None) -> dict:
    """Compare ``||A - A_H||_F`` with the first-order accumulation bound.

    The bound is ``sqrt(1 + 2 ||K_cc^-1 K_cf||_F^2) e + ||K_cc^-1||_F e^2`` where
    ``K`` is :func:`extended_factorization` (``f`` the original unknowns,
    ``c`` the rest) and ``e = 2 * sum ||E_sw||_F`` bounds the Frobenius norm
    of the accumulated extension error (each ``E_sw`` enters twice, and
    carrying it through the orthonormal bases can at most double it).
    """
    Ad = _dense(A)
    n = fac.n
    K = extended_factorization(fac) if K is None else K
    AH = approximate_operator(fac) if AH is None else AH
    perm = fac.perm
    Kcc, Kcf = K[n:, n:], K[n:, :n]
    X = np.linalg.solve(Kcc, Kcf) if Kcc.size else np.zeros((0, n))
    Kcc_inv = np.linalg.inv(Kcc) if Kcc.size else np.zeros((0, 0))
    schur = K[:n, :n] - Kcf.T @ X
    inv = np.empty(n, dtype=np.int64)
    inv[perm] = np.arange(n)
    schur_orig = schur[np.ix_(inv, inv)]
    e_fro = 2.0 * sum(e[4] for e in fac.compress_errors())
    gain = math.sqrt(1.0 + 2.0 * float(np.linalg.norm(X)) ** 2)
    bound = gain * e_fro + float(np.linalg.norm(Kcc_inv)) * e_fro ** 2
    measured = float(np.linalg.norm(Ad - AH))
    return {
        "measured": measured,
        "bound": bound,
        "slack": bound - measured,
        "holds": measured <= bound * (1 + 1e-12) + 1e-12 * np.linalg.norm(Ad),
        "extension_error_fro": e_fro,
        "gain": gain,
        "Kcc_inv_fro": float(np.linalg.norm(Kcc_inv)),
        "schur_consistency": float(np.linalg.norm(schur_orig - AH) / np.linalg.norm(AH)),
    }


def eigen_bound_report(fac: HFactorization, A, eta: float | None = None, AH=None) -> dict:
    """Condition-number bounds from accuracy on eigen-subspaces.

    Uniform case: with ``e = ||A - A_H||_2 / lambda_max`` the bound is
    ``(1 + 2/sqrt(3) e kappa(A)) / (1 - 2/sqrt(3) e kappa(A))``.
    Two-subspace case: ``S1`` spans eigenvectors with ``lambda < eta``
    (default: the smallest eigenvalue only), ``S2`` the rest; ``e_i`` is
    the relative accuracy on ``S_i`` and ``mu2`` the smallest eigenvalue in
    ``S2``; the bound is ``(1 + c) / (1 - c)``,
    ``c = 2/sqrt(3) e1 kappa(A) + e2 lambda_max / mu2``. A bound is only
    meaningful when its denominator is positive (``None`` otherwise).
    """
    Ad = _dense(A)
    AH = approximate_operator(fac) if AH is None else AH
    lam, V = np.linalg.eigh(Ad)
    lmax, lmin = float(lam[-1]), float(lam[0])
    D = Ad - AH
    kA = lmax / lmin
    eu = float(np.linalg.norm(D, 2)) / lmax
    cu = 2.0 / math.sqrt(3.0) * eu * kA
    if eta is None:
        eta = float(lam[1]) if lam.size > 1 else math.inf
    m1 = lam < eta
    V1, V2 = V[:, m1], V[:, ~m1]
    e1 = float(np.linalg.norm(D @ V1, 2)) / lmax if V1.size else 0.0
    e2 = float(np.linalg.norm(D @ V2, 2)) / lmax if V2.size else 0.0
    mu2 = float(lam[~m1][0]) if V2.size else math.inf
    c2 = 2.0 / math.sqrt(3.0) * e1 * kA + e2 * lmax / mu2
    return {
        "kappa_A": kA, "lambda_max": lmax, "lambda_min": lmin,
        "uniform": {"eps": eu, "c0": 1 - cu, "c1": 1 + cu,
                    "bound": (1 + cu) / (1 - cu) if cu < 1 else None},
        "two_subspace": {"eta": eta, "dim_S1": int(m1.sum()), "eps1": e1, "eps2": e2,
                         "mu2": mu2, "c0": 1 - c2, "c1": 1 + c2,
                         "bound": (1 + c2) / (1 - c2) if c2 < 1 else None},
    }


def diagnostics_report(fac: HFactorization, A, preserve=None) -> dict:
    """Everything above in one JSON-serializable dictionary."""
    _guard(fac.n)
    Hinv = materialize_solve_operator(fac)
    AH = approximate_operator(fac, Hinv)
    rep = {
        "n": fac.n,
        "depth": fac.depth,
        "mode": fac.config.mode,
        "eps": fac.config.eps,
        "eps_schedule": fac.config.eps_schedule,
        "factorization_error": factorization_error(fac, A, AH),
        "condition": preconditioned_condition_number(fac, A, Hinv),
        "bounds": eigen_bound_report(fac, A, AH=AH),
    }
    if preserve is not None:
        rep["preservation_residual"] = preservation_residual(fac, A, preserve)
    return rep


def report_json(rep: dict, **kw) -> str:
    def default(o):
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(type(o).__name__)
    return json.dumps(rep, default=default, **kw)
