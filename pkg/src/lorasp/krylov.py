"""Outer iterations: right-preconditioned full GMRES and the stationary scheme.

Both start from ``x0 = 0``. Iteration counts are comparable across
preconditioners because convergence is always judged on true quantities
(residual or error) rather than on a recurrence estimate.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

__all__ = ["IterationReport", "gmres_solve", "stationary_solve", "as_operator"]

DIVERGENCE_RATIO = 1e6


@dataclass
class IterationReport:
    """Outcome of an iterative solve.

    ``residual_history[j]`` is the true relative residual after ``j``
    iterations (entry 0 is the initial guess). ``error_history`` is filled
    by :func:`stationary_solve` when the exact solution is known.
    """

    x: np.ndarray
    iterations: int
    converged: bool
    residual_history: list = field(default_factory=list)
    error_history: list = field(default_factory=list)
    diverged: bool = False
    wall_time: float = 0.0
    method: str = ""
    metadata: dict = field(default_factory=dict)

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else math.nan

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "iterations": self.iterations,
            "converged": self.converged,
            "diverged": self.diverged,
            "final_residual": self.final_residual,
            "residual_history": [float(r) for r in self.residual_history],
            "error_history": [float(e) for e in self.error_history],
            "wall_time": self.wall_time,
            **self.metadata,
        }


def as_operator(M):
    """Callable ``v -> M v`` for matrices, operators, factorizations or callables."""
    if M is None:
        return lambda v: np.array(v, dtype=np.float64, copy=True)
    if hasattr(M, "apply_inverse"):
        return M.apply_inverse
    if hasattr(M, "matvec"):
        return M.matvec
    if callable(M):
        return M
    return lambda v: M @ v


def gmres_solve(A, b, precond=None, tol: float = 1e-10, max_iter: int = 200) -> IterationReport:
    """Right-preconditioned GMRES without restart.

    Solves ``A M^-1 u = b`` with ``x = M^-1 u``, where ``precond`` applies
    ``M^-1``. Arnoldi uses modified Gram-Schmidt with one reorthogonalization
    pass. The preconditioned basis vectors are kept, so the iterate and its
    true residual ``||b - A x_j|| / ||b||`` are formed every step; the
    solve stops as soon as that drops to ``tol``.
    """
    t0 = time.perf_counter()
    Aop, Minv = as_operator(A), as_operator(precond)
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    meta = {"preconditioning": "right", "restart": None, "tol": tol}
    beta = float(np.linalg.norm(b))
    x = np.zeros(n)
    if beta == 0.0:
        return IterationReport(x, 0, True, [0.0], wall_time=time.perf_counter() - t0,
                               method="gmres", metadata=meta)
    m = max_iter
    V = [b / beta]
    Z = []
    H = np.zeros((m + 1, m))
    cs, sn = np.zeros(m), np.zeros(m)
    g = np.zeros(m + 1)
    g[0] = beta
    hist = [1.0]
    converged = False
    j = 0
    for j in range(m):
        Z.append(np.asarray(Minv(V[j]), dtype=np.float64))
        w = np.asarray(Aop(Z[j]), dtype=np.float64)
        for _ in range(2):
            for i in range(j + 1):
                c = V[i] @ w
                H[i, j] += c
                w -= c * V[i]
        H[j + 1, j] = np.linalg.norm(w)
        breakdown = H[j + 1, j] <= 1e-14 * np.abs(H[:j + 1, j]).max(initial=0.0)
        if not breakdown:
            V.append(w / H[j + 1, j])
        for i in range(j):
            a, bb = H[i, j], H[i + 1, j]
            H[i, j] = cs[i] * a + sn[i] * bb
            H[i + 1, j] = -sn[i] * a + cs[i] * bb
        r = math.hypot(H[j, j], H[j + 1, j])
        cs[j], sn[j] = (1.0, 0.0) if r == 0.0 else (H[j, j] / r, H[j + 1, j] / r)
        H[j, j] = r
        H[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        y = _back_substitute(H[:j + 1, :j + 1], g[:j + 1])
        x = np.zeros(n)
        for i in range(j + 1):
            x += y[i] * Z[i]
        res = float(np.linalg.norm(b - Aop(x))) / beta
        hist.append(res)
        if res <= tol:
            converged = True
            break
        if breakdown:
            break
    return IterationReport(x, j + 1, converged, hist, wall_time=time.perf_counter() - t0,
                           method="gmres", metadata=meta)


def _back_substitute(R, g):
    k = g.size
    y = np.zeros(k)
    for i in range(k - 1, -1, -1):
        y[i] = (g[i] - R[i, i + 1:] @ y[i + 1:]) / R[i, i] if R[i, i] != 0.0 else 0.0
    return y


def stationary_solve(A, b, precond, tol: float = 1e-6, x_star=None,
                     max_iter: int = 500) -> IterationReport:
    """Iterate ``x_{k+1} = x_k + M^-1 (b - A x_k)`` from ``x_0 = 0``.

    With ``x_star`` the stopping test is ``||x_k - x*|| / ||x_0 - x*|| <= tol``,
    otherwise the relative residual. When the monitored ratio exceeds
    ``1e6`` the iteration stops and the report is flagged ``diverged``.
    """
    t0 = time.perf_counter()
    Aop, Minv = as_operator(A), as_operator(precond)
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros(b.shape[0])
    bnorm = float(np.linalg.norm(b)) or 1.0
    r = b.copy()
    hist = [float(np.linalg.norm(r)) / bnorm]
    errs = []
    if x_star is not None:
        x_star = np.asarray(x_star, dtype=np.float64)
        e0 = float(np.linalg.norm(x_star)) or 1.0
        errs.append(1.0 if np.any(x_star) else 0.0)
    monitor = errs if x_star is not None else hist
    converged = monitor[-1] <= tol
    diverged = False
    k = 0
    while not converged and k < max_iter:
        x += Minv(r)
        k += 1
        r = b - Aop(x)
        hist.append(float(np.linalg.norm(r)) / bnorm)
        if x_star is not None:
            errs.append(float(np.linalg.norm(x - x_star)) / e0)
        if monitor[-1] <= tol:
            converged = True
        elif not np.isfinite(monitor[-1]) or monitor[-1] > DIVERGENCE_RATIO:
            diverged = True
            break
    meta = {"criterion": "relative error" if x_star is not None else "relative residual",
            "tol": tol}
    return IterationReport(x, k, converged, hist, errs, diverged,
                           time.perf_counter() - t0, "stationary", meta)
