"""Solve phase: apply the approximate inverse ``H^-1`` of a factorization.

The forward and backward sweeps run in the compiled ``_kernels`` extension
when it is importable, otherwise in the numpy fallback ``_sweep``. Set the
environment variable ``LORASP_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator

from . import _sweep

__all__ = ["apply_inverse", "as_linear_operator", "BACKEND", "get_backend"]

_kernels = None
if os.environ.get("LORASP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels
    except ImportError:  # pragma: no cover - depends on the build
        _kernels = None

BACKEND = "compiled" if _kernels is not None else "python"


def get_backend(name: str | None = None):
    """Sweep module for ``name`` in {"compiled", "python", None (default)}."""
    if name is None:
        name = BACKEND
    if name == "compiled":
        if _kernels is None:
            raise ImportError("compiled kernels are not available")
        return _kernels
    if name == "python":
        return _sweep
    raise ValueError(f"unknown backend {name!r}")


def apply_inverse(fac, b, backend: str | None = None) -> np.ndarray:
    """Return ``H^-1 b`` for a vector or an ``n x p`` block of vectors.

    The result is exact (up to roundoff) when every compression was exact.
    """
    b = np.asarray(b, dtype=np.float64)
    vec = b.ndim == 1
    B = b.reshape(b.shape[0], -1)
    if B.shape[0] != fac.n:
        raise ValueError(f"dimension mismatch: factorization is {fac.n}, rhs is {B.shape[0]}")
    sweep = get_backend(backend)
    f = fac.flat
    x = np.zeros((fac.total, B.shape[1]))
    x[:fac.n] = B[fac.perm]
    args = (f.s_off, f.s_len, f.r_off, f.rank, f.nptr, f.nidx, f.doff, f.data)
    sweep.forward(*args, x)
    r0 = fac.root_off
    if fac.root_size:
        x[r0:] = sla.cho_solve((fac.root_factor, True), x[r0:], check_finite=False)
    sweep.backward(*args, x)
    out = np.empty_like(B)
    out[fac.perm] = x[:fac.n]
    return out[:, 0] if vec else out


def as_linear_operator(fac, backend: str | None = None) -> LinearOperator:
    """``H^-1`` as a scipy :class:`~scipy.sparse.linalg.LinearOperator`."""
    n = fac.n
    return LinearOperator((n, n), matvec=lambda v: apply_inverse(fac, v, backend),
                          matmat=lambda V: apply_inverse(fac, V, backend), dtype=np.float64)
