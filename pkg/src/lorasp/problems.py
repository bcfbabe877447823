"""Finite-difference Poisson test problems and MatrixMarket I/O.

Matrices are the h^2-scaled central-difference stencil on the unit cube with
``k`` interior points per axis and homogeneous Dirichlet boundary values
eliminated: a constant unit coefficient gives diagonal ``2 * dim`` and ``-1``
couplings. Variable coefficients live on grid edges (one value per face
between two points, boundary faces included), so row ``i`` has ``-alpha_e``
off the diagonal and ``sum(alpha_e)`` on it.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import MatrixMarketError, UnsupportedError
from .sparse import SparseSymMatrix

__all__ = [
    "GridSpec",
    "poisson_matrix",
    "poisson_eigenvalues",
    "smallest_eigenvector",
    "parse_problem",
    "load_problem",
    "Problem",
    "random_rhs",
    "read_matrix_market",
    "write_matrix_market",
]

COEFFS = ("constant", "piecewise", "random")
PIECEWISE_INNER = 1e-5


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid with ``k`` interior points along each of ``dim`` axes.

    ``coeff`` is ``constant`` (value ``alpha``), ``piecewise`` (``1e-5`` on
    ``[1/4, 3/4]^dim``, ``1`` elsewhere, sampled at edge midpoints) or
    ``random`` (independent uniform ``[0, 1]`` per edge, drawn from ``seed``).
    """

    dim: int = 2
    k: int = 32
    coeff: str = "constant"
    alpha: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")
        if self.coeff not in COEFFS:
            raise ValueError(f"unknown coefficient kind {self.coeff!r}")
        if self.coeff == "constant" and not self.alpha > 0:
            raise ValueError("alpha must be positive")

    @property
    def n(self) -> int:
        return self.k ** self.dim

    @property
    def h(self) -> float:
        return 1.0 / (self.k + 1)

    def name(self) -> str:
        s = f"poisson{self.dim}d:k={self.k}"
        if self.coeff != "constant":
            s += f":coeff={self.coeff}"
        elif self.alpha != 1.0:
            s += f":alpha={self.alpha:g}"
        if self.coeff == "random":
            s += f":seed={self.seed}"
        return s


def _edge_coefficients(spec: GridSpec):
    """Per-axis edge coefficient arrays; axis ``a`` has length ``k+1`` on ``a``."""
    k, d = spec.k, spec.dim
    rng = np.random.default_rng(spec.seed) if spec.coeff == "random" else None
    out = []
    for a in range(d):
        shape = tuple(k + 1 if b == a else k for b in range(d))
        if spec.coeff == "constant":
            out.append(np.full(shape, float(spec.alpha)))
        elif spec.coeff == "random":
            out.append(rng.uniform(0.0, 1.0, size=shape))
        else:
            mids = []
            for b in range(d):
                if b == a:
                    g = (np.arange(k + 1) + 0.5) * spec.h
                else:
                    g = (np.arange(k) + 1.0) * spec.h
                mids.append(g)
            grids = np.meshgrid(*mids, indexing="ij")
            inside = np.ones(shape, dtype=bool)
            for g in grids:
                inside &= (g >= 0.25) & (g <= 0.75)
            out.append(np.where(inside, PIECEWISE_INNER, 1.0))
    return out


def grid_coordinates(spec: GridSpec) -> np.ndarray:
    """``n x dim`` coordinates of the unknowns in natural (C) order."""
    g = (np.arange(spec.k) + 1.0) * spec.h
    grids = np.meshgrid(*([g] * spec.dim), indexing="ij")
    return np.column_stack([x.ravel() for x in grids])


def poisson_matrix(spec: GridSpec):
    """Return ``(A, coords)`` for the grid problem ``spec``."""
    k, d = spec.k, spec.dim
    idx = np.arange(spec.n).reshape((k,) * d)
    diag = np.zeros((k,) * d)
    rows, cols, vals = [], [], []
    for a, alpha in enumerate(_edge_coefficients(spec)):
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[a] = slice(0, k)
        hi[a] = slice(1, k + 1)
        diag += alpha[tuple(lo)] + alpha[tuple(hi)]
        # interior edges j = 1..k-1 join points j-1 and j
        inner = [slice(None)] * d
        inner[a] = slice(1, k)
        left = [slice(None)] * d
        right = [slice(None)] * d
        left[a] = slice(0, k - 1)
        right[a] = slice(1, k)
        w = alpha[tuple(inner)].ravel()
        i, j = idx[tuple(left)].ravel(), idx[tuple(right)].ravel()
        rows += [i, j]
        cols += [j, i]
        vals += [-w, -w]
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(diag.ravel())
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(spec.n, spec.n))
    return SparseSymMatrix(A, check=False), grid_coordinates(spec)


def poisson_eigenvalues(spec: GridSpec) -> np.ndarray:
    """Sorted eigenvalues of the constant-coefficient matrix."""
    if spec.coeff != "constant":
        raise UnsupportedError("closed-form eigenvalues need a constant coefficient")
    lam1 = 2.0 - 2.0 * np.cos(np.arange(1, spec.k + 1) * np.pi * spec.h)
    total = np.zeros(1)
    for _ in range(spec.dim):
        total = np.add.outer(total, lam1).ravel()
    return np.sort(total * spec.alpha)


def smallest_eigenvector(spec: GridSpec, A: SparseSymMatrix | None = None) -> np.ndarray:
    """Unit-norm eigenvector of the smallest eigenvalue.

    Closed form ``prod sin(pi x_a)`` for constant coefficients; a dense
    symmetric eigensolver otherwise, limited to ``n <= 4096``.
    """
    if spec.coeff == "constant":
        v = np.prod(np.sin(np.pi * grid_coordinates(spec)), axis=1)
        return v / np.linalg.norm(v)
    if spec.n > 4096:
        raise UnsupportedError(
            f"dense eigenvector needs n <= 4096 for variable coefficients, got {spec.n}")
    if A is None:
        A, _ = poisson_matrix(spec)
    w, V = np.linalg.eigh(A.toarray())
    v = V[:, 0]
    return v * np.sign(v.sum()) / np.linalg.norm(v)


def random_rhs(A, seed: int = 0):
    """``(b, x_star)`` with ``x_star`` uniform in ``[-1, 1]`` and ``b = A x_star``."""
    x = np.random.default_rng(seed).uniform(-1.0, 1.0, A.shape[0])
    return A @ x, x


# ---------------------------------------------------------------------------
# problem strings


@dataclass
class Problem:
    """A loaded test problem. ``spec`` and ``coords`` are None for files."""

    name: str
    A: SparseSymMatrix
    coords: np.ndarray | None = None
    spec: GridSpec | None = None
    path: str | None = None

    @property
    def n(self) -> int:
        return self.A.n

    @property
    def h(self) -> float | None:
        return self.spec.h if self.spec is not None else None

    def eigenvector(self) -> np.ndarray:
        if self.spec is None:
            if self.n > 4096:
                raise UnsupportedError("dense eigenvector needs n <= 4096")
            return np.linalg.eigh(self.A.toarray())[1][:, 0]
        return smallest_eigenvector(self.spec, self.A)


_GRID_RE = re.compile(r"poisson([123])d$")


def parse_problem(text: str):
    """Parse a problem string into a :class:`GridSpec` or a file path.

    Grammar: ``poisson{1,2,3}d[:key=value]...`` with keys ``k``, ``coeff``,
    ``alpha`` and ``seed``, or ``mm:<path>`` for a MatrixMarket file.
    """
    text = text.strip()
    if text.startswith("mm:"):
        path = text[3:]
        if not path:
            raise ValueError("mm: problem needs a file path")
        return path
    head, *fields = text.split(":")
    m = _GRID_RE.match(head)
    if not m:
        raise ValueError(f"unknown problem {head!r}; expected poisson2d, poisson3d or mm:<path>")
    kw = {"dim": int(m.group(1))}
    for f in fields:
        if "=" not in f:
            raise ValueError(f"malformed problem field {f!r}; expected key=value")
        key, val = f.split("=", 1)
        if key in ("k", "seed"):
            kw[key] = int(val)
        elif key == "alpha":
            kw[key] = float(val)
        elif key == "coeff":
            kw[key] = val
        else:
            raise ValueError(f"unknown problem field {key!r}")
    return GridSpec(**kw)


def load_problem(text: str) -> Problem:
    parsed = parse_problem(text)
    if isinstance(parsed, str):
        return Problem(text, read_matrix_market(parsed), path=parsed)
    A, coords = poisson_matrix(parsed)
    return Problem(parsed.name(), A, coords, parsed)


# ---------------------------------------------------------------------------
# MatrixMarket


def write_matrix_market(A, path) -> None:
    """Write the lower triangle in ``coordinate real symmetric`` format."""
    csr = A.csr if isinstance(A, SparseSymMatrix) else sp.csr_matrix(A)
    low = sp.tril(csr).tocoo()
    order = np.lexsort((low.row, low.col))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("%%MatrixMarket matrix coordinate real symmetric\n")
        fh.write(f"{csr.shape[0]} {csr.shape[1]} {low.nnz}\n")
        for i, j, v in zip(low.row[order], low.col[order], low.data[order]):
            fh.write(f"{i + 1} {j + 1} {v:.17g}\n")


def read_matrix_market(path) -> SparseSymMatrix:
    """Read a ``coordinate real symmetric`` file, mirroring the lower triangle."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MatrixMarketError("empty file", 1)
    head = lines[0].split()
    if len(head) != 5 or head[0] != "%%MatrixMarket":
        raise MatrixMarketError("missing %%MatrixMarket header", 1)
    obj, fmt, field, sym = (h.lower() for h in head[1:])
    if obj != "matrix" or fmt != "coordinate":
        raise MatrixMarketError(f"unsupported format {obj} {fmt}", 1)
    if field not in ("real", "integer", "double"):
        raise MatrixMarketError(f"unsupported field {field!r}", 1)
    if sym != "symmetric":
        raise MatrixMarketError(f"only symmetric matrices are supported, got {sym!r}", 1)
    lineno = 1
    size = None
    rows, cols, vals = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        s = line.strip()
        if not s or s.startswith("%"):
            continue
        parts = s.split()
        if size is None:
            try:
                m, n, nnz = (int(p) for p in parts)
            except ValueError:
                raise MatrixMarketError("bad size line", lineno) from None
            if m != n or m < 0 or nnz < 0:
                raise MatrixMarketError(f"matrix must be square, got {m} x {n}", lineno)
            size = (n, nnz)
            continue
        if len(parts) != 3:
            raise MatrixMarketError("expected 'row col value'", lineno)
        try:
            i, j, v = int(parts[0]) - 1, int(parts[1]) - 1, float(parts[2])
        except ValueError:
            raise MatrixMarketError("bad entry", lineno) from None
        if not (0 <= j <= i < size[0]):
            raise MatrixMarketError(
                f"entry ({i + 1}, {j + 1}) is outside the lower triangle", lineno)
        rows.append(i)
        cols.append(j)
        vals.append(v)
    if size is None:
        raise MatrixMarketError("missing size line", lineno)
    n, nnz = size
    if len(vals) != nnz:
        raise MatrixMarketError(f"expected {nnz} entries, found {len(vals)}", lineno)
    r, c, v = np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64), np.array(vals)
    off = r != c
    L = sp.coo_matrix((np.r_[v, v[off]], (np.r_[r, c[off]], np.r_[c, r[off]])), shape=(n, n))
    return SparseSymMatrix(L.tocsr())
