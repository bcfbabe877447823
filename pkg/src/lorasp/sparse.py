"""Symmetric sparse matrix storage, cluster partitions and block graphs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvalidPartitionError

__all__ = [
    "SparseSymMatrix",
    "ClusterPartition",
    "BlockGraph",
    "build_block_graph",
    "extract_block",
    "spmv",
    "residual_norm",
]


class SparseSymMatrix:
    """Symmetric sparse matrix in compressed-row form, both triangles stored.

    The object is immutable after construction. Use :meth:`from_scipy` or
    :meth:`from_triplets` to build one; both mirror nothing, they expect the
    full pattern. :func:`lorasp.problems.read_matrix_market` mirrors the
    lower triangle of a file.
    """

    symmetric_full_storage = True

    def __init__(self, csr: sp.csr_matrix, check: bool = True):
        csr = sp.csr_matrix(csr, dtype=np.float64)
        csr.sum_duplicates()
        csr.sort_indices()
        if csr.shape[0] != csr.shape[1]:
            raise ValueError(f"matrix must be square, got {csr.shape}")
        if check:
            _check_structure(csr)
        for arr in (csr.data, csr.indices, csr.indptr):
            arr.setflags(write=False)
        self._csr = csr

    @classmethod
    def from_scipy(cls, A, check: bool = True) -> "SparseSymMatrix":
        return cls(sp.csr_matrix(A), check=check)

    @classmethod
    def from_triplets(cls, n, rows, cols, vals, check: bool = True):
        coo = sp.coo_matrix((vals, (rows, cols)), shape=(n, n))
        return cls(coo.tocsr(), check=check)

    @property
    def n(self) -> int:
        return self._csr.shape[0]

    @property
    def shape(self):
        return self._csr.shape

    @property
    def nnz(self) -> int:
        return self._csr.nnz

    @property
    def row_offsets(self) -> np.ndarray:
        return self._csr.indptr

    @property
    def col_indices(self) -> np.ndarray:
        return self._csr.indices

    @property
    def values(self) -> np.ndarray:
        return self._csr.data

    @property
    def csr(self) -> sp.csr_matrix:
        """Read-only view as a scipy CSR matrix."""
        return self._csr

    def diagonal(self) -> np.ndarray:
        return self._csr.diagonal()

    def toarray(self) -> np.ndarray:
        return self._csr.toarray()

    def matvec(self, x):
        return spmv(self, x)

    def __matmul__(self, x):
        return spmv(self, x)

    def permuted(self, perm) -> "SparseSymMatrix":
        """Return ``A[perm][:, perm]``."""
        perm = np.asarray(perm)
        return SparseSymMatrix(self._csr[perm][:, perm], check=False)

    def __repr__(self):
        return f"SparseSymMatrix(n={self.n}, nnz={self.nnz})"


def _check_structure(csr):
    n = csr.shape[0]
    coo = csr.tocoo()
    if n and np.any(csr.diagonal() == 0):
        # diagonal entries must be present; an explicit zero is not enough
        diag_present = np.zeros(n, dtype=bool)
        diag_present[coo.row[coo.row == coo.col]] = True
        missing = np.flatnonzero(~diag_present)
        if missing.size:
            raise ValueError(f"missing diagonal entry in row {missing[0]}")
    t = csr.T.tocsr()
    t.sort_indices()
    if not (np.array_equal(t.indptr, csr.indptr) and np.array_equal(t.indices, csr.indices)):
        raise ValueError("matrix is not structurally symmetric")
    scale = np.abs(csr.data).max() if csr.nnz else 0.0
    if csr.nnz and np.abs(t.data - csr.data).max() > 1e-12 * scale:
        raise ValueError("matrix values are not symmetric")


@dataclass(frozen=True)
class ClusterPartition:
    """Disjoint clusters covering ``{0..n-1}``.

    ``cluster_of[i]`` is the cluster of index ``i``; ``members[c]`` the
    sorted indices of cluster ``c``.
    """

    cluster_of: np.ndarray
    members: tuple

    @classmethod
    def from_labels(cls, labels, num_clusters=None) -> "ClusterPartition":
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size and labels.min() < 0:
            raise InvalidPartitionError("negative cluster label")
        k = int(labels.max()) + 1 if num_clusters is None and labels.size else int(num_clusters or 0)
        order = np.argsort(labels, kind="stable")
        bounds = np.searchsorted(labels[order], np.arange(k + 1))
        members = tuple(order[bounds[c]:bounds[c + 1]] for c in range(k))
        return cls(labels, members)

    @classmethod
    def from_members(cls, members, n) -> "ClusterPartition":
        labels = np.full(n, -1, dtype=np.int64)
        for c, idx in enumerate(members):
            idx = np.asarray(idx, dtype=np.int64)
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise InvalidPartitionError(f"cluster {c} has out-of-range indices")
            if np.any(labels[idx] >= 0) or np.unique(idx).size != idx.size:
                raise InvalidPartitionError(f"cluster {c} overlaps another cluster")
            labels[idx] = c
        if np.any(labels < 0):
            raise InvalidPartitionError(
                f"partition does not cover index {int(np.flatnonzero(labels < 0)[0])}")
        return cls(labels, tuple(np.sort(np.asarray(m, dtype=np.int64)) for m in members))

    @property
    def num_clusters(self) -> int:
        return len(self.members)

    @property
    def n(self) -> int:
        return self.cluster_of.size


@dataclass(frozen=True)
class BlockGraph:
    num_clusters: int
    adjacency: tuple  # per cluster: sorted neighbor ids, self excluded

    @property
    def num_edges(self) -> int:
        return sum(len(a) for a in self.adjacency) // 2

    def neighbors(self, c) -> np.ndarray:
        return self.adjacency[c]


def block_edges(A, labels, num_clusters):
    """Unique unordered cluster pairs ``(i<j)`` joined by a structural nonzero."""
    coo = A.csr.tocoo() if isinstance(A, SparseSymMatrix) else sp.coo_matrix(A)
    ci = labels[coo.row]
    cj = labels[coo.col]
    mask = ci < cj
    keys = np.unique(ci[mask] * np.int64(num_clusters) + cj[mask])
    return keys // num_clusters, keys % num_clusters


def build_block_graph(A: SparseSymMatrix, part: ClusterPartition) -> BlockGraph:
    """Graph on clusters with an edge wherever ``A[I_i, I_j]`` has a nonzero."""
    labels = np.asarray(part.cluster_of, dtype=np.int64)
    if labels.size != A.n or (labels.size and labels.min() < 0):
        raise InvalidPartitionError(
            f"partition covers {labels.size} indices, matrix has {A.n}")
    if labels.size and labels.max() >= part.num_clusters:
        raise InvalidPartitionError("cluster label exceeds cluster count")
    k = part.num_clusters
    i, j = block_edges(A, labels, k)
    rows = np.concatenate([i, j])
    cols = np.concatenate([j, i])
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    bounds = np.searchsorted(rows, np.arange(k + 1))
    return BlockGraph(k, tuple(cols[bounds[c]:bounds[c + 1]] for c in range(k)))


def extract_block(A: SparseSymMatrix, rows, cols) -> np.ndarray:
    """Dense copy of ``A[rows, cols]``."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if rows.size == 0 or cols.size == 0:
        return np.zeros((rows.size, cols.size))
    return A.csr[rows][:, cols].toarray()


def spmv(A: SparseSymMatrix, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != A.n:
        raise ValueError(f"dimension mismatch: matrix is {A.n}, vector is {x.shape[0]}")
    return A.csr @ x


def residual_norm(A: SparseSymMatrix, x, b) -> float:
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != A.n:
        raise ValueError(f"dimension mismatch: matrix is {A.n}, rhs is {b.shape[0]}")
    return float(np.linalg.norm(b - spmv(A, x)))
