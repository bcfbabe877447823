"""Cluster hierarchy: recursive bisection into 2^L leaves and per-level
neighbor / well-separated classification.

Every node of the bisection tree owns a contiguous range of the leaf
permutation ``perm``. A red node at level ``l`` (leaves are at level ``L``,
the root at level 0) is tree node ``j`` at depth ``l``; the super node ``i``
at level ``l`` is the union of red nodes ``2i`` and ``2i+1``, i.e. tree node
``i`` at depth ``l-1``. The parent red node produced by eliminating that
super node inherits its index set, so super nodes and parent red nodes of the
same level are classified with one relation.
"""
from __future__ import annotations

import json
import math

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

from .errors import DepthTooLargeError, StructureError
from .sparse import ClusterPartition, SparseSymMatrix, block_edges

__all__ = [
    "ClusterHierarchy",
    "Bisection",
    "recursive_bisection",
    "default_depth",
    "merge_pairs",
    "classify_interactions",
    "build_hierarchy",
]

PREDICATES = ("graph", "geometric")


def default_depth(n: int, leaf_size: int = 8) -> int:
    """Largest ``L`` with ``n / 2**L >= leaf_size`` (0 if none)."""
    if leaf_size < 1:
        raise ValueError("leaf_size must be >= 1")
    if n < 2 * leaf_size:
        return 0
    return int(math.floor(math.log2(n / leaf_size) + 1e-12))


class Bisection:
    """Leaf ordering produced by :func:`recursive_bisection`.

    ``perm[leaf_ptr[j]:leaf_ptr[j+1]]`` are the original indices of leaf
    ``j``; leaves are in tree (depth-first) order so siblings are adjacent.
    """

    def __init__(self, perm, leaf_ptr, depth):
        self.perm = np.asarray(perm, dtype=np.int64)
        self.leaf_ptr = np.asarray(leaf_ptr, dtype=np.int64)
        self.depth = int(depth)

    @property
    def num_leaves(self):
        return self.leaf_ptr.size - 1

    def partition(self) -> ClusterPartition:
        n = self.perm.size
        labels = np.empty(n, dtype=np.int64)
        labels[self.perm] = np.repeat(np.arange(self.num_leaves), np.diff(self.leaf_ptr))
        return ClusterPartition.from_labels(labels, self.num_leaves)


def _split_coords(idx, coords):
    pts = coords[idx]
    extent = pts.max(axis=0) - pts.min(axis=0)
    axis = int(np.argmax(extent))  # first longest axis on ties
    keys = [pts[:, a] for a in range(pts.shape[1]) if a != axis][::-1] + [pts[:, axis]]
    order = np.lexsort(keys)
    half = idx.size // 2
    return idx[order[:half]], idx[order[half:]]


def _bfs_order(adj):
    """Level-set ordering of a (possibly disconnected) graph."""
    m = adj.shape[0]
    ncomp, comp = csgraph.connected_components(adj, directed=False)
    degree = np.diff(adj.indptr)
    out = []
    for c in range(ncomp):
        nodes = np.flatnonzero(comp == c)
        start = nodes[np.argmin(degree[nodes])]
        # two sweeps to find a pseudo-peripheral start vertex
        for _ in range(2):
            order = csgraph.breadth_first_order(adj, start, directed=False,
                                                return_predecessors=False)
            start = order[-1]
        order = csgraph.breadth_first_order(adj, start, directed=False,
                                            return_predecessors=False)
        out.append(order)
    return np.concatenate(out) if out else np.zeros(m, dtype=np.int64)


def _split_graph(idx, csr):
    sub = csr[idx][:, idx]
    order = _bfs_order(sub)
    half = idx.size // 2
    return idx[order[:half]], idx[order[half:]]


def recursive_bisection(graph_or_grid, target_depth: int, coords=None) -> Bisection:
    """Split the unknowns into ``2**target_depth`` leaves by repeated halving.

    With ``coords`` (an ``n x dim`` array) each cluster is cut across its
    longest bounding-box axis at the median; otherwise the sparsity graph of
    ``graph_or_grid`` is cut in half along a breadth-first level-set order.
    """
    if isinstance(graph_or_grid, SparseSymMatrix):
        csr = graph_or_grid.csr
    elif graph_or_grid is None:
        csr = None
    else:
        csr = sp.csr_matrix(graph_or_grid)
    n = csr.shape[0] if csr is not None else np.asarray(coords).shape[0]
    if target_depth < 0:
        raise ValueError("target_depth must be >= 0")
    if n < 2 ** target_depth:
        raise DepthTooLargeError(f"{n} unknowns cannot fill {2 ** target_depth} leaves")
    if coords is not None:
        coords = np.asarray(coords, dtype=np.float64)
        if coords.ndim == 1:
            coords = coords[:, None]
        split = lambda idx: _split_coords(idx, coords)  # noqa: E731
    else:
        split = lambda idx: _split_graph(idx, csr)  # noqa: E731

    clusters = [np.arange(n, dtype=np.int64)]
    for _ in range(target_depth):
        nxt = []
        for idx in clusters:
            nxt.extend(split(idx))
        clusters = nxt
    sizes = np.array([c.size for c in clusters], dtype=np.int64)
    leaf_ptr = np.concatenate([[0], np.cumsum(sizes)])
    return Bisection(np.concatenate(clusters), leaf_ptr, target_depth)


def merge_pairs(red_nodes):
    """Pair sibling red nodes ``(2i, 2i+1)`` into super nodes."""
    red_nodes = list(red_nodes)
    if len(red_nodes) % 2:
        raise StructureError(f"cannot pair {len(red_nodes)} red nodes")
    return [(red_nodes[2 * i], red_nodes[2 * i + 1]) for i in range(len(red_nodes) // 2)]


def _boxes_separated(lo, hi, i, j):
    """Vectorised geometric predicate: gap distance exceeds cluster size."""
    gap = np.maximum(0.0, np.maximum(lo[j] - hi[i], lo[i] - hi[j]))
    dist = np.sqrt((gap * gap).sum(axis=-1))
    size = np.maximum((hi[i] - lo[i]).max(axis=-1), (hi[j] - lo[j]).max(axis=-1))
    return dist > size


def classify_interactions(node, active_nodes, is_neighbor):
    """Split ``active_nodes`` (excluding ``node``) by the neighbor predicate.

    ``is_neighbor(a, b) -> bool`` is typically
    :meth:`ClusterHierarchy.is_neighbor` bound to a level.
    """
    nbrs, ws = [], []
    for other in active_nodes:
        if other == node:
            continue
        (nbrs if is_neighbor(node, other) else ws).append(other)
    return nbrs, ws


class ClusterHierarchy:
    """Bisection tree plus the frozen neighbor relation for every level.

    Parameters
    ----------
    A : SparseSymMatrix
    depth : int
        Number of levels ``L``; there are ``2**L`` leaf red nodes.
    coords : array, optional
        Per-unknown coordinates. Needed for the geometric predicate and used
        for the bisection when given.
    predicate : {"graph", "geometric"}
        ``graph`` calls two clusters neighbors when ``A`` couples them;
        ``geometric`` additionally calls them neighbors when their
        bounding-box gap does not exceed the larger cluster extent.
    """

    def __init__(self, A: SparseSymMatrix, depth: int, coords=None, predicate="graph",
                 bisection: Bisection | None = None):
        if predicate not in PREDICATES:
            raise ValueError(f"unknown predicate {predicate!r}")
        if predicate == "geometric" and coords is None:
            raise ValueError("geometric predicate needs coordinates")
        self.n = A.n
        self.depth = int(depth)
        self.predicate = predicate
        self.coords = None if coords is None else np.asarray(coords, dtype=np.float64).reshape(A.n, -1)
        bis = bisection or recursive_bisection(A, self.depth, coords=self.coords)
        if bis.depth != self.depth:
            raise StructureError("bisection depth mismatch")
        self.perm = bis.perm
        self.leaf_ptr = bis.leaf_ptr
        self._build_relations(A)

    # index sets ---------------------------------------------------------

    def node_range(self, depth: int, j: int):
        """``(start, stop)`` into :attr:`perm` for tree node ``j`` at ``depth``."""
        shift = self.depth - depth
        return int(self.leaf_ptr[j << shift]), int(self.leaf_ptr[(j + 1) << shift])

    def node_ptr(self, depth: int) -> np.ndarray:
        return self.leaf_ptr[:: 1 << (self.depth - depth)]

    def members(self, depth: int, j: int) -> np.ndarray:
        a, b = self.node_range(depth, j)
        return np.sort(self.perm[a:b])

    def partition(self, depth=None) -> ClusterPartition:
        depth = self.depth if depth is None else depth
        ptr = self.node_ptr(depth)
        labels = np.empty(self.n, dtype=np.int64)
        labels[self.perm] = np.repeat(np.arange(ptr.size - 1), np.diff(ptr))
        return ClusterPartition.from_labels(labels, ptr.size - 1)

    def num_super_nodes(self, level: int) -> int:
        return 1 << (level - 1)

    def max_cluster_size(self, level: int) -> int:
        """Largest red-node size (original unknowns) at ``level``."""
        return int(np.diff(self.node_ptr(level)).max())

    # relations ----------------------------------------------------------

    def _build_relations(self, A):
        self._nbrs = {}
        boxes = None
        if self.coords is not None and self.predicate == "geometric":
            pts = self.coords[self.perm]
            starts = self.leaf_ptr[:-1]
            lo = np.minimum.reduceat(pts, starts, axis=0)
            hi = np.maximum.reduceat(pts, starts, axis=0)
            boxes = {self.depth: (lo, hi)}
            for d in range(self.depth - 1, -1, -1):
                lo_c, hi_c = boxes[d + 1]
                boxes[d] = (np.minimum(lo_c[0::2], lo_c[1::2]), np.maximum(hi_c[0::2], hi_c[1::2]))
        self._boxes = boxes
        for level in range(1, self.depth + 1):
            d = level - 1
            k = 1 << d
            labels = self.partition(d).cluster_of
            i, j = block_edges(A, labels, k)
            if boxes is not None:
                gi, gj = self._geometric_pairs(*boxes[d])
                i, j = np.concatenate([i, gi]), np.concatenate([j, gj])
            keys = np.unique(i * np.int64(k) + j)
            i, j = keys // k, keys % k
            rows = np.concatenate([i, j])
            cols = np.concatenate([j, i])
            order = np.lexsort((cols, rows))
            rows, cols = rows[order], cols[order]
            ptr = np.searchsorted(rows, np.arange(k + 1))
            self._nbrs[level] = (ptr, cols, [set(cols[ptr[a]:ptr[a + 1]].tolist()) for a in range(k)])

    @staticmethod
    def _geometric_pairs(lo, hi):
        k = lo.shape[0]
        if k < 2:
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        centers = 0.5 * (lo + hi)
        ext = hi - lo
        radius = ext.max() + np.sqrt((ext ** 2).sum(axis=1)).max() + 1e-9
        pairs = cKDTree(centers).query_pairs(radius, output_type="ndarray")
        if pairs.size == 0:
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        i, j = pairs[:, 0].astype(np.int64), pairs[:, 1].astype(np.int64)
        near = ~_boxes_separated(lo, hi, i, j)
        i, j = i[near], j[near]
        return np.minimum(i, j), np.maximum(i, j)

    def neighbors(self, level: int, j: int) -> np.ndarray:
        """Sorted neighbor ids of super node ``j`` at ``level`` (self excluded)."""
        ptr, cols, _ = self._nbrs[level]
        return cols[ptr[j]:ptr[j + 1]]

    def neighbor_sets(self, level: int):
        return self._nbrs[level][2]

    def is_neighbor(self, level: int, a: int, b: int) -> bool:
        return b in self._nbrs[level][2][a]

    def well_separated(self, level: int, j: int) -> np.ndarray:
        """All other super-node ids at ``level`` that are not neighbors of ``j``."""
        k = self.num_super_nodes(level)
        mask = np.ones(k, dtype=bool)
        mask[j] = False
        mask[self.neighbors(level, j)] = False
        return np.flatnonzero(mask)

    def classify(self, level: int, j: int, active):
        return classify_interactions(j, active, lambda a, b: self.is_neighbor(level, a, b))

    # reporting ----------------------------------------------------------

    def size_ratios(self):
        """``d_l / d_{l+1}`` for the original cluster sizes, l = 0..L-1."""
        return [self.max_cluster_size(l) / self.max_cluster_size(l + 1) for l in range(self.depth)]

    def to_dict(self):
        levels = []
        for level in range(self.depth, 0, -1):
            k = self.num_super_nodes(level)
            ptr = self.node_ptr(level - 1)
            levels.append({
                "level": level,
                "super_nodes": [
                    {"id": j, "size": int(ptr[j + 1] - ptr[j]),
                     "neighbors": self.neighbors(level, j).tolist()}
                    for j in range(k)
                ],
            })
        return {"n": self.n, "depth": self.depth, "predicate": self.predicate,
                "leaf_sizes": np.diff(self.leaf_ptr).tolist(), "levels": levels}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def build_hierarchy(A: SparseSymMatrix, leaf_size: int = 8, depth=None, coords=None,
                    predicate=None) -> ClusterHierarchy:
    """Hierarchy with the default depth for ``leaf_size``.

    The predicate defaults to ``geometric`` when coordinates are available.
    """
    if depth is None:
        depth = default_depth(A.n, leaf_size)
    if predicate is None:
        predicate = "geometric" if coords is not None else "graph"
    return ClusterHierarchy(A, depth, coords=coords, predicate=predicate)
