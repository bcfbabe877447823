"""Setup phase: compress, extend and eliminate every super node, level by level.

The active system of a level is kept as a map of dense blocks,
``blk[a][b]`` holding the rows of node ``a`` against the columns of node
``b``. The mirrored entry ``blk[b][a]`` is a transpose *view* of the same
memory, so in-place Schur updates keep the system exactly symmetric.

Node ids within a level: super nodes ``0..N-1``, the parent red node created
by eliminating super node ``i`` gets id ``N + i``.

The quantities needed by the solve phase are packed into a flat layout over a
single global work vector: the leaf level occupies ``[0, n)`` in bisection
order, followed by each parent level's red nodes, down to the root.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import dense
from .errors import NotSPDError, ResourceError, StructureError
from .hierarchy import ClusterHierarchy, build_hierarchy
from .sparse import SparseSymMatrix

__all__ = [
    "SolverConfig",
    "NodeFactor",
    "HFactorization",
    "PreservedVectorSet",
    "factorize",
    "eps_for_level",
    "compress_step",
    "eliminate_step",
    "extend_step",
    "propagate_preserved",
    "MODES",
    "SCHEDULES",
]

log = logging.getLogger(__name__)

MODES = ("lorasp", "gc-constant", "gc-eigenvector", "gc-user")
SCHEDULES = ("constant", "leaf", "root")
_SCHEDULE_ALIASES = {"const": "constant", "leaf-anchored": "leaf", "root-anchored": "root"}
PRESERVATION = ("exact", "one-sided", "symmetric-first", "symmetric-second")
_PRESERVATION_ALIASES = {"approximate": "symmetric-second"}


@dataclass
class SolverConfig:
    """Configuration of one factorization.

    ``eps_schedule``: ``constant`` uses ``eps`` on every level; ``leaf``
    uses ``eps * 2**((l - l_max)/3)``; ``root`` uses
    ``eps * h * 2**((l_max - l)/3)`` and needs the mesh width ``h``.
    ``preservation`` other than ``exact`` selects an approximate two-stage
    projection (``eps1`` is its first-stage tolerance).
    """

    eps: float = 0.1
    eps_schedule: str = "constant"
    leaf_size: int = 8
    mode: str = "lorasp"
    predicate: str | None = None
    preservation: str = "exact"
    eps1: float = 0.01
    tol_mode: str = "relative"
    h: float | None = None
    max_factor_entries: int | None = None

    def __post_init__(self):
        self.eps_schedule = _SCHEDULE_ALIASES.get(self.eps_schedule, self.eps_schedule)
        self.preservation = _PRESERVATION_ALIASES.get(self.preservation, self.preservation)
        if not (0.0 <= self.eps < 1.0) and self.tol_mode == "relative":
            raise ValueError(f"eps must lie in [0, 1), got {self.eps}")
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        if self.leaf_size < 1:
            raise ValueError("leaf_size must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.eps_schedule not in SCHEDULES:
            raise ValueError(f"unknown eps schedule {self.eps_schedule!r}")
        if self.preservation not in PRESERVATION:
            raise ValueError(f"unknown preservation style {self.preservation!r}")
        if self.tol_mode not in ("relative", "absolute-fro"):
            raise ValueError(f"unknown tolerance mode {self.tol_mode!r}")

    @property
    def preserves(self) -> bool:
        return self.mode != "lorasp"


def eps_for_level(cfg: SolverConfig, l: int, l_max: int, h: float | None = None) -> float:
    """Compression tolerance for super nodes built from level-``l`` red nodes."""
    if cfg.eps_schedule == "constant":
        return cfg.eps
    if cfg.eps_schedule == "leaf":
        return cfg.eps * _third_power(l - l_max)
    h = cfg.h if h is None else h
    if h is None:
        raise ValueError("root-anchored schedule needs the mesh width h")
    return cfg.eps * h * _third_power(l_max - l)


def _third_power(p: int) -> float:
    # 2**(p/3) with whole octaves split off, so that three levels halve exactly
    q, r = divmod(int(p), 3)
    return math.ldexp(2.0 ** (r / 3.0), q)


# ---------------------------------------------------------------------------
# per-node steps


def compress_step(A_sw, eps_l, phi_s=None, phi_w=None, cfg: SolverConfig | None = None):
    """Low-rank factor of the well-separated block ``A_sw``.

    Without preserved vectors this is a plain truncated SVD. With them, the
    basis contains ``phi_s`` and ``A_sw @ phi_w`` so that
    ``A_sw phi_w = U Rt phi_w`` and ``A_ws phi_s = Rt^T U^T phi_s`` hold.
    Returns a :class:`~lorasp.dense.LowRankFactor` with ``Rt = U^T A_sw``.
    """
    A_sw = np.asarray(A_sw, dtype=np.float64)
    ds, dw = A_sw.shape
    tol_mode = cfg.tol_mode if cfg is not None else "relative"
    style = cfg.preservation if cfg is not None else "exact"
    if ds == 0 or dw == 0 or not A_sw.any():
        return dense.LowRankFactor(np.zeros((ds, 0)), np.zeros((0, dw)), 0.0, 0.0)
    if phi_s is None:
        if tol_mode == "absolute-fro":
            return dense.truncated_svd(A_sw, eps_l, mode="absolute-fro")
        return dense.truncated_svd(A_sw, eps_l)
    if style == "exact":
        return dense.preserving_compress(A_sw, phi_s, A_sw @ phi_w, eps_l)
    eps1 = min(cfg.eps1, eps_l)
    res = dense.PROJECTIONS[style](A_sw.T, phi_s, phi_w, eps1, eps_l)
    f = res.factor()
    err = float(np.linalg.norm(A_sw - f.U @ f.Rt, 2))
    return dense.LowRankFactor(f.U, f.Rt, err, float(np.linalg.norm(A_sw, 2)))


@dataclass
class _Elimination:
    L: np.ndarray       # Cholesky factor of A_ss
    LS: np.ndarray      # Cholesky factor of S = U^T A_ss^-1 U
    Q: np.ndarray       # A_ss^-1 U
    update: np.ndarray  # -A_ns M_ss A_sn, to be added to A_nn
    Rn: np.ndarray      # S^-1 U^T A_ss^-1 A_sn (parent row, neighbor columns)
    Sinv: np.ndarray    # parent red diagonal block


def eliminate_step(A_ss, A_sn, U, where=None) -> _Elimination:
    """Eliminate a super node and its black node.

    With ``T = L^-1 [A_sn, U] = [Y, V]`` and ``S = V^T V``, the neighbor update
    is ``-Y^T (I - V S^-1 V^T) Y``, computed as ``-Yp^T Yp`` with the
    projected ``Yp`` so it stays symmetric negative semidefinite.
    """
    ds = A_ss.shape[0]
    m = A_sn.shape[1]
    k = U.shape[1]
    Lf = dense.spd_factor(A_ss, where).L
    if ds == 0:
        return _Elimination(Lf, np.zeros((0, 0)), np.zeros((0, 0)), np.zeros((m, m)),
                            np.zeros((0, m)), np.zeros((0, 0)))
    T = sla.solve_triangular(Lf, np.hstack([A_sn, U]), lower=True, check_finite=False)
    Y, V = T[:, :m], T[:, m:]
    if k:
        S = V.T @ V
        try:
            LS = sla.cholesky(S, lower=True, check_finite=False)
        except sla.LinAlgError:
            raise NotSPDError("S = U^T A_ss^-1 U is not SPD", where) from None
        Vo = sla.solve_triangular(LS, V.T, lower=True, check_finite=False).T
        C = Vo.T @ Y
        Yp = Y - Vo @ C
        Rn = sla.solve_triangular(LS, C, lower=True, trans="T", check_finite=False)
        Linv = sla.solve_triangular(LS, np.eye(k), lower=True, check_finite=False)
        Sinv = Linv.T @ Linv
        Q = sla.solve_triangular(Lf, V, lower=True, trans="T", check_finite=False)
    else:
        LS = np.zeros((0, 0))
        Yp = Y
        Rn = np.zeros((0, m))
        Sinv = np.zeros((0, 0))
        Q = np.zeros((ds, 0))
    update = -(Yp.T @ Yp)
    return _Elimination(Lf, LS, Q, update, Rn, Sinv)


def extend_step(A, s, n, w, U, Rt):
    """Dense extended matrix of one compression: unknowns ``(x, y_b, y_r)``.

    ``A`` is the current dense system, ``s``, ``n``, ``w`` index lists and
    ``A[s, w] ~= U @ Rt``. The ``s``-``w`` coupling is removed and replaced by
    ``U`` (s-b), ``R`` (w-r) and ``-I`` (b-r). Returns the extended matrix and
    the index arrays of the black and parent red unknowns.
    """
    A = np.asarray(A, dtype=np.float64)
    nA = A.shape[0]
    s, n, w = (np.asarray(v, dtype=np.int64) for v in (s, n, w))
    k = U.shape[1]
    K = np.zeros((nA + 2 * k, nA + 2 * k))
    K[:nA, :nA] = A
    K[np.ix_(s, w)] = 0.0
    K[np.ix_(w, s)] = 0.0
    b = np.arange(nA, nA + k)
    r = np.arange(nA + k, nA + 2 * k)
    K[np.ix_(s, b)] = U
    K[np.ix_(b, s)] = U.T
    K[np.ix_(w, r)] = Rt.T
    K[np.ix_(r, w)] = Rt
    K[np.ix_(b, r)] = -np.eye(k)
    K[np.ix_(r, b)] = -np.eye(k)
    return K, b, r


def propagate_preserved(U, phi_s):
    """Segment carried by the parent red node: ``U^T phi_s``."""
    return U.T @ phi_s


# ---------------------------------------------------------------------------
# results


@dataclass
class NodeFactor:
    """Factors of one eliminated super node (views into the packed buffer)."""

    level: int
    node: int
    s_off: int
    r_off: int
    neighbors: np.ndarray  # global work-vector indices of the neighbor unknowns
    L: np.ndarray
    U: np.ndarray
    Q: np.ndarray
    LS: np.ndarray
    A_ns: np.ndarray

    @property
    def size(self):
        return self.L.shape[0]

    @property
    def rank(self):
        return self.U.shape[1]

    def apply_P(self, rhs):
        """``P_ss rhs = S^-1 U^T A_ss^-1 rhs``."""
        t = dense.spd_solve(dense.CholeskyFactor(self.L), rhs)
        return dense.spd_solve(dense.CholeskyFactor(self.LS), self.U.T @ t)

    def apply_M(self, rhs):
        """``M_ss rhs = A_ss^-1 rhs - P_ss^T S P_ss rhs``."""
        t = dense.spd_solve(dense.CholeskyFactor(self.L), rhs)
        v = dense.spd_solve(dense.CholeskyFactor(self.LS), self.U.T @ t)
        return t - self.Q @ v


@dataclass
class PreservedVectorSet:
    """Preserved-vector segments per level and red node.

    ``segments[l][j]`` is the segment of red node ``j`` at level ``l``
    (``l == depth`` is the leaf level, in bisection order).
    """

    mode: str
    segments: dict = field(default_factory=dict)


@dataclass
class FlatFactor:
    """Packed per-node data consumed by the forward/backward sweeps.

    For node ``i`` the buffer ``data`` holds, from ``doff[i]``: ``L``
    (``d*d``), ``U`` (``d*k``), ``Q`` (``d*k``), ``LS`` (``k*k``) and ``A_ns``
    (``m*d``), all row-major, with ``d = s_len[i]``, ``k = rank[i]`` and
    ``m = nptr[i+1] - nptr[i]``.
    """

    s_off: np.ndarray
    s_len: np.ndarray
    r_off: np.ndarray
    rank: np.ndarray
    nptr: np.ndarray
    nidx: np.ndarray
    doff: np.ndarray
    data: np.ndarray

    @property
    def num_nodes(self):
        return self.s_off.size


@dataclass
class LevelStats:
    level: int
    num_super_nodes: int
    eps: float
    max_rank: int
    mean_rank: float
    max_red_size: int
    parent_size: int
    fill_blocks: int
    factor_entries: int
    compress_errors: list = field(default_factory=list)  # (err_2, norm_2, eps_l, rank, err_F)

    def to_dict(self):
        d = asdict(self)
        d.pop("compress_errors")
        errs = np.array([e[0] / e[1] if e[1] else 0.0 for e in self.compress_errors])
        d["max_relative_compress_error"] = float(errs.max()) if errs.size else 0.0
        return d


class HFactorization:
    """Immutable result of :func:`factorize`; apply it with :mod:`lorasp.solve`."""

    def __init__(self, hierarchy, config, flat, root_factor, root_off, total, level_base,
                 stats, preserved, nodes_meta, factor_time):
        self.hierarchy = hierarchy
        self.config = config
        self.flat = flat
        self.root_factor = root_factor
        self.root_off = root_off
        self.total = total
        self.level_base = level_base
        self.stats = stats
        self.preserved = preserved
        self._nodes_meta = nodes_meta
        self.factor_time = factor_time

    @property
    def n(self):
        return self.hierarchy.n

    @property
    def perm(self):
        return self.hierarchy.perm

    @property
    def depth(self):
        return self.hierarchy.depth

    @property
    def root_size(self):
        return self.root_factor.shape[0]

    @property
    def factor_entries(self) -> int:
        return int(self.flat.data.size + self.root_factor.size)

    def node_factor(self, i) -> NodeFactor:
        f = self.flat
        level, node = self._nodes_meta[i]
        d, k = int(f.s_len[i]), int(f.rank[i])
        m = int(f.nptr[i + 1] - f.nptr[i])
        o = int(f.doff[i])
        parts = []
        for shape in ((d, d), (d, k), (d, k), (k, k), (m, d)):
            size = shape[0] * shape[1]
            parts.append(f.data[o:o + size].reshape(shape))
            o += size
        return NodeFactor(level, node, int(f.s_off[i]), int(f.r_off[i]),
                          f.nidx[f.nptr[i]:f.nptr[i + 1]], *parts)

    def nodes(self):
        for i in range(self.flat.num_nodes):
            yield self.node_factor(i)

    def compress_errors(self):
        """All ``(err_2, ||A_sw||_2, eps_l, rank, err_F)`` records, leaf level first."""
        out = []
        for st in self.stats:
            out.extend(st.compress_errors)
        return out

    def stats_dict(self):
        h = self.hierarchy
        return {
            "n": self.n,
            "depth": self.depth,
            "mode": self.config.mode,
            "eps": self.config.eps,
            "eps_schedule": self.config.eps_schedule,
            "root_size": self.root_size,
            "factor_entries": self.factor_entries,
            "factor_time_s": self.factor_time,
            "levels": [s.to_dict() for s in self.stats],
            "size_ratios": self.red_size_ratios(),
            "original_cluster_size_ratios": h.size_ratios(),
        }

    def red_size_ratios(self):
        """``d_l / d_{l+1}`` of the red-node sizes actually produced."""
        sizes = {self.depth: int(np.diff(self.hierarchy.leaf_ptr).max()) if self.depth else self.n}
        for st in self.stats:
            sizes[st.level - 1] = st.max_red_size
        return [sizes[l] / sizes[l + 1] if sizes.get(l + 1) else None
                for l in range(self.depth) if l in sizes]

    def apply_inverse(self, b):
        from .solve import apply_inverse
        return apply_inverse(self, b)

    def __repr__(self):
        return (f"HFactorization(n={self.n}, depth={self.depth}, mode={self.config.mode!r}, "
                f"eps={self.config.eps}, root={self.root_size})")


# ---------------------------------------------------------------------------
# the setup loop


def _leaf_blocks(Ap, ptr):
    """Blocks of the permuted matrix between super nodes with boundaries ``ptr``."""
    N = ptr.size - 1
    coo = Ap.tocoo()
    lab = np.repeat(np.arange(N), np.diff(ptr))
    I, J = lab[coo.row], lab[coo.col]
    keep = I <= J
    I, J = I[keep], J[keep]
    ri, cj, v = coo.row[keep] - ptr[I], coo.col[keep] - ptr[J], coo.data[keep]
    key = I * np.int64(N) + J
    order = np.argsort(key, kind="stable")
    key, I, J, ri, cj, v = key[order], I[order], J[order], ri[order], cj[order], v[order]
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    ends = np.r_[starts[1:], key.size]
    blk = [dict() for _ in range(N)]
    sizes = np.diff(ptr)
    for a, b in zip(starts, ends):
        i, j = int(I[a]), int(J[a])
        M = np.zeros((sizes[i], sizes[j]))
        M[ri[a:b], cj[a:b]] = v[a:b]
        if i == j:
            blk[i][i] = M
        else:
            blk[i][j] = M
            blk[j][i] = M.T
    return dict(enumerate(blk))


def _merge_reds(red_blk, red_sizes):
    """Assemble super-node blocks from the red blocks of the finished level."""
    N = len(red_sizes) // 2
    sizes = np.asarray(red_sizes, dtype=np.int64)
    sup_sizes = sizes[0::2] + sizes[1::2]
    blk = {I: {} for I in range(N)}
    for I in range(N):
        targets = set()
        for a in (2 * I, 2 * I + 1):
            targets.update(b // 2 for b in red_blk.get(a, ()))
        for J in sorted(targets):
            if J < I:
                continue
            M = np.zeros((sup_sizes[I], sup_sizes[J]))
            for da, a in enumerate((2 * I, 2 * I + 1)):
                ra = slice(0 if da == 0 else sizes[2 * I], sup_sizes[I] if da else sizes[2 * I])
                row = red_blk.get(a, {})
                for db, b in enumerate((2 * J, 2 * J + 1)):
                    blkab = row.get(b)
                    if blkab is None:
                        continue
                    cb = slice(0 if db == 0 else sizes[2 * J], sup_sizes[J] if db else sizes[2 * J])
                    M[ra, cb] = blkab
            if J == I:
                blk[I][I] = M
            else:
                blk[I][J] = M
                blk[J][I] = M.T
    return blk, sup_sizes


def _preserve_vectors(A, hier, cfg, preserve):
    if not cfg.preserves:
        return None
    if cfg.mode == "gc-constant" and preserve is None:
        phi = np.ones((A.n, 1))
    else:
        if preserve is None:
            raise ValueError(f"mode {cfg.mode!r} needs vectors to preserve")
        phi = np.asarray(preserve, dtype=np.float64).reshape(A.n, -1)
    return phi[hier.perm]


def factorize(A: SparseSymMatrix, hier: ClusterHierarchy | None = None,
              cfg: SolverConfig | None = None, preserve=None, coords=None) -> HFactorization:
    """Hierarchical approximate factorization of the SPD matrix ``A``.

    Parameters
    ----------
    hier : ClusterHierarchy, optional
        Built with :func:`~lorasp.hierarchy.build_hierarchy` when omitted.
    cfg : SolverConfig, optional
    preserve : array, optional
        ``n`` or ``n x p`` vectors to preserve exactly (GC modes). Defaults
        to the all-ones vector for ``gc-constant``.
    """
    t0 = time.perf_counter()
    cfg = cfg or SolverConfig()
    if not isinstance(A, SparseSymMatrix):
        A = SparseSymMatrix.from_scipy(A)
    if hier is None:
        hier = build_hierarchy(A, cfg.leaf_size, coords=coords, predicate=cfg.predicate)
    if hier.n != A.n:
        raise StructureError("hierarchy does not match matrix dimension")
    L = hier.depth
    phi = _preserve_vectors(A, hier, cfg, preserve)
    preserved = PreservedVectorSet(cfg.mode) if phi is not None else None

    Ap = A.csr[hier.perm][:, hier.perm].tocsr()
    level_base = {L: 0}
    stats = []
    node_arrays = []   # per node: flat data pieces
    node_ints = []     # per node: (s_off, s_len, r_off, k, nidx)
    nodes_meta = []
    entries = 0

    if L == 0:
        root = Ap.toarray()
        root_off = 0
        total = A.n
        Lroot = dense.spd_factor(root, where="root").L
        flat = _pack(node_ints, node_arrays)
        return HFactorization(hier, cfg, flat, Lroot, root_off, total, level_base, stats,
                              preserved, nodes_meta, time.perf_counter() - t0)

    red_sizes = np.diff(hier.leaf_ptr)
    red_phi = None
    if phi is not None:
        red_phi = [phi[hier.leaf_ptr[j]:hier.leaf_ptr[j + 1]] for j in range(red_sizes.size)]
        preserved.segments[L] = red_phi
    # super nodes of the leaf level straight from A
    sup_ptr = hier.leaf_ptr[::2]
    blk = _leaf_blocks(Ap, sup_ptr)
    sup_sizes = np.diff(sup_ptr)
    total = A.n

    for level in range(L, 1, -1):
        N = sup_sizes.size
        eps_l = eps_for_level(cfg, level, L)
        base = level_base[level]
        red_off = np.concatenate([[0], np.cumsum(red_sizes)])
        sup_off = red_off[0::2][:N]
        pbase = base + int(red_off[-1])
        level_base[level - 1] = pbase
        nsets = hier.neighbor_sets(level)
        sup_phi = None
        if red_phi is not None:
            sup_phi = [np.vstack([red_phi[2 * i], red_phi[2 * i + 1]]) for i in range(N)]
        r_sizes = np.zeros(N, dtype=np.int64)
        r_off = np.zeros(N + 1, dtype=np.int64)
        r_phi = [None] * N
        errs = []
        lvl_entries = 0

        def gstart(x):
            return base + int(sup_off[x]) if x < N else pbase + int(r_off[x - N])

        def gsize(x):
            return int(sup_sizes[x]) if x < N else int(r_sizes[x - N])

        for i in range(N):
            row = blk.pop(i)
            A_ss = row.pop(i)
            ds = A_ss.shape[0]
            nset = nsets[i]
            nb, ws = [], []
            for x in row:
                (nb if (x if x < N else x - N) in nset else ws).append(x)
            nb.sort()
            ws.sort()
            # compression of the well-separated interactions
            if ws and ds:
                A_sw = np.hstack([row[x] for x in ws])
                phi_s = phi_w = None
                if sup_phi is not None:
                    phi_s = sup_phi[i]
                    phi_w = np.vstack([sup_phi[x] if x < N else r_phi[x - N] for x in ws])
                f = compress_step(A_sw, eps_l, phi_s, phi_w, cfg)
                U, Rt = f.U, f.Rt
                errs.append((f.err, f.norm, eps_l, f.rank,
                             float(np.linalg.norm(A_sw - U @ Rt))))
            else:
                U = np.zeros((ds, 0))
                Rt = None
            k = U.shape[1]
            A_sn = np.hstack([row[x] for x in nb]) if nb else np.zeros((ds, 0))
            el = eliminate_step(A_ss, A_sn, U, where=f"level {level}, super node {i}")

            # Schur update of the neighbor blocks
            offs = np.concatenate([[0], np.cumsum([gsize(x) for x in nb])]).astype(np.int64)
            upd = el.update
            for a, xa in enumerate(nb):
                ra = slice(offs[a], offs[a + 1])
                rowa = blk[xa]
                del rowa[i]
                rowa[xa] += upd[ra, ra]
                for b in range(a + 1, len(nb)):
                    xb = nb[b]
                    ub = upd[ra, offs[b]:offs[b + 1]]
                    cur = rowa.get(xb)
                    if cur is None:
                        M = ub.copy()
                        rowa[xb] = M
                        blk[xb][xa] = M.T
                    else:
                        cur += ub
            for x in ws:
                del blk[x][i]

            # parent red node
            r = N + i
            r_sizes[i] = k
            r_off[i + 1] = r_off[i] + k
            rrow = {r: el.Sinv}
            blk[r] = rrow
            if k:
                for a, xa in enumerate(nb):
                    C = el.Rn[:, offs[a]:offs[a + 1]].copy()
                    rrow[xa] = C
                    blk[xa][r] = C.T
                woff = 0
                for x in ws:
                    dw = gsize(x)
                    C = Rt[:, woff:woff + dw].copy()
                    woff += dw
                    rrow[x] = C
                    blk[x][r] = C.T
            if sup_phi is not None:
                r_phi[i] = propagate_preserved(U, sup_phi[i])

            # record for the solve phase
            nidx = (np.concatenate([np.arange(gstart(x), gstart(x) + gsize(x)) for x in nb])
                    if nb else np.zeros(0, dtype=np.int64))
            pieces = (el.L, U, el.Q, el.LS, A_sn.T)
            node_arrays.append(pieces)
            node_ints.append((base + int(sup_off[i]), ds, pbase + int(r_off[i]), k, nidx))
            nodes_meta.append((level, i))
            size = sum(p.size for p in pieces)
            lvl_entries += size
            entries += size
            if cfg.max_factor_entries is not None and entries > cfg.max_factor_entries:
                raise ResourceError(
                    f"factor storage {entries} exceeds cap {cfg.max_factor_entries} "
                    f"at level {level}, super node {i}")

        # remaining system: parent red nodes only
        red_blk = {}
        fill = 0
        for j in range(N):
            row = blk.pop(N + j)
            red_blk[j] = {x - N: M for x, M in row.items()}
            fill += len(row)
        assert not blk, "super nodes left after level elimination"
        ranks = r_sizes
        stats.append(LevelStats(
            level=level, num_super_nodes=N, eps=eps_l,
            max_rank=int(ranks.max()) if N else 0,
            mean_rank=float(ranks.mean()) if N else 0.0,
            max_red_size=int(ranks.max()) if N else 0,
            parent_size=int(ranks.sum()), fill_blocks=fill,
            factor_entries=lvl_entries, compress_errors=errs))
        log.debug("level %d: %d super nodes, max rank %d", level, N, stats[-1].max_rank)
        total = pbase + int(r_off[-1])
        red_sizes = r_sizes
        red_phi = r_phi if sup_phi is not None else None
        if preserved is not None:
            preserved.segments[level - 1] = red_phi
        blk, sup_sizes = _merge_reds(red_blk, red_sizes)

    # level 1: the two remaining red nodes form the root
    root_off = level_base[1]
    root = blk[0][0] if 0 in blk else np.zeros((0, 0))
    Lroot = dense.spd_factor(root, where="root").L
    flat = _pack(node_ints, node_arrays)
    return HFactorization(hier, cfg, flat, Lroot, root_off, total, level_base, stats,
                          preserved, nodes_meta, time.perf_counter() - t0)


def _pack(node_ints, node_arrays) -> FlatFactor:
    nn = len(node_ints)
    s_off = np.array([t[0] for t in node_ints], dtype=np.int64)
    s_len = np.array([t[1] for t in node_ints], dtype=np.int64)
    r_off = np.array([t[2] for t in node_ints], dtype=np.int64)
    rank = np.array([t[3] for t in node_ints], dtype=np.int64)
    nlen = np.array([t[4].size for t in node_ints], dtype=np.int64)
    nptr = np.zeros(nn + 1, dtype=np.int64)
    np.cumsum(nlen, out=nptr[1:])
    nidx = (np.concatenate([t[4] for t in node_ints]).astype(np.int64)
            if nn else np.zeros(0, dtype=np.int64))
    sizes = np.array([sum(p.size for p in pieces) for pieces in node_arrays], dtype=np.int64)
    doff = np.zeros(nn + 1, dtype=np.int64)
    np.cumsum(sizes, out=doff[1:])
    data = np.empty(int(doff[-1]))
    for i, pieces in enumerate(node_arrays):
        o = doff[i]
        for p in pieces:
            data[o:o + p.size] = p.ravel()
            o += p.size
    for arr in (s_off, s_len, r_off, rank, nptr, nidx, doff, data):
        arr.setflags(write=False)
    return FlatFactor(s_off, s_len, r_off, rank, nptr, nidx, doff[:-1], data)
