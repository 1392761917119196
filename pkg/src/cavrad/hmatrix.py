"""Hierarchical block low-rank matrices.

An ``HMatrix`` mirrors a ``BlockTree``: every leaf holds either a dense
array (inadmissible block) or a ``LowRank`` pair ``U @ V.T`` (admissible
block).  All storage is in the permuted (tree) index order; the public
``matvec``/``to_dense`` entry points translate from and to the original
ordering.

Arithmetic used by the hierarchical LU works on ``HBlock`` nodes in place.
A factored diagonal block keeps its lower and upper factors in the same
node, like an in-place dense LU: strictly lower children hold L, the upper
children hold U, diagonal dense leaves hold ``scipy.linalg.lu_factor``
output whose lower factor carries the row pivoting.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .cluster import DENSE, LOWRANK, BlockNode, BlockTree, Cluster

PIVOT_TOL = 1e-14
_ACA_CHUNK = 1 << 20


class HLUError(ArithmeticError):
    pass


# Low-rank leaves ----------------------------------------------------------


@dataclass
class LowRank:
    """Block approximated by ``U @ V.T``; ``U`` is m x k, ``V`` is n x k.

    ``residual_norm``/``block_norm`` record the Frobenius certificate of the
    cross approximation that produced the factors, when there was one.
    """

    U: np.ndarray
    V: np.ndarray
    residual_norm: float = 0.0
    block_norm: float = 0.0

    def __post_init__(self):
        if self.U.ndim != 2 or self.V.ndim != 2 or self.U.shape[1] != self.V.shape[1]:
            raise ValueError("low-rank factors must be 2-D with matching column counts")

    @classmethod
    def zeros(cls, m: int, n: int) -> "LowRank":
        return cls(np.zeros((m, 0)), np.zeros((n, 0)))

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    @property
    def shape(self):
        return (self.U.shape[0], self.V.shape[0])

    @property
    def nbytes(self) -> int:
        return 8 * (self.U.size + self.V.size)

    def to_dense(self) -> np.ndarray:
        return self.U @ self.V.T

    def copy(self) -> "LowRank":
        return LowRank(self.U.copy(), self.V.copy(), self.residual_norm, self.block_norm)


def aca_full_pivot(block, eps_rel: float, max_rank: int | None = None) -> LowRank:
    """Cross approximation with full pivoting on a materialized block.

    Parameters
    ----------
    block : ndarray or callable
        The m x n block, or a zero-argument callable returning it.  The
        block is copied once and then overwritten by the residual.
    eps_rel : float
        Stop as soon as ||residual||_F <= eps_rel * ||block||_F.

    Each step picks the residual entry of largest magnitude as pivot and
    subtracts the rank-one cross through it; the residual update, its
    norm and the next pivot search share one pass over the data.
    """
    if not eps_rel > 0:
        raise ValueError("eps_rel must be positive")
    R = np.array(block() if callable(block) else block, dtype=float, copy=True, order="C")
    m, n = R.shape
    kmax = min(m, n) if max_rank is None else min(m, n, max_rank)
    norm_X = float(np.sqrt(np.einsum("ij,ij->", R, R)))
    if norm_X == 0.0 or kmax == 0:
        lr = LowRank.zeros(m, n)
        lr.block_norm = norm_X
        lr.residual_norm = norm_X
        return lr
    tol = eps_rel * norm_X
    step = max(1, _ACA_CHUNK // max(n, 1))
    piv = int(np.argmax(np.abs(R)))
    res = norm_X
    us, vs = [], []
    while res > tol and len(us) < kmax:
        i, j = divmod(piv, n)
        delta = R[i, j]
        if delta == 0.0:
            break  # residual is identically zero
        u = R[:, j].copy()
        v = R[i, :] / delta
        us.append(u)
        vs.append(v)
        sq = 0.0
        best, piv = -1.0, 0
        for s in range(0, m, step):
            blk = R[s:s + step]
            blk -= np.outer(u[s:s + step], v)
            sq += float(np.einsum("ij,ij->", blk, blk))
            loc = int(np.argmax(np.abs(blk)))
            val = abs(blk.flat[loc])
            if val > best:
                best, piv = val, s * n + loc
        res = np.sqrt(sq)
    U = np.column_stack(us) if us else np.zeros((m, 0))
    V = np.column_stack(vs) if vs else np.zeros((n, 0))
    return LowRank(U, V, residual_norm=float(res), block_norm=norm_X)


def _truncate(U, V, eps_rel: float = 0.0, abs_budget: float | None = None) -> LowRank:
    m, n = U.shape[0], V.shape[0]
    if U.shape[1] == 0:
        return LowRank.zeros(m, n)
    Qu, Ru = np.linalg.qr(U)
    Qv, Rv = np.linalg.qr(V)
    W, s, Zt = np.linalg.svd(Ru @ Rv.T)
    # a product that cancels to roundoff (e.g. A + (-A)) is zero
    if s[0] <= 8 * np.finfo(float).eps * np.linalg.norm(Ru, 2) * np.linalg.norm(Rv, 2):
        return LowRank.zeros(m, n)
    if abs_budget is None:
        k = int(np.count_nonzero(s > eps_rel * s[0]))
    else:
        # smallest k with sqrt(sum_{i >= k} s_i^2) <= budget
        tail = np.sqrt(np.cumsum((s ** 2)[::-1]))[::-1]
        ok = np.flatnonzero(tail <= abs_budget)
        k = int(ok[0]) if len(ok) else len(s)
    Un, Vn = Qu @ (W[:, :k] * s[:k]), Qv @ Zt[:k].T
    # rows/columns that were exactly zero stay exactly zero (isolated facets)
    Un[~U.any(axis=1)] = 0.0
    Vn[~V.any(axis=1)] = 0.0
    return LowRank(Un, Vn)


def recompress(blk: LowRank, eps_rel: float) -> LowRank:
    """Re-orthogonalize and drop singular values at or below eps_rel * sigma_1."""
    return _truncate(blk.U, blk.V, eps_rel)


def dense_to_lowrank(D: np.ndarray, eps_rel: float) -> LowRank:
    if D.size == 0 or not np.any(D):
        return LowRank.zeros(*D.shape)
    W, s, Zt = np.linalg.svd(D, full_matrices=False)
    k = int(np.count_nonzero(s > eps_rel * s[0]))
    return LowRank(W[:, :k] * s[:k], Zt[:k].T.copy())


def block_add(A, B, eps_rel: float):
    """A + B for leaf payloads; two low-rank operands are concatenated and recompressed."""
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {B.shape}")
    if isinstance(A, LowRank) and isinstance(B, LowRank):
        return _truncate(np.hstack([A.U, B.U]), np.hstack([A.V, B.V]), eps_rel)
    return _dense(A) + _dense(B)


def block_mul(A, B, eps_rel: float):
    """A @ B for leaf payloads; any low-rank operand gives a recompressed low-rank result."""
    if A.shape[1] != B.shape[0]:
        raise ValueError(f"shape mismatch {A.shape} @ {B.shape}")
    if isinstance(A, LowRank):
        Y = B.V @ (B.U.T @ A.V) if isinstance(B, LowRank) else B.T @ A.V
        return _truncate(A.U, Y, eps_rel)
    if isinstance(B, LowRank):
        return _truncate(A @ B.U, B.V, eps_rel)
    return A @ B


def _dense(x) -> np.ndarray:
    return x.to_dense() if isinstance(x, LowRank) else x


# Hierarchical blocks -------------------------------------------------------


class HBlock:
    """Node of a hierarchical matrix over permuted row/column clusters."""

    __slots__ = ("row", "col", "children", "dense", "lr", "piv")

    def __init__(self, row: Cluster, col: Cluster, children=None, dense=None, lr=None):
        self.row, self.col = row, col
        self.children = children
        self.dense = dense
        self.lr = lr
        self.piv = None          # set once a diagonal dense leaf is LU-factored

    @property
    def shape(self):
        return (self.row.size, self.col.size)

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    @property
    def kind(self) -> str | None:
        if self.dense is not None:
            return DENSE
        if self.lr is not None:
            return LOWRANK
        return None

    def leaves(self):
        stack = [self]
        while stack:
            b = stack.pop()
            if b.is_leaf:
                yield b
            else:
                for r in b.children:
                    stack.extend(r)

    def copy(self) -> "HBlock":
        if self.is_leaf:
            h = HBlock(self.row, self.col,
                       dense=None if self.dense is None else self.dense.copy(),
                       lr=None if self.lr is None else self.lr.copy())
            h.piv = None if self.piv is None else self.piv.copy()
            return h
        return HBlock(self.row, self.col, [[c.copy() for c in r] for r in self.children])


def h_matmat(A: HBlock, X: np.ndarray) -> np.ndarray:
    """A @ X for a dense X with A.shape[1] rows."""
    Y = np.zeros((A.shape[0],) + X.shape[1:])
    r0, c0 = A.row.start, A.col.start
    for b in A.leaves():
        rs = slice(b.row.start - r0, b.row.stop - r0)
        cs = slice(b.col.start - c0, b.col.stop - c0)
        if b.dense is not None:
            Y[rs] += b.dense @ X[cs]
        elif b.lr.rank:
            Y[rs] += b.lr.U @ (b.lr.V.T @ X[cs])
    return Y


def h_rmatmat(A: HBlock, X: np.ndarray) -> np.ndarray:
    """A.T @ X for a dense X with A.shape[0] rows."""
    Y = np.zeros((A.shape[1],) + X.shape[1:])
    r0, c0 = A.row.start, A.col.start
    for b in A.leaves():
        rs = slice(b.row.start - r0, b.row.stop - r0)
        cs = slice(b.col.start - c0, b.col.stop - c0)
        if b.dense is not None:
            Y[cs] += b.dense.T @ X[rs]
        elif b.lr.rank:
            Y[cs] += b.lr.V @ (b.lr.U.T @ X[rs])
    return Y


def h_to_dense(A: HBlock) -> np.ndarray:
    D = np.zeros(A.shape)
    r0, c0 = A.row.start, A.col.start
    for b in A.leaves():
        D[b.row.start - r0:b.row.stop - r0, b.col.start - c0:b.col.stop - c0] = _dense(
            b.dense if b.dense is not None else b.lr)
    return D


class HMatrix:
    """Hierarchical matrix over a block tree (square, one index tree for rows and columns)."""

    def __init__(self, root: HBlock, block_tree: BlockTree, eps_rel: float):
        self.root = root
        self.block_tree = block_tree
        self.tree = block_tree.tree
        self.perm = self.tree.perm
        self.eps_rel = eps_rel

    @property
    def n(self) -> int:
        return self.tree.n

    @property
    def shape(self):
        return (self.n, self.n)

    def leaves(self) -> list[HBlock]:
        return list(self.root.leaves())

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n:
            raise ValueError(f"vector of length {x.shape[0]} for an H-matrix of size {self.n}")
        yp = h_matmat(self.root, x[self.perm])
        y = np.empty_like(yp)
        y[self.perm] = yp
        return y

    def rmatvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n:
            raise ValueError(f"vector of length {x.shape[0]} for an H-matrix of size {self.n}")
        yp = h_rmatmat(self.root, x[self.perm])
        y = np.empty_like(yp)
        y[self.perm] = yp
        return y

    def __matmul__(self, x):
        return self.matvec(x)

    def to_dense(self, permuted: bool = False) -> np.ndarray:
        Dp = h_to_dense(self.root)
        if permuted:
            return Dp
        D = np.empty_like(Dp)
        D[np.ix_(self.perm, self.perm)] = Dp
        return D

    def scale_rows(self, d: np.ndarray):
        """Multiply row i by d[i] (original ordering), in place."""
        dp = np.asarray(d, dtype=float)[self.perm]
        for b in self.root.leaves():
            s = dp[b.row.range, None]
            if b.dense is not None:
                b.dense *= s
            else:
                b.lr.U *= s

    def add_identity(self, alpha: float = 1.0):
        """Add alpha * I through the dense diagonal leaves."""
        for b in self.root.leaves():
            if b.row is b.col:
                if b.dense is None:
                    raise ValueError("diagonal block is low-rank; cannot add the identity")
                b.dense[np.diag_indices(b.row.size)] += alpha

    def copy(self) -> "HMatrix":
        return HMatrix(self.root.copy(), self.block_tree, self.eps_rel)


def _build(node: BlockNode, fill) -> HBlock:
    if node.is_leaf:
        return fill(node)
    return HBlock(node.row, node.col, [[_build(c, fill) for c in r] for r in node.children])


def compress_block(X: np.ndarray, eps_rel: float) -> LowRank:
    """ACA followed by recompression within the Frobenius budget ACA left over.

    The result satisfies ||X - UV^T||_F <= eps_rel ||X||_F.
    """
    lr = aca_full_pivot(X, eps_rel)
    budget = eps_rel * lr.block_norm - lr.residual_norm
    out = _truncate(lr.U, lr.V, abs_budget=max(budget, 0.0)) if lr.rank else lr
    out.residual_norm, out.block_norm = lr.residual_norm, lr.block_norm
    return out


def assemble_hmatrix(oracle, btree: BlockTree, eps_rel: float) -> HMatrix:
    """Fill every leaf of ``btree`` from an entry oracle.

    ``oracle(rows, cols)`` (or ``oracle.block(rows, cols)``) returns the
    dense sub-matrix for original indices.  Dense leaves are stored exactly.
    Admissible leaves are compressed by ``aca_full_pivot`` and then
    recompressed within the Frobenius budget left over by the cross
    approximation, so every leaf satisfies ||X - UV^T||_F <= eps_rel ||X||_F
    and hence ||A - H||_F <= eps_rel ||A||_F globally.
    """
    get = oracle.block if hasattr(oracle, "block") else oracle
    perm = btree.tree.perm

    def fill(node: BlockNode) -> HBlock:
        rows, cols = perm[node.row.range], perm[node.col.range]
        X = np.asarray(get(rows, cols), dtype=float)
        if node.kind == DENSE:
            return HBlock(node.row, node.col, dense=X)
        return HBlock(node.row, node.col, lr=compress_block(X, eps_rel))

    return HMatrix(_build(btree.root, fill), btree, eps_rel)


def hmatrix_from_dense(A: np.ndarray, btree: BlockTree, eps_rel: float) -> HMatrix:
    A = np.asarray(A, dtype=float)
    return assemble_hmatrix(lambda r, c: A[np.ix_(r, c)], btree, eps_rel)


def storage_report(H: HMatrix) -> dict:
    """Payload bytes (8 per stored scalar) and rank statistics of the leaves."""
    dense_leaves = [b for b in H.root.leaves() if b.dense is not None]
    lr_leaves = [b for b in H.root.leaves() if b.lr is not None]
    ranks = [b.lr.rank for b in lr_leaves]
    nbytes = sum(8 * b.dense.size for b in dense_leaves) + sum(b.lr.nbytes for b in lr_leaves)
    return {
        "bytes": int(nbytes),
        "dense_bytes": int(8 * H.n * H.n),
        "compression": float(nbytes / (8.0 * H.n * H.n)),
        "max_rank": int(max(ranks)) if ranks else 0,
        "mean_rank": float(np.mean(ranks)) if ranks else 0.0,
        "n_dense_leaves": len(dense_leaves),
        "n_lowrank_leaves": len(lr_leaves),
    }


# Hierarchical arithmetic ---------------------------------------------------


def _rel(b: HBlock, top: HBlock):
    return (slice(b.row.start - top.row.start, b.row.stop - top.row.start),
            slice(b.col.start - top.col.start, b.col.stop - top.col.start))


def _add_lowrank_into(C: HBlock, X: np.ndarray, Y: np.ndarray, eps: float):
    """C += X @ Y.T with X, Y aligned to C's rows/columns, truncating at low-rank leaves."""
    if X.shape[1] == 0:
        return
    if C.is_leaf:
        if C.dense is not None:
            C.dense += X @ Y.T
        else:
            C.lr = _truncate(np.hstack([C.lr.U, X]), np.hstack([C.lr.V, Y]), eps)
        return
    for r in C.children:
        for c in r:
            rs, cs = _rel(c, C)
            _add_lowrank_into(c, X[rs], Y[cs], eps)


def _add_dense_into(C: HBlock, D: np.ndarray, eps: float):
    if C.is_leaf:
        if C.dense is not None:
            C.dense += D
        else:
            C.lr = dense_to_lowrank(C.lr.to_dense() + D, eps)
        return
    for r in C.children:
        for c in r:
            rs, cs = _rel(c, C)
            _add_dense_into(c, D[rs, cs], eps)


def _prod_factors(A: HBlock, B: HBlock):
    """A @ B as ('lr', X, Y) when an operand is low-rank, ('dense', D) when an operand is a dense leaf.

    Returns None when both operands are subdivided.
    """
    if A.lr is not None:
        return "lr", A.lr.U, h_rmatmat(B, A.lr.V)
    if B.lr is not None:
        return "lr", h_matmat(A, B.lr.U), B.lr.V
    if A.dense is not None:
        return "dense", h_rmatmat(B, A.dense.T).T
    if B.dense is not None:
        return "dense", h_matmat(A, B.dense)
    return None


def _prod_lowrank(A: HBlock, B: HBlock, eps: float) -> LowRank:
    """Truncated low-rank approximation of A @ B."""
    p = _prod_factors(A, B)
    if p is not None:
        if p[0] == "lr":
            return _truncate(p[1], p[2], eps)
        return dense_to_lowrank(p[1], eps)
    # both subdivided: agglomerate the child products into one low-rank block
    m, n = A.shape[0], B.shape[1]
    Xs, Ys = [], []
    for i, arow in enumerate(A.children):
        for j in range(len(B.children[0])):
            for k, a in enumerate(arow):
                b = B.children[k][j]
                part = _prod_lowrank(a, b, eps)
                if part.rank == 0:
                    continue
                X = np.zeros((m, part.rank))
                Y = np.zeros((n, part.rank))
                X[a.row.start - A.row.start:a.row.stop - A.row.start] = part.U
                Y[b.col.start - B.col.start:b.col.stop - B.col.start] = part.V
                Xs.append(X)
                Ys.append(Y)
    if not Xs:
        return LowRank.zeros(m, n)
    return _truncate(np.hstack(Xs), np.hstack(Ys), eps)


def _prod_dense(A: HBlock, B: HBlock) -> np.ndarray:
    p = _prod_factors(A, B)
    if p is None:
        return h_matmat(A, h_to_dense(B))
    return p[1] @ p[2].T if p[0] == "lr" else p[1]


def _mul_add(C: HBlock, A: HBlock, B: HBlock, alpha: float, eps: float):
    """C += alpha * A @ B with truncation to C's format."""
    if C.is_leaf:
        if C.dense is not None:
            C.dense += alpha * _prod_dense(A, B)
        else:
            P = _prod_lowrank(A, B, eps)
            if P.rank:
                C.lr = _truncate(np.hstack([C.lr.U, alpha * P.U]), np.hstack([C.lr.V, P.V]), eps)
        return
    p = _prod_factors(A, B)
    if p is not None:
        if p[0] == "lr":
            _add_lowrank_into(C, alpha * p[1], p[2], eps)
        else:
            _add_dense_into(C, alpha * p[1], eps)
        return
    for i, crow in enumerate(C.children):
        for j, c in enumerate(crow):
            for k, a in enumerate(A.children[i]):
                _mul_add(c, a, B.children[k][j], alpha, eps)


# Triangular solves with a factored diagonal block.


def _lower_dense(L: HBlock, X: np.ndarray) -> np.ndarray:
    """Solve L Z = X (L unit lower, diagonal leaves with row pivoting)."""
    if L.is_leaf:
        Z = X.copy()
        for i, p in enumerate(L.piv):
            if p != i:
                Z[[i, p]] = Z[[p, i]]
        return sla.solve_triangular(L.dense, Z, lower=True, unit_diagonal=True, check_finite=False)
    Z = X.copy()
    grid = L.children
    for i in range(len(grid)):
        rs, _ = _rel(grid[i][i], L)
        for j in range(i):
            _, cs = _rel(grid[i][j], L)
            Z[rs] -= h_matmat(grid[i][j], Z[cs])
        Z[rs] = _lower_dense(grid[i][i], Z[rs])
    return Z


def _upper_dense(U: HBlock, X: np.ndarray) -> np.ndarray:
    """Solve U Z = X."""
    if U.is_leaf:
        return sla.solve_triangular(U.dense, X, lower=False, check_finite=False)
    Z = X.copy()
    grid = U.children
    for i in reversed(range(len(grid))):
        rs, _ = _rel(grid[i][i], U)
        for j in range(i + 1, len(grid)):
            _, cs = _rel(grid[i][j], U)
            Z[rs] -= h_matmat(grid[i][j], Z[cs])
        Z[rs] = _upper_dense(grid[i][i], Z[rs])
    return Z


def _upper_T_dense(U: HBlock, X: np.ndarray) -> np.ndarray:
    """Solve U^T Z = X."""
    if U.is_leaf:
        return sla.solve_triangular(U.dense, X, trans="T", lower=False, check_finite=False)
    Z = X.copy()
    grid = U.children
    for i in range(len(grid)):
        _, cs = _rel(grid[i][i], U)
        for j in range(i):
            rs, _ = _rel(grid[j][i], U)
            Z[cs] -= h_rmatmat(grid[j][i], Z[rs])
        Z[cs] = _upper_T_dense(grid[i][i], Z[cs])
    return Z


def _solve_lower(L: HBlock, B: HBlock, eps: float):
    """B := L^{-1} B in place."""
    if B.is_leaf:
        if B.dense is not None:
            B.dense = _lower_dense(L, B.dense)
        elif B.lr.rank:
            B.lr = LowRank(_lower_dense(L, B.lr.U), B.lr.V)
        return
    if L.is_leaf:
        for r in B.children:
            for c in r:
                _solve_lower(L, c, eps)
        return
    grid = L.children
    for j in range(len(B.children[0])):
        for i in range(len(grid)):
            for k in range(i):
                _mul_add(B.children[i][j], grid[i][k], B.children[k][j], -1.0, eps)
            _solve_lower(grid[i][i], B.children[i][j], eps)


def _solve_upper_right(U: HBlock, B: HBlock, eps: float):
    """B := B U^{-1} in place."""
    if B.is_leaf:
        if B.dense is not None:
            B.dense = _upper_T_dense(U, B.dense.T).T.copy()
        elif B.lr.rank:
            B.lr = LowRank(B.lr.U, _upper_T_dense(U, B.lr.V))
        return
    if U.is_leaf:
        for r in B.children:
            for c in r:
                _solve_upper_right(U, c, eps)
        return
    grid = U.children
    for i in range(len(B.children)):
        for j in range(len(grid)):
            for k in range(j):
                _mul_add(B.children[i][j], B.children[i][k], grid[k][j], -1.0, eps)
            _solve_upper_right(grid[j][j], B.children[i][j], eps)


def _hlu(A: HBlock, eps: float):
    if A.is_leaf:
        if A.dense is None:
            raise HLUError(f"diagonal block [{A.row.start}:{A.row.stop}] is not dense")
        norm = np.linalg.norm(A.dense)
        with warnings.catch_warnings():
            # exact zero pivots are reported below as HLUError
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu, piv = sla.lu_factor(A.dense, check_finite=False)
        pivots = np.abs(np.diag(lu))
        if norm == 0.0 or pivots.min() < PIVOT_TOL * norm:
            raise HLUError(f"singular diagonal block [{A.row.start}:{A.row.stop}] "
                           f"(pivot {pivots.min():.3e}, block norm {norm:.3e})")
        A.dense, A.piv = lu, piv
        return
    grid = A.children
    n = len(grid)
    for i in range(n):
        _hlu(grid[i][i], eps)
        for j in range(i + 1, n):
            _solve_lower(grid[i][i], grid[i][j], eps)
            _solve_upper_right(grid[i][i], grid[j][i], eps)
        for j in range(i + 1, n):
            for k in range(i + 1, n):
                _mul_add(grid[j][k], grid[j][i], grid[i][k], -1.0, eps)


@dataclass
class HluFactors:
    """Hierarchical LU factors of a square H-matrix, stored in one block tree."""

    root: HBlock
    perm: np.ndarray
    eps_rel: float

    @property
    def n(self) -> int:
        return len(self.perm)

    def solve(self, b: np.ndarray) -> np.ndarray:
        return solve_lu(self, b)

    def factors_dense(self):
        """Dense (L, U) in permuted order, with L carrying the leaf pivoting."""
        return _dense_L(self.root), _dense_U(self.root)


def _dense_L(A: HBlock) -> np.ndarray:
    if A.is_leaf:
        L = np.tril(A.dense, -1) + np.eye(A.shape[0])
        perm = np.arange(A.shape[0])
        for i, p in enumerate(A.piv):
            perm[[i, p]] = perm[[p, i]]
        out = np.empty_like(L)
        out[perm] = L
        return out
    D = np.zeros(A.shape)
    for i, r in enumerate(A.children):
        for j, c in enumerate(r):
            rs, cs = _rel(c, A)
            if i == j:
                D[rs, cs] = _dense_L(c)
            elif i > j:
                D[rs, cs] = h_to_dense(c)
    return D


def _dense_U(A: HBlock) -> np.ndarray:
    if A.is_leaf:
        return np.triu(A.dense)
    D = np.zeros(A.shape)
    for i, r in enumerate(A.children):
        for j, c in enumerate(r):
            rs, cs = _rel(c, A)
            if i == j:
                D[rs, cs] = _dense_U(c)
            elif i < j:
                D[rs, cs] = h_to_dense(c)
    return D


def hlu_factorize(C: HMatrix, eps_rel: float | None = None) -> HluFactors:
    """Hierarchical LU of C (C itself is left untouched).

    For a 2 x 2 block split: factor C11, form U12 = L11^{-1} C12 and
    L21 = C21 U11^{-1}, update C22 - L21 U12 with truncation, factor it.
    """
    eps = C.eps_rel if eps_rel is None else eps_rel
    root = C.root.copy()
    _hlu(root, eps)
    return HluFactors(root, C.perm, eps)


def solve_lu(f: HluFactors, b: np.ndarray) -> np.ndarray:
    """Approximate C^{-1} b by forward then backward substitution (original ordering)."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != f.n:
        raise ValueError(f"right-hand side of length {b.shape[0]} for a system of size {f.n}")
    bp = b[f.perm]
    vec = bp.ndim == 1
    X = bp[:, None] if vec else bp
    Z = _upper_dense(f.root, _lower_dense(f.root, X))
    x = np.empty_like(Z)
    x[f.perm] = Z
    return x[:, 0] if vec else x
