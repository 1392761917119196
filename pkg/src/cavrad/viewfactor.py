"""View-factor entries by adaptive Gauss quadrature, row sums and closed-cavity scaling.

    F_ij = int_{G_i} int_{G_j} cos(phi_i) cos(phi_j) / (pi R^2) dA_j dA_i

F carries the area of facet i, so for a closed enclosure each row sums to A_i.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import Facet, SurfaceMesh
from .quadrature import facet_quadrature

# Pairs whose centroid-to-centroid cosine is at or below this value are
# treated as mutually invisible (coplanar, back-to-back, same convex body).
COS_CUTOFF = 1e-12

# Target number of facet pairs per vectorized chunk.
_CHUNK_PAIRS = 1 << 21


class ViewFactorError(ArithmeticError):
    pass


@dataclass(frozen=True)
class QuadPolicy:
    """Gauss order as a function of dist(centroids) / max(diameter).

    ``thresholds`` are ``(ratio, order)`` pairs: the first pair whose ratio
    exceeds the measured one gives the order; beyond the last ratio
    ``far_order`` is used.  Pairs sharing a vertex always use ``max_order``.
    """

    thresholds: tuple = ((1.25, 6), (2.0, 4), (4.0, 3), (8.0, 2))
    far_order: int = 1
    max_order: int = 6

    def __post_init__(self):
        ratios = [r for r, _ in self.thresholds]
        orders = [o for _, o in self.thresholds] + [self.far_order]
        if any(b <= a for a, b in zip(ratios, ratios[1:])):
            raise ValueError("threshold ratios must increase")
        if any(b > a for a, b in zip(orders, orders[1:])):
            raise ValueError("orders must not increase with the ratio")
        if min(orders) < 1 or self.max_order < max(orders):
            raise ValueError("orders must be >= 1 and max_order must bound them")

    @classmethod
    def uniform(cls, order: int) -> "QuadPolicy":
        return cls(thresholds=(), far_order=order, max_order=order)

    def order(self, ratio: np.ndarray) -> np.ndarray:
        ratio = np.asarray(ratio, dtype=float)
        out = np.full(ratio.shape, self.far_order, dtype=np.int64)
        for r, o in reversed(self.thresholds):
            out[ratio < r] = o
        return out

    @property
    def orders(self) -> list[int]:
        return sorted({o for _, o in self.thresholds} | {self.far_order, self.max_order})


@dataclass
class RowSums:
    """Scaled row sums ``s`` and their clamp ``c`` onto [0, 1]."""

    s: np.ndarray
    c: np.ndarray = field(init=False)

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        self.c = np.clip(self.s, 0.0, 1.0)

    @property
    def isolated(self) -> np.ndarray:
        return self.c == 0.0


class ViewFactorKernel:
    """Entry oracle for F on one set of facets.

    Quadrature points for each order are computed once for all facets.
    ``block(rows, cols)`` returns the dense sub-matrix for global facet
    indices, which is what both the dense and the hierarchical assembly use.
    """

    def __init__(self, surf: SurfaceMesh, policy: QuadPolicy | None = None):
        self._setup(surf.parent.nodes, surf.conn, surf.nverts, surf.centroids, surf.normals,
                    surf.diameters(), policy)

    @classmethod
    def from_arrays(cls, nodes, conn, nverts, centroids, normals, policy=None) -> "ViewFactorKernel":
        self = cls.__new__(cls)
        conn = np.asarray(conn, dtype=np.int64)
        x = np.asarray(nodes, float)[np.where(conn >= 0, conn, conn[:, :1])]
        diam = np.linalg.norm(x[:, :, None] - x[:, None, :], axis=-1).reshape(len(x), -1).max(axis=1)
        self._setup(nodes, conn, nverts, centroids, normals, diam, policy)
        return self

    def _setup(self, nodes, conn, nverts, centroids, normals, diam, policy):
        self.nodes = np.asarray(nodes, dtype=float)
        self.conn = np.asarray(conn, dtype=np.int64)
        self.nverts = np.asarray(nverts, dtype=np.int64)
        self.policy = policy or QuadPolicy()
        self.n = len(self.conn)
        self.centroids = np.asarray(centroids, dtype=float)
        self.normals = np.asarray(normals, dtype=float)
        self.diam = np.asarray(diam, dtype=float)
        self._rules: dict[int, tuple] = {}
        self.n_evaluated = 0

    @property
    def shape(self):
        return (self.n, self.n)

    def rule(self, p: int):
        if p not in self._rules:
            pts, w, _ = facet_quadrature(self.nodes, self.conn, self.nverts, p)
            self._rules[p] = (pts, w)
        return self._rules[p]

    def _share_vertex(self, i: np.ndarray, j: np.ndarray) -> np.ndarray:
        a = self.conn[i]
        b = self.conn[j]
        eq = (a[:, :, None] == b[:, None, :]) & (a[:, :, None] >= 0)
        return eq.any(axis=(1, 2))

    def _pairs(self, i: np.ndarray, j: np.ndarray, p: int) -> np.ndarray:
        pts, w = self.rule(p)
        q = pts.shape[1]
        out = np.empty(len(i))
        step = max(1, _CHUNK_PAIRS // (q * q))
        for s in range(0, len(i), step):
            ii, jj = i[s:s + step], j[s:s + step]
            d = pts[jj][:, None, :, :] - pts[ii][:, :, None, :]
            r2 = np.einsum("pabk,pabk->pab", d, d)
            if np.any(r2 == 0.0):
                k = int(np.flatnonzero((r2 == 0.0).any(axis=(1, 2)))[0])
                raise ViewFactorError(f"coincident quadrature points for facets {ii[k]} and {jj[k]}")
            ci = np.maximum(np.einsum("pk,pabk->pab", self.normals[ii], d), 0.0)
            cj = np.maximum(-np.einsum("pk,pabk->pab", self.normals[jj], d), 0.0)
            g = ci * cj / (r2 * r2)
            out[s:s + step] = np.einsum("pa,pab,pb->p", w[ii], g, w[jj]) / np.pi
        return out

    def pair_values(self, i, j) -> np.ndarray:
        """F_ij for paired index arrays (i[k], j[k])."""
        i = np.asarray(i, dtype=np.int64).ravel()
        j = np.asarray(j, dtype=np.int64).ravel()
        out = np.zeros(len(i))
        self.n_evaluated += len(i)
        d = self.centroids[j] - self.centroids[i]
        dist = np.linalg.norm(d, axis=1)
        safe = np.where(dist > 0, dist, 1.0)
        visible = ((np.einsum("pk,pk->p", self.normals[i], d) > COS_CUTOFF * safe)
                   & (-np.einsum("pk,pk->p", self.normals[j], d) > COS_CUTOFF * safe)
                   & (i != j) & (dist > 0))
        idx = np.flatnonzero(visible)
        if len(idx) == 0:
            return out
        ratio = dist[idx] / np.maximum(self.diam[i[idx]], self.diam[j[idx]])
        order = self.policy.order(ratio)
        near = idx[order > self.policy.far_order] if self.policy.thresholds else idx[:0]
        if len(near):
            touch = self._share_vertex(i[near], j[near])
            order[np.isin(idx, near[touch])] = self.policy.max_order
        for p in np.unique(order):
            sel = idx[order == p]
            out[sel] = self._pairs(i[sel], j[sel], int(p))
        return out

    def block(self, rows, cols) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        out = np.empty((len(rows), len(cols)))
        step = max(1, _CHUNK_PAIRS // max(len(cols), 1))
        for s in range(0, len(rows), step):
            r = rows[s:s + step]
            I = np.repeat(r, len(cols))
            J = np.tile(cols, len(r))
            out[s:s + step] = self.pair_values(I, J).reshape(len(r), len(cols))
        return out

    def entry(self, i: int, j: int) -> float:
        return float(self.pair_values([i], [j])[0])


def viewfactor_entry(fi: Facet, fj: Facet, nodes: np.ndarray, policy: QuadPolicy | None = None) -> float:
    """F_ij for two facets whose vertex ids index into ``nodes``."""
    if fi.vertex_ids == fj.vertex_ids:
        raise ViewFactorError("view factor of a facet with itself is undefined")
    conn = np.full((2, 4), -1, dtype=np.int64)
    conn[0, :len(fi.vertex_ids)] = fi.vertex_ids
    conn[1, :len(fj.vertex_ids)] = fj.vertex_ids
    kernel = ViewFactorKernel.from_arrays(nodes, conn, [len(fi.vertex_ids), len(fj.vertex_ids)],
                                          [fi.centroid, fj.centroid], [fi.normal, fj.normal], policy)
    return kernel.entry(0, 1)


def assemble_dense_F(surf: SurfaceMesh, policy: QuadPolicy | None = None,
                     kernel: ViewFactorKernel | None = None) -> np.ndarray:
    """Dense F with zero diagonal; the upper triangle is computed and mirrored."""
    kernel = kernel or ViewFactorKernel(surf, policy)
    n = kernel.n
    F = np.zeros((n, n))
    if n < 2:
        return F
    step = max(1, _CHUNK_PAIRS // n)
    for a in range(0, n, step):
        b = min(n, a + step)
        F[a:b, a:] = kernel.block(np.arange(a, b), np.arange(a, n))
    np.fill_diagonal(F, 0.0)
    iu = np.triu_indices(n, 1)
    F[(iu[1], iu[0])] = F[iu]
    return F


def _apply(F_action, x):
    if callable(F_action) and not hasattr(F_action, "shape"):
        return F_action(x)
    return F_action @ x


def compute_row_sums(F_action, areas: np.ndarray) -> RowSums:
    """s_i = (1/A_i) sum_j F_ij from one product with the ones vector."""
    areas = np.asarray(areas, dtype=float)
    if np.any(areas <= 0):
        raise ValueError("areas must be positive")
    return RowSums(_apply(F_action, np.ones(len(areas))) / areas)


def scale_closed_cavity(F, rowsums: RowSums):
    """Divide row i of F by c_i wherever c_i != 0 (in place).

    ``F`` is a dense array or any object with a ``scale_rows`` method.
    """
    c = rowsums.c
    scale = np.ones_like(c)
    nz = c != 0.0
    scale[nz] = 1.0 / c[nz]
    if hasattr(F, "scale_rows"):
        F.scale_rows(scale)
    else:
        F *= scale[:, None]
    return F
