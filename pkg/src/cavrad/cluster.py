"""Geometric clustering and admissibility-driven block partitioning.

The index tree is built by recursive median bisection of facet centroids
along the longest side of each cluster's bounding box.  The block tree
recursively pairs clusters, stopping at pairs that are far apart relative
to their size (admissible, stored low-rank) or at pairs of leaves (dense).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import count

import numpy as np

DENSE = "dense"
LOWRANK = "lowrank"


@dataclass(eq=False)
class Cluster:
    """Contiguous range ``[start, stop)`` of permuted indices with its bounding box."""

    start: int
    stop: int
    lo: np.ndarray
    hi: np.ndarray
    level: int
    children: tuple = ()
    id: int = -1

    @property
    def size(self) -> int:
        return self.stop - self.start

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def diam(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    @property
    def range(self) -> slice:
        return slice(self.start, self.stop)


@dataclass(eq=False)
class IndexTree:
    root: Cluster
    perm: np.ndarray          # perm[k] = original index stored at tree position k
    n_min: int
    clusters: list = field(default_factory=list)

    def __post_init__(self):
        self.iperm = np.empty_like(self.perm)
        self.iperm[self.perm] = np.arange(len(self.perm))

    @property
    def n(self) -> int:
        return len(self.perm)

    @property
    def leaves(self) -> list[Cluster]:
        return [c for c in self.clusters if c.is_leaf]

    def depth(self) -> int:
        return max(c.level for c in self.clusters)

    def indices(self, c: Cluster) -> np.ndarray:
        """Original indices held by cluster ``c``."""
        return self.perm[c.start:c.stop]


def build_index_tree(points, n_min: int = 100, extents=None) -> IndexTree:
    """Median bisection along the longest bounding-box axis until clusters hold <= n_min points.

    ``extents`` optionally gives per-point half-widths (scalar or (n, 3));
    bounding boxes then cover ``point +- extent`` instead of the bare points.
    Ties in the split put the extra point in the lower half.
    """
    pts = np.asarray(points, dtype=float).reshape(len(points), -1)
    n = len(pts)
    if n < 1:
        raise ValueError("need at least one point")
    if n_min < 1:
        raise ValueError("n_min must be >= 1")
    ext = np.zeros_like(pts) if extents is None else np.broadcast_to(
        np.asarray(extents, dtype=float).reshape(-1, 1) if np.ndim(extents) == 1
        else np.asarray(extents, dtype=float), pts.shape)
    lo_all, hi_all = pts - ext, pts + ext
    perm = np.arange(n)
    clusters: list[Cluster] = []
    ids = count()

    def make(start, stop, level):
        idx = perm[start:stop]
        c = Cluster(start, stop, lo_all[idx].min(axis=0), hi_all[idx].max(axis=0), level, id=next(ids))
        clusters.append(c)
        if c.size > n_min:
            box = pts[idx]
            axis = int(np.argmax(box.max(axis=0) - box.min(axis=0)))
            order = np.argsort(box[:, axis], kind="stable")
            perm[start:stop] = idx[order]
            mid = start + (c.size + 1) // 2
            c.children = (make(start, mid, level + 1), make(mid, stop, level + 1))
        return c

    root = make(0, n, 0)
    return IndexTree(root, perm, n_min, clusters)


def box_distance(a: Cluster, b: Cluster) -> float:
    gap = np.maximum(0.0, np.maximum(a.lo - b.hi, b.lo - a.hi))
    return float(np.linalg.norm(gap))


def admissible(s: Cluster, t: Cluster, c: float = 2.0) -> bool:
    """min(diam s, diam t) <= c * dist(s, t), with a strictly positive distance."""
    if s is t:
        return False
    dist = box_distance(s, t)
    return dist > 0.0 and min(s.diam, t.diam) <= c * dist


@dataclass(eq=False)
class BlockNode:
    row: Cluster
    col: Cluster
    kind: str | None = None          # DENSE / LOWRANK for leaves, None otherwise
    children: list = field(default_factory=list)   # grid: children[i][j]

    @property
    def is_leaf(self) -> bool:
        return self.kind is not None

    @property
    def shape(self):
        return (self.row.size, self.col.size)

    def iter_leaves(self):
        stack = [self]
        while stack:
            b = stack.pop()
            if b.is_leaf:
                yield b
            else:
                for r in reversed(b.children):
                    stack.extend(reversed(r))


@dataclass(eq=False)
class BlockTree:
    root: BlockNode
    tree: IndexTree
    adm_const: float

    @property
    def leaves(self) -> list[BlockNode]:
        return list(self.root.iter_leaves())

    def counts(self) -> dict:
        kinds = [b.kind for b in self.leaves]
        return {DENSE: kinds.count(DENSE), LOWRANK: kinds.count(LOWRANK)}

    def sparsity_constant(self) -> int:
        """Largest number of blocks (leaf or not) sharing one row cluster."""
        per_row: dict[int, int] = {}
        stack = [self.root]
        while stack:
            b = stack.pop()
            per_row[b.row.id] = per_row.get(b.row.id, 0) + 1
            for r in b.children:
                stack.extend(r)
        return max(per_row.values())


def build_block_tree(tree: IndexTree, c: float = 2.0) -> BlockTree:
    """Partition tree.n x tree.n into admissible (low-rank) and leaf-pair (dense) blocks.

    When only one of the two clusters has children, only that side is split.
    """
    if c <= 0:
        raise ValueError("admissibility constant must be positive")

    def build(s: Cluster, t: Cluster) -> BlockNode:
        if admissible(s, t, c):
            return BlockNode(s, t, LOWRANK)
        if s.is_leaf and t.is_leaf:
            return BlockNode(s, t, DENSE)
        rows = s.children or (s,)
        cols = t.children or (t,)
        return BlockNode(s, t, None, [[build(a, b) for b in cols] for a in rows])

    return BlockTree(build(tree.root, tree.root), tree, c)


DENSE_RGB = (40, 70, 200)
LOWRANK_RGB = (170, 170, 170)
BORDER_RGB = (0, 0, 0)


def render_blocks(btree: BlockTree, size: int | None = None) -> np.ndarray:
    """RGB image (size x size x 3, uint8) of the leaf partition in permuted order."""
    n = btree.tree.n
    if size is None:
        size = n if n <= 1024 else 1024
        if size < 256:
            size = n * -(-256 // n)
    img = np.full((size, size, 3), 255, dtype=np.uint8)

    def px(i):
        return int(round(i * size / n))

    for b in btree.leaves:
        r0, r1, c0, c1 = px(b.row.start), px(b.row.stop), px(b.col.start), px(b.col.stop)
        img[r0:r1, c0:c1] = DENSE_RGB if b.kind == DENSE else LOWRANK_RGB
        if r1 - r0 >= 3 and c1 - c0 >= 3:
            img[r0, c0:c1] = img[r1 - 1, c0:c1] = BORDER_RGB
            img[r0:r1, c0] = img[r0:r1, c1 - 1] = BORDER_RGB
    return img


def write_ppm(btree: BlockTree, path, size: int | None = None) -> np.ndarray:
    """Write the block partition as a binary PPM (P6); returns the image."""
    img = render_blocks(btree, size)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
    return img


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ValueError("not a binary PPM file")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h * 3], dtype=np.uint8).reshape(h, w, 3)
