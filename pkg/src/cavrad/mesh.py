"""Volume meshes, boundary facets and facet geometry.

Two element kinds are supported, 4-node tetrahedra and 8-node hexahedra,
with the usual corner orderings (the hexahedron bottom face 0-1-2-3 is
counter-clockwise when seen from node 4).  Boundary faces are addressed
by ``(element, local_face)`` where the element index is global: all
tetrahedra first, then all hexahedra.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TET4 = "tet4"
HEX8 = "hex8"

# Local faces by corner index.  Orientation is fixed later against the
# element centroid, so the listed order only has to walk the face boundary.
TET_FACES = ((0, 2, 1), (0, 1, 3), (1, 2, 3), (0, 3, 2))
HEX_FACES = (
    (0, 3, 2, 1),
    (4, 5, 6, 7),
    (0, 1, 5, 4),
    (1, 2, 6, 5),
    (2, 3, 7, 6),
    (3, 0, 4, 7),
)

_GAUSS2 = np.array([-1.0, 1.0]) / np.sqrt(3.0)


class MeshError(ValueError):
    """Invalid mesh data or an unsupported request."""


@dataclass(frozen=True)
class VolumeMesh:
    """Tetrahedral and/or hexahedral volume mesh.

    Attributes:
        nodes: (n_nodes, 3) coordinates.
        tets: (n_tets, 4) node indices.
        hexes: (n_hexes, 8) node indices.
        boundary_tags: (k, 3) rows of ``(element, local_face, tag)``.
        regions: per-element integer label (body index for generated meshes).
    """

    nodes: np.ndarray
    tets: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), dtype=np.int64))
    hexes: np.ndarray = field(default_factory=lambda: np.zeros((0, 8), dtype=np.int64))
    boundary_tags: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    regions: np.ndarray | None = None

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float).reshape(-1, 3)
        tets = np.asarray(self.tets, dtype=np.int64).reshape(-1, 4)
        hexes = np.asarray(self.hexes, dtype=np.int64).reshape(-1, 8)
        tags = np.asarray(self.boundary_tags, dtype=np.int64).reshape(-1, 3)
        n_el = len(tets) + len(hexes)
        regions = (np.zeros(n_el, dtype=np.int64) if self.regions is None
                   else np.asarray(self.regions, dtype=np.int64).reshape(-1))
        for name, arr in (("nodes", nodes), ("tets", tets), ("hexes", hexes),
                          ("boundary_tags", tags), ("regions", regions)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self._validate()

    def _validate(self):
        n = len(self.nodes)
        for conn in (self.tets, self.hexes):
            if conn.size and (conn.min() < 0 or conn.max() >= n):
                raise MeshError("element references a node index out of range")
        if len(self.regions) != self.n_elements:
            raise MeshError("regions must have one entry per element")
        if len(self.boundary_tags):
            el, lf = self.boundary_tags[:, 0], self.boundary_tags[:, 1]
            if el.min() < 0 or el.max() >= self.n_elements:
                raise MeshError("boundary tag references an unknown element")
            nfaces = np.where(el < len(self.tets), 4, 6)
            if np.any((lf < 0) | (lf >= nfaces)):
                raise MeshError("boundary tag references an unknown local face")
        vols = self.element_volumes()
        if np.any(vols <= 0.0):
            bad = int(np.argmin(vols))
            raise MeshError(f"inverted element {bad} (volume {vols[bad]:.3e})")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.tets) + len(self.hexes)

    def element_kind(self, e: int) -> str:
        return TET4 if e < len(self.tets) else HEX8

    def element_nodes(self, e: int) -> np.ndarray:
        nt = len(self.tets)
        return self.tets[e] if e < nt else self.hexes[e - nt]

    def element_volumes(self) -> np.ndarray:
        return np.concatenate([tet_volumes(self.nodes, self.tets),
                               hex_volumes(self.nodes, self.hexes)])

    def node_regions(self) -> np.ndarray:
        """Region label per node (the largest label among adjacent elements)."""
        out = np.full(self.n_nodes, -1, dtype=np.int64)
        nt = len(self.tets)
        if nt:
            np.maximum.at(out, self.tets.ravel(), np.repeat(self.regions[:nt], 4))
        if len(self.hexes):
            np.maximum.at(out, self.hexes.ravel(), np.repeat(self.regions[nt:], 8))
        return out

    def all_tags(self) -> set[int]:
        return set(int(t) for t in np.unique(self.boundary_tags[:, 2]))


def tet_volumes(nodes: np.ndarray, tets: np.ndarray) -> np.ndarray:
    if len(tets) == 0:
        return np.zeros(0)
    x = nodes[tets]
    a, b, c = x[:, 1] - x[:, 0], x[:, 2] - x[:, 0], x[:, 3] - x[:, 0]
    return np.einsum("ij,ij->i", a, np.cross(b, c)) / 6.0


def hex_volumes(nodes: np.ndarray, hexes: np.ndarray) -> np.ndarray:
    """Signed volumes by 2x2x2 Gauss integration of the trilinear map.

    The smallest Jacobian determinant is returned instead whenever it is
    non-positive, so a locally inverted element is never reported as valid.
    """
    if len(hexes) == 0:
        return np.zeros(0)
    from .fem import hex8_shape  # local import: fem depends on mesh

    x = nodes[hexes]
    vol = np.zeros(len(hexes))
    worst = np.full(len(hexes), np.inf)
    for xi in _GAUSS2:
        for eta in _GAUSS2:
            for zeta in _GAUSS2:
                _, dN = hex8_shape(xi, eta, zeta)
                J = np.einsum("eai,aj->eij", x, dN)
                det = np.linalg.det(J)
                vol += det
                worst = np.minimum(worst, det)
    return np.where(worst > 0, vol, np.minimum(worst, 0.0))


@dataclass(frozen=True)
class Facet:
    vertex_ids: tuple[int, ...]
    centroid: np.ndarray
    normal: np.ndarray
    area: float


@dataclass(frozen=True)
class SurfaceMesh:
    """Radiating boundary facets extracted from a volume mesh.

    Facet data are stored column-wise.  ``conn`` is padded with -1 for
    triangles; ``nverts`` holds 3 or 4.
    """

    parent: VolumeMesh
    conn: np.ndarray
    nverts: np.ndarray
    centroids: np.ndarray
    normals: np.ndarray
    areas: np.ndarray
    element: np.ndarray
    local_face: np.ndarray
    tags: np.ndarray

    @property
    def n_facets(self) -> int:
        return len(self.areas)

    @property
    def facets(self) -> list[Facet]:
        return [self.facet(i) for i in range(self.n_facets)]

    def facet(self, i: int) -> Facet:
        ids = tuple(int(v) for v in self.conn[i, : self.nverts[i]])
        return Facet(ids, self.centroids[i], self.normals[i], float(self.areas[i]))

    def vertex_coords(self, i: int) -> np.ndarray:
        return self.parent.nodes[self.conn[i, : self.nverts[i]]]

    def diameters(self) -> np.ndarray:
        """Largest vertex-to-vertex distance of every facet."""
        x = self.parent.nodes[np.where(self.conn >= 0, self.conn, self.conn[:, :1])]
        d = np.linalg.norm(x[:, :, None, :] - x[:, None, :, :], axis=-1)
        return d.reshape(len(x), -1).max(axis=1)

    def subset(self, idx) -> "SurfaceMesh":
        idx = np.asarray(idx)
        return SurfaceMesh(self.parent, self.conn[idx], self.nverts[idx], self.centroids[idx],
                           self.normals[idx], self.areas[idx], self.element[idx],
                           self.local_face[idx], self.tags[idx])


def _tri_geometry(x):
    cross = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
    twice = np.linalg.norm(cross, axis=1)
    return x.mean(axis=1), cross / twice[:, None], 0.5 * twice


def _quad_geometry(x):
    # bilinear patch; area and centroid by 2x2 Gauss
    area = np.zeros(len(x))
    moment = np.zeros((len(x), 3))
    for s in _GAUSS2:
        for t in _GAUSS2:
            N = 0.25 * np.array([(1 - s) * (1 - t), (1 + s) * (1 - t), (1 + s) * (1 + t), (1 - s) * (1 + t)])
            dNs = 0.25 * np.array([-(1 - t), (1 - t), (1 + t), -(1 + t)])
            dNt = 0.25 * np.array([-(1 - s), -(1 + s), (1 + s), (1 - s)])
            xs = np.einsum("a,eai->ei", dNs, x)
            xt = np.einsum("a,eai->ei", dNt, x)
            jac = np.linalg.norm(np.cross(xs, xt), axis=1)
            area += jac
            moment += jac[:, None] * np.einsum("a,eai->ei", N, x)
    cross = np.cross(x[:, 2] - x[:, 0], x[:, 3] - x[:, 1])
    normal = cross / np.linalg.norm(cross, axis=1)[:, None]
    return moment / area[:, None], normal, area


def facet_geometry(nodes: np.ndarray, conn: np.ndarray, nverts: np.ndarray):
    """Centroids, unit normals (vertex order right-hand rule) and areas."""
    nf = len(conn)
    cen, nrm, area = np.zeros((nf, 3)), np.zeros((nf, 3)), np.zeros(nf)
    for nv, fn in ((3, _tri_geometry), (4, _quad_geometry)):
        sel = np.flatnonzero(nverts == nv)
        if len(sel):
            c, n, a = fn(nodes[conn[sel, :nv]])
            cen[sel], nrm[sel], area[sel] = c, n, a
    return cen, nrm, area


def _element_faces(mesh: VolumeMesh, elements: np.ndarray, local: np.ndarray):
    nt = len(mesh.tets)
    conn = np.full((len(elements), 4), -1, dtype=np.int64)
    nverts = np.zeros(len(elements), dtype=np.int64)
    centers = np.zeros((len(elements), 3))
    for k, (e, f) in enumerate(zip(elements, local)):
        if e < nt:
            en = mesh.tets[e]
            conn[k, :3] = en[list(TET_FACES[f])]
            nverts[k] = 3
        else:
            en = mesh.hexes[e - nt]
            conn[k] = en[list(HEX_FACES[f])]
            nverts[k] = 4
        centers[k] = mesh.nodes[en].mean(axis=0)
    return conn, nverts, centers


def _face_occurrences(mesh: VolumeMesh):
    """Per element kind: (element ids, local faces, multiplicity) of every face slot."""
    out = []
    nt = len(mesh.tets)
    for offset, conn, faces in ((0, mesh.tets, TET_FACES), (nt, mesh.hexes, HEX_FACES)):
        if len(conn) == 0:
            continue
        nf = len(faces)
        keys = np.sort(conn[:, np.array(faces)], axis=2).reshape(len(conn) * nf, -1)
        _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
        mult = counts[inverse.reshape(-1)]
        el = offset + np.repeat(np.arange(len(conn)), nf)
        lf = np.tile(np.arange(nf), len(conn))
        out.append((el, lf, mult))
    return out


def face_multiplicity(mesh: VolumeMesh, elements, local) -> np.ndarray:
    """Number of elements sharing each given ``(element, local_face)``."""
    elements = np.asarray(elements, dtype=np.int64)
    local = np.asarray(local, dtype=np.int64)
    nt = len(mesh.tets)
    out = np.zeros(len(elements), dtype=np.int64)
    for el, lf, mult in _face_occurrences(mesh):
        nf = 4 if el[0] < nt else 6
        base = nt if el[0] >= nt else 0
        sel = (elements >= base) & (elements < base + len(el) // nf)
        out[sel] = mult[(elements[sel] - base) * nf + local[sel]]
    return out


def extract_boundary(mesh: VolumeMesh, tags) -> SurfaceMesh:
    """One facet per boundary face carrying one of ``tags``.

    Facet vertex order is flipped where needed so that every normal points
    away from its parent element.
    """
    tags = set(int(t) for t in tags)
    if not tags:
        raise MeshError("no boundary tags selected")
    bt = mesh.boundary_tags
    rows = bt[np.isin(bt[:, 2], sorted(tags))]
    if len(rows) == 0:
        raise MeshError(f"no boundary faces carry tags {sorted(tags)}")
    conn, nverts, centers = _element_faces(mesh, rows[:, 0], rows[:, 1])

    mult = face_multiplicity(mesh, rows[:, 0], rows[:, 1])
    if np.any(mult > 2):
        k = int(np.argmax(mult))
        key = tuple(int(v) for v in conn[k, : nverts[k]])
        raise MeshError(f"non-manifold face {key} shared by {mult[k]} elements")

    cen, nrm, area = facet_geometry(mesh.nodes, conn, nverts)
    flip = np.einsum("ij,ij->i", nrm, cen - centers) < 0
    for k in np.flatnonzero(flip):
        nv = nverts[k]
        conn[k, :nv] = conn[k, :nv][::-1]
    nrm[flip] *= -1.0
    for arr in (conn, nverts, cen, nrm, area):
        arr.setflags(write=False)
    return SurfaceMesh(mesh, conn, nverts, cen, nrm, area,
                       rows[:, 0].copy(), rows[:, 1].copy(), rows[:, 2].copy())


def exterior_faces(mesh: VolumeMesh) -> np.ndarray:
    """(element, local_face) pairs of all faces owned by a single element."""
    parts = [np.stack([el[m == 1], lf[m == 1]], axis=1) for el, lf, m in _face_occurrences(mesh)]
    return np.concatenate(parts) if parts else np.zeros((0, 2), dtype=np.int64)
