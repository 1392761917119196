"""Mesh files: Gmsh ASCII v2 (read) and a plain-text native format (read/write).

Native format::

    # comment
    NODES <n>
    x y z                      (n lines)
    ELEMENTS <m>
    tet4 <region> n0 n1 n2 n3  (or hex8 <region> n0 ... n7; m lines, 0-based nodes)
    SIDESETS <k>
    <element> <local_face> <tag>   (k lines)
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .mesh import HEX_FACES, TET_FACES, MeshError, VolumeMesh

GMSH = "gmsh_ascii_v2"
NATIVE = "native_text"

_GMSH_VOLUME = {4: 4, 5: 8}      # type -> node count
_GMSH_SURFACE = {2: 3, 3: 4}
_GMSH_IGNORED = {1: 2, 15: 1}    # lines and points carry no volume or face data


def _lines(text: str):
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            yield line


def read_native(path) -> VolumeMesh:
    it = _lines(Path(path).read_text())
    try:
        key, n = next(it).split()
        if key != "NODES":
            raise MeshError("expected NODES section")
        nodes = np.array([[float(v) for v in next(it).split()] for _ in range(int(n))]).reshape(-1, 3)
        key, m = next(it).split()
        if key != "ELEMENTS":
            raise MeshError("expected ELEMENTS section")
        tets, hexes, treg, hreg, order = [], [], [], [], []
        for _ in range(int(m)):
            parts = next(it).split()
            kind, region, conn = parts[0], int(parts[1]), [int(v) for v in parts[2:]]
            if kind == "tet4" and len(conn) == 4:
                tets.append(conn)
                treg.append(region)
                order.append(("t", len(tets) - 1))
            elif kind == "hex8" and len(conn) == 8:
                hexes.append(conn)
                hreg.append(region)
                order.append(("h", len(hexes) - 1))
            else:
                raise MeshError(f"unsupported element record {' '.join(parts)!r}")
        key, k = next(it).split()
        if key != "SIDESETS":
            raise MeshError("expected SIDESETS section")
        sides = np.array([[int(v) for v in next(it).split()] for _ in range(int(k))], dtype=np.int64).reshape(-1, 3)
    except StopIteration:
        raise MeshError(f"{path}: unexpected end of file") from None
    except ValueError as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshError(f"{path}: malformed record ({exc})") from None
    # element numbering in the file may interleave kinds; VolumeMesh wants tets first
    nt = len(tets)
    remap = np.array([i if kind == "t" else nt + i for kind, i in order], dtype=np.int64)
    if len(sides):
        sides[:, 0] = remap[sides[:, 0]]
    return VolumeMesh(nodes, tets=np.array(tets, dtype=np.int64).reshape(-1, 4),
                      hexes=np.array(hexes, dtype=np.int64).reshape(-1, 8),
                      boundary_tags=sides, regions=np.array(treg + hreg, dtype=np.int64))


def write_native(mesh: VolumeMesh, path) -> None:
    out = [f"NODES {mesh.n_nodes}"]
    out += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.nodes]
    out.append(f"ELEMENTS {mesh.n_elements}")
    nt = len(mesh.tets)
    out += [f"tet4 {mesh.regions[e]} " + " ".join(map(str, c)) for e, c in enumerate(mesh.tets)]
    out += [f"hex8 {mesh.regions[nt + e]} " + " ".join(map(str, c)) for e, c in enumerate(mesh.hexes)]
    out.append(f"SIDESETS {len(mesh.boundary_tags)}")
    out += [f"{e} {f} {t}" for e, f, t in mesh.boundary_tags]
    Path(path).write_text("\n".join(out) + "\n")


def _section(lines: list[str], name: str) -> list[str]:
    try:
        a = lines.index(f"${name}")
        b = lines.index(f"$End{name}", a)
    except ValueError:
        raise MeshError(f"missing ${name} section") from None
    return lines[a + 1:b]


def read_gmsh(path) -> VolumeMesh:
    """Gmsh 2.x ASCII: tet4/hex8 volumes, tri3/quad4 faces carrying physical tags."""
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    try:
        fmt = _section(lines, "MeshFormat")
        if not fmt or not fmt[0].split()[0].startswith("2") or fmt[0].split()[1] != "0":
            raise MeshError("only ASCII Gmsh format 2.x is supported")
        nsec = _section(lines, "Nodes")
        n = int(nsec[0])
        ids, coords = [], []
        for ln in nsec[1:1 + n]:
            p = ln.split()
            ids.append(int(p[0]))
            coords.append([float(v) for v in p[1:4]])
        index = {g: i for i, g in enumerate(ids)}
        esec = _section(lines, "Elements")
        m = int(esec[0])
        tets, hexes, treg, hreg, faces = [], [], [], [], []
        for ln in esec[1:1 + m]:
            p = [int(v) for v in ln.split()]
            etype, ntags = p[1], p[2]
            tags = p[3:3 + ntags]
            conn = [index[v] for v in p[3 + ntags:]]
            phys = tags[0] if tags else 0
            if etype in _GMSH_VOLUME:
                if len(conn) != _GMSH_VOLUME[etype]:
                    raise MeshError(f"element {p[0]} has {len(conn)} nodes")
                (tets if etype == 4 else hexes).append(conn)
                (treg if etype == 4 else hreg).append(phys)
            elif etype in _GMSH_SURFACE:
                if len(conn) != _GMSH_SURFACE[etype]:
                    raise MeshError(f"element {p[0]} has {len(conn)} nodes")
                faces.append((frozenset(conn), phys))
            elif etype not in _GMSH_IGNORED:
                raise MeshError(f"unsupported Gmsh element type {etype}")
    except (ValueError, IndexError, KeyError) as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshError(f"{path}: malformed Gmsh file ({exc!r})") from None

    tets = np.array(tets, dtype=np.int64).reshape(-1, 4)
    hexes = np.array(hexes, dtype=np.int64).reshape(-1, 8)
    lookup = {}
    for e, c in enumerate(tets):
        for f, loc in enumerate(TET_FACES):
            lookup.setdefault(frozenset(c[list(loc)].tolist()), (e, f))
    for e, c in enumerate(hexes):
        for f, loc in enumerate(HEX_FACES):
            lookup.setdefault(frozenset(c[list(loc)].tolist()), (len(tets) + e, f))
    sides = []
    for key, phys in faces:
        if key not in lookup:
            raise MeshError(f"surface element on nodes {sorted(key)} is not a face of any volume element")
        sides.append((*lookup[key], phys))
    return VolumeMesh(np.array(coords).reshape(-1, 3), tets=tets, hexes=hexes,
                      boundary_tags=np.array(sides, dtype=np.int64).reshape(-1, 3),
                      regions=np.array(treg + hreg, dtype=np.int64))


def load_mesh(path, format: str | None = None) -> VolumeMesh:
    """Read a mesh; the format defaults to Gmsh for ``.msh`` files and native otherwise."""
    path = Path(path)
    if not path.exists():
        raise MeshError(f"{path}: no such file")
    if format is None:
        format = GMSH if path.suffix == ".msh" else NATIVE
    if format == GMSH:
        return read_gmsh(path)
    if format == NATIVE:
        return read_native(path)
    raise MeshError(f"unknown mesh format {format!r}")
