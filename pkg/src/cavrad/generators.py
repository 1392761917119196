"""Built-in structured mesh generators.

``gen_parallel_plates`` builds two hexahedral slabs facing each other;
``gen_fibonacci_bodies`` builds 13 bodies laid out on a Fibonacci spiral in
the z = 0 plane.  Every generated mesh tags its radiating faces with
``CAVITY_TAG`` and any remaining exterior faces with ``WALL_TAG``.
"""

from __future__ import annotations

import numpy as np

from .mesh import HEX_FACES, MeshError, VolumeMesh, exterior_faces

CAVITY_TAG = 1
WALL_TAG = 2

FIBONACCI = (1, 1, 2, 3, 5, 8, 13)

# Per-body grid (nx, ny, nz) of the projected cube for each sphere level.
# Facets per body = 4 * (nx*ny + ny*nz + nx*nz).  The coarse axis is y so
# that the flat-topped caps at +-z are cut finer; level 1 (84 facets per
# body) then leaves about 6-7 % of facets seeing no other body.
SPHERE_LEVELS = {
    1: (3, 2, 3),
    2: (5, 3, 5),
    3: (7, 4, 7),
    4: (8, 7, 8),
    5: (11, 9, 11),
    6: (13, 13, 13),
    7: (15, 14, 15),
}

DEFAULT_BODY_RADIUS = 0.55


def _hex_grid(xs, ys, zs):
    """Nodes and hex connectivity of a tensor grid, node index (i, j, k) -> i + nx*(j + ny*k)."""
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    nodes = np.stack([X.ravel(order="F"), Y.ravel(order="F"), Z.ravel(order="F")], axis=1)
    nx, ny, nz = len(xs), len(ys), len(zs)

    def nid(i, j, k):
        return i + nx * (j + ny * k)

    i, j, k = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), np.arange(nz - 1), indexing="ij")
    i, j, k = i.ravel(order="F"), j.ravel(order="F"), k.ravel(order="F")
    hexes = np.stack([
        nid(i, j, k), nid(i + 1, j, k), nid(i + 1, j + 1, k), nid(i, j + 1, k),
        nid(i, j, k + 1), nid(i + 1, j, k + 1), nid(i + 1, j + 1, k + 1), nid(i, j + 1, k + 1),
    ], axis=1)
    return nodes, hexes


def _face_normal_axis(nodes, hexes, elements, local):
    """Outward axis-aligned direction (+-x, +-y, +-z) of hex faces of an axis-aligned grid."""
    out = np.zeros((len(elements), 3))
    for k, (e, f) in enumerate(zip(elements, local)):
        en = hexes[e]
        fc = nodes[en[list(HEX_FACES[f])]].mean(axis=0)
        d = fc - nodes[en].mean(axis=0)
        ax = int(np.argmax(np.abs(d)))
        out[k, ax] = np.sign(d[ax])
    return out


def gen_parallel_plates(L: float = 1.0, separation: float = 1.0, m: int = 40, layers: int = 1,
                        thickness: float | None = None) -> VolumeMesh:
    """Two L x L plates, m x m elements each, facing each other across ``separation``.

    The lower plate occupies z in [-thickness, 0], the upper plate
    z in [separation, separation + thickness].  The two facing surfaces are
    tagged as cavity, giving 2*m**2 cavity facets.
    """
    if m < 1 or layers < 1:
        raise MeshError("m and layers must be >= 1")
    if L <= 0 or separation <= 0:
        raise MeshError("L and separation must be positive")
    t = 0.1 * L if thickness is None else float(thickness)
    if t <= 0:
        raise MeshError("thickness must be positive")
    xs = np.linspace(0.0, L, m + 1)
    lower_n, lower_h = _hex_grid(xs, xs, np.linspace(-t, 0.0, layers + 1))
    upper_n, upper_h = _hex_grid(xs, xs, np.linspace(separation, separation + t, layers + 1))
    nodes = np.vstack([lower_n, upper_n])
    hexes = np.vstack([lower_h, upper_h + len(lower_n)])
    regions = np.repeat([0, 1], len(lower_h))
    mesh = VolumeMesh(nodes, hexes=hexes, regions=regions)

    ext = exterior_faces(mesh)
    axis = _face_normal_axis(mesh.nodes, mesh.hexes, ext[:, 0], ext[:, 1])
    is_lower = regions[ext[:, 0]] == 0
    facing = np.where(is_lower, axis[:, 2] > 0.5, axis[:, 2] < -0.5)
    tags = np.where(facing, CAVITY_TAG, WALL_TAG)
    return VolumeMesh(nodes, hexes=hexes, regions=regions,
                      boundary_tags=np.column_stack([ext, tags]))


def fibonacci_centers(scale: float = 1.0) -> np.ndarray:
    """Centres of the 13 bodies of the spiral layout (z = 0), indexed by body number - 1.

    Bodies 1, 2, 3, 5, 7, 9, 11, 13 form a chain; each is offset from the
    previous one by (+-a_n, +-a_n) with a_n the n-th Fibonacci number and
    signs cycling so the chain turns counter-clockwise.  Bodies 4, 6, 8,
    10, 12 sit at the midpoints of the quarter-circle arcs joining chain
    bodies 3-5, 5-7, 7-9, 9-11 and 11-13.
    """
    signs = ((1, 1), (-1, 1), (-1, -1), (1, -1))
    chain = [np.zeros(2)]
    for n, a in enumerate(FIBONACCI):
        sx, sy = signs[n % 4]
        chain.append(chain[-1] + a * np.array([sx, sy], dtype=float))
    # chain[k] is body number 1, 2, 3, 5, 7, 9, 11, 13
    centers = np.zeros((13, 2))
    chain_ids = (1, 2, 3, 5, 7, 9, 11, 13)
    for body, c in zip(chain_ids, chain):
        centers[body - 1] = c
    for q, body in enumerate((4, 6, 8, 10, 12)):
        P, Q = chain[q + 2], chain[q + 3]
        d = Q - P
        # counter-clockwise quarter arc: pick the corner that makes P -> Q turn left
        if d[0] * d[1] > 0:
            O = np.array([P[0], Q[1]])
        else:
            O = np.array([Q[0], P[1]])
        centers[body - 1] = O + ((P - O) + (Q - O)) / np.sqrt(2.0)
    return np.column_stack([centers * scale, np.zeros(13)])


_KUHN = ((0, 1, 2, 6), (0, 2, 3, 6), (0, 3, 7, 6), (0, 7, 4, 6), (0, 4, 5, 6), (0, 5, 1, 6))


def _ball_map(p):
    """Map the cube [-1, 1]^3 onto the unit ball along rays (sup-norm -> radius)."""
    inf = np.abs(p).max(axis=1)
    two = np.linalg.norm(p, axis=1)
    scale = np.divide(inf, two, out=np.ones_like(inf), where=two > 0)
    return p * scale[:, None]


def _orient_tets(nodes, tets):
    x = nodes[tets]
    vol = np.einsum("ij,ij->i", x[:, 1] - x[:, 0], np.cross(x[:, 2] - x[:, 0], x[:, 3] - x[:, 0]))
    tets = tets.copy()
    neg = vol < 0
    tets[neg, 1], tets[neg, 2] = tets[neg, 2].copy(), tets[neg, 1].copy()
    return tets


def sphere_body(radius: float, grid: tuple[int, int, int]):
    """Tetrahedral ball: a subdivided cube, Kuhn-split, vertex-projected onto the ball."""
    nx, ny, nz = grid
    g_nodes, hexes = _hex_grid(np.linspace(-1, 1, nx + 1), np.linspace(-1, 1, ny + 1),
                               np.linspace(-1, 1, nz + 1))
    tets = np.concatenate([hexes[:, list(t)] for t in _KUHN])
    nodes = radius * _ball_map(g_nodes)
    return nodes, _orient_tets(nodes, tets)


def cube_body(half: float, n: int):
    xs = np.linspace(-half, half, n + 1)
    return _hex_grid(xs, xs, xs)


def gen_fibonacci_bodies(level: int = 1, body: str = "sphere_like", radius: float = DEFAULT_BODY_RADIUS,
                         scale: float = 1.0, subdivision: int | None = None) -> VolumeMesh:
    """Thirteen bodies on a Fibonacci spiral; every exterior face is cavity.

    ``body='sphere_like'`` gives tetrahedral balls whose resolution follows
    ``SPHERE_LEVELS``; ``body='cube'`` gives hexahedral cubes of half-width
    ``radius`` with ``subdivision`` (default: ``level``) cells per edge.
    Element regions hold the body index 0..12 (body 1 is the central one).
    """
    if body not in ("sphere_like", "cube"):
        raise MeshError(f"unknown body kind {body!r}")
    if body == "sphere_like" and level not in SPHERE_LEVELS:
        raise MeshError(f"level must be one of {sorted(SPHERE_LEVELS)}")
    if body == "cube" and (subdivision or level) < 1:
        raise MeshError("cube subdivision must be >= 1")
    if radius <= 0 or scale <= 0:
        raise MeshError("radius and scale must be positive")
    centers = fibonacci_centers(scale)
    if body == "sphere_like":
        grid = SPHERE_LEVELS[level]
        if subdivision is not None:
            grid = (subdivision,) * 3
        local_nodes, local_el = sphere_body(radius, grid)
    else:
        local_nodes, local_el = cube_body(radius, subdivision or level)

    nodes, conn, regions = [], [], []
    for b, c in enumerate(centers):
        conn.append(local_el + b * len(local_nodes))
        nodes.append(local_nodes + c)
        regions.append(np.full(len(local_el), b))
    nodes, conn, regions = np.vstack(nodes), np.vstack(conn), np.concatenate(regions)
    kw = {"tets": conn} if body == "sphere_like" else {"hexes": conn}
    mesh = VolumeMesh(nodes, regions=regions, **kw)
    ext = exterior_faces(mesh)
    tags = np.column_stack([ext, np.full(len(ext), CAVITY_TAG)])
    return VolumeMesh(nodes, regions=regions, boundary_tags=tags, **kw)
