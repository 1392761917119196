"""Quadrature rules for facets (tri3, quad4) and volume elements (tet4, hex8)."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def gauss_01(p: int):
    """p-point Gauss-Legendre rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(p)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def quad_rule(p: int):
    """Tensor p x p rule on the reference square [-1, 1]^2 as (points (q, 2), weights (q,))."""
    x, w = np.polynomial.legendre.leggauss(p)
    s, t = np.meshgrid(x, x, indexing="ij")
    return np.column_stack([s.ravel(), t.ravel()]), np.outer(w, w).ravel()


@lru_cache(maxsize=None)
def tri_rule(p: int):
    """Rule on the reference triangle {(u, v): u, v >= 0, u + v <= 1}.

    p = 1 is the centroid rule; otherwise p x p Gauss points on the unit
    square collapsed onto the triangle (exact for degree 2p - 2).
    """
    if p == 1:
        return np.array([[1.0 / 3.0, 1.0 / 3.0]]), np.array([0.5])
    x, w = gauss_01(p)
    a, b = np.meshgrid(x, x, indexing="ij")
    wa, wb = np.meshgrid(w, w, indexing="ij")
    u = a.ravel()
    v = (b * (1.0 - a)).ravel()
    return np.column_stack([u, v]), (wa * wb * (1.0 - a)).ravel()


def tri_shape(uv: np.ndarray) -> np.ndarray:
    u, v = uv[:, 0], uv[:, 1]
    return np.column_stack([1.0 - u - v, u, v])


def quad_shape(st: np.ndarray):
    """Bilinear shape values (q, 4) and derivatives d/ds, d/dt (q, 4) each."""
    s, t = st[:, 0], st[:, 1]
    N = 0.25 * np.column_stack([(1 - s) * (1 - t), (1 + s) * (1 - t), (1 + s) * (1 + t), (1 - s) * (1 + t)])
    dNs = 0.25 * np.column_stack([-(1 - t), (1 - t), (1 + t), -(1 + t)])
    dNt = 0.25 * np.column_stack([-(1 - s), -(1 + s), (1 + s), (1 - s)])
    return N, dNs, dNt


@lru_cache(maxsize=None)
def _quad_ref(p: int):
    if p == 1:
        return quad_shape(np.zeros((1, 2))), np.array([4.0])
    pts, w = quad_rule(p)
    return quad_shape(pts), w


def facet_quadrature(nodes: np.ndarray, conn: np.ndarray, nverts: np.ndarray, p: int):
    """Physical quadrature on every facet with p*p points (1 point when p = 1).

    Returns
    -------
    points : (nf, q, 3)
    weights : (nf, q), including the surface Jacobian, so they sum to the area
    phi : (nf, q, 4) vertex shape values at the points (column 3 is 0 for triangles)
    """
    nf = len(conn)
    q = 1 if p == 1 else p * p
    points = np.zeros((nf, q, 3))
    weights = np.zeros((nf, q))
    phi = np.zeros((nf, q, 4))

    tri = np.flatnonzero(nverts == 3)
    if len(tri):
        uv, w = tri_rule(p)
        N = tri_shape(uv)
        x = nodes[conn[tri, :3]]
        twice = np.linalg.norm(np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), axis=1)
        points[tri] = np.einsum("qa,fai->fqi", N, x)
        weights[tri] = twice[:, None] * w[None, :]
        phi[tri, :, :3] = N

    quad = np.flatnonzero(nverts == 4)
    if len(quad):
        (N, dNs, dNt), w = _quad_ref(p)
        x = nodes[conn[quad]]
        xs = np.einsum("qa,fai->fqi", dNs, x)
        xt = np.einsum("qa,fai->fqi", dNt, x)
        jac = np.linalg.norm(np.cross(xs, xt), axis=2)
        points[quad] = np.einsum("qa,fai->fqi", N, x)
        if p == 1:
            # one-point rule must still integrate the area exactly for warped quads
            (_, dNs2, dNt2), w2 = _quad_ref(2)
            xs2 = np.einsum("qa,fai->fqi", dNs2, x)
            xt2 = np.einsum("qa,fai->fqi", dNt2, x)
            area = (np.linalg.norm(np.cross(xs2, xt2), axis=2) * w2).sum(axis=1)
            weights[quad] = area[:, None]
        else:
            weights[quad] = jac * w[None, :]
        phi[quad] = N
    return points, weights, phi


# Volume rules ---------------------------------------------------------------

_TA, _TB = 0.5854101966249685, 0.1381966011250105


def tet_rule():
    """Degree-2 four-point rule on the reference tetrahedron (volume 1/6)."""
    pts = np.array([[_TB, _TB, _TB], [_TA, _TB, _TB], [_TB, _TA, _TB], [_TB, _TB, _TA]])
    return pts, np.full(4, 1.0 / 24.0)


def hex_rule(p: int = 2):
    x, w = np.polynomial.legendre.leggauss(p)
    a, b, c = np.meshgrid(x, x, x, indexing="ij")
    wa, wb, wc = np.meshgrid(w, w, w, indexing="ij")
    return np.column_stack([a.ravel(), b.ravel(), c.ravel()]), (wa * wb * wc).ravel()
