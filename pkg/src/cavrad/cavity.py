"""Radiation exchange between cavity facets, mapped to nodal heat loads.

With D = diag(eps), Lambda = diag((1 - eps_i)/A_i) and C = I - Lambda F,

    R = sigma D F C^{-1} D,     r = R 1,     S = P^T (R - diag(r)) P,

and the absorbed nodal power is Q = S eta with eta = T^4.  The reflection
matrix is either a hierarchical matrix with an H-LU (``kind='lowrank'``)
or a dense matrix with an explicit inverse (``kind='direct'``).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .cluster import build_block_tree, build_index_tree
from .hmatrix import HluFactors, HMatrix, assemble_hmatrix, hlu_factorize, solve_lu
from .mesh import SurfaceMesh
from .quadrature import facet_quadrature
from .viewfactor import (QuadPolicy, RowSums, ViewFactorKernel, assemble_dense_F, compute_row_sums,
                         scale_closed_cavity)

STEFAN_BOLTZMANN = 5.669e-8
CLOSED = "closed"
OPEN = "open"
LOWRANK = "lowrank"
DIRECT = "direct"


class MemoryBudgetError(MemoryError):
    """A dense reference computation would exceed the configured byte budget."""


def direct_bytes_estimate(n_facets: int) -> int:
    """F, C and C^{-1} held as dense doubles."""
    return 3 * 8 * n_facets * n_facets


def build_projection(surf: SurfaceMesh, node_to_dof: np.ndarray, n_dofs: int) -> sp.csr_matrix:
    """P_iM = (1/A_i) int_{facet i} phi_M dS (n_facets x n_dofs)."""
    _, w, phi = facet_quadrature(surf.parent.nodes, surf.conn, surf.nverts, 2)
    vals = np.einsum("fq,fqa->fa", w, phi) / w.sum(axis=1)[:, None]
    rows = np.repeat(np.arange(surf.n_facets), 4)
    conn = surf.conn.ravel()
    keep = conn >= 0
    cols = node_to_dof[conn[keep]]
    if np.any(cols < 0):
        raise ValueError("facet references a node without a degree of freedom")
    P = sp.csr_matrix((vals.ravel()[keep], (rows[keep], cols)), shape=(surf.n_facets, n_dofs))
    P.sum_duplicates()
    return P


def build_reflection(F, emissivity, areas):
    """C = I - Lambda F, for a dense array or an HMatrix (returns a new object)."""
    lam = (1.0 - np.asarray(emissivity, float)) / np.asarray(areas, float)
    if isinstance(F, HMatrix):
        C = F.copy()
        C.scale_rows(-lam)
        C.add_identity()
        return C
    C = -lam[:, None] * F
    C[np.diag_indices_from(C)] += 1.0
    return C


def _facet_point_matrix(surf: SurfaceMesh, node_to_dof, n_dofs, order: int = 3):
    """Sparse evaluation matrix (points x dofs) and weights (points,) over all facets."""
    _, w, phi = facet_quadrature(surf.parent.nodes, surf.conn, surf.nverts, order)
    nf, q = w.shape
    rows = np.repeat(np.arange(nf * q), 4)
    cols = np.repeat(surf.conn, q, axis=0).ravel()
    vals = phi.reshape(-1)
    keep = cols >= 0
    Phi = sp.csr_matrix((vals[keep], (rows[keep], node_to_dof[cols[keep]])), shape=(nf * q, n_dofs))
    return Phi, w.reshape(-1)


@dataclass
class CavityOperator:
    """Everything needed to evaluate the cavity heat load and its Jacobian action."""

    F: object
    solver: object              # HluFactors, or dense C^{-1}
    emissivity: np.ndarray
    areas: np.ndarray
    P: sp.csr_matrix
    rowsums: RowSums
    sigma: float = STEFAN_BOLTZMANN
    mode: str = CLOSED
    t_ambient: float = 300.0
    kind: str = LOWRANK
    r: np.ndarray | None = None
    timings: dict = field(default_factory=lambda: {"build_F_s": 0.0, "build_LU_s": 0.0, "apply_LU_s": 0.0})
    _Phi: sp.csr_matrix | None = None
    _wamb: np.ndarray | None = None

    def __post_init__(self):
        self.emissivity = np.broadcast_to(np.asarray(self.emissivity, float), self.areas.shape).copy()
        if np.any((self.emissivity <= 0) | (self.emissivity > 1)):
            raise ValueError("emissivity must lie in (0, 1]")
        if self.mode not in (CLOSED, OPEN):
            raise ValueError(f"unknown cavity mode {self.mode!r}")
        if self.r is None:
            self.r = precompute_row_sums_R(self)

    @property
    def lam(self) -> np.ndarray:
        return (1.0 - self.emissivity) / self.areas

    @property
    def n_facets(self) -> int:
        return len(self.areas)

    @property
    def n_dofs(self) -> int:
        return self.P.shape[1]

    def F_matvec(self, x):
        return self.F.matvec(x) if isinstance(self.F, HMatrix) else self.F @ x

    def C_solve(self, x):
        t = time.perf_counter()
        out = solve_lu(self.solver, x) if isinstance(self.solver, HluFactors) else self.solver @ x
        self.timings["apply_LU_s"] += time.perf_counter() - t
        return out

    def R_matvec(self, w):
        """R w = sigma D F C^{-1} D w."""
        e = self.emissivity
        return self.sigma * e * self.F_matvec(self.C_solve(e * w))


def precompute_row_sums_R(op: CavityOperator) -> np.ndarray:
    """r = R 1 from one solve and one product."""
    return op.R_matvec(np.ones(op.n_facets))


def apply_S(op: CavityOperator, eta_nodal: np.ndarray) -> np.ndarray:
    """Nodal absorbed power Q = P^T (R w - r * w) with w = P eta."""
    eta = np.asarray(eta_nodal, dtype=float)
    if eta.shape[0] != op.n_dofs:
        raise ValueError(f"nodal vector of length {eta.shape[0]}, expected {op.n_dofs}")
    w = op.P @ eta
    y = op.R_matvec(w) - op.r * w
    return op.P.T @ y


def apply_Jcav(op: CavityOperator, T: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Derivative of apply_S(op, T**4) at T in direction x."""
    return apply_S(op, 4.0 * np.asarray(T) ** 3 * np.asarray(x))


def _ambient_data(op: CavityOperator, surf: SurfaceMesh, node_to_dof):
    Phi, w = _facet_point_matrix(surf, node_to_dof, op.n_dofs, order=3)
    op._Phi = Phi
    op._wamb = w


def ambient_flux(op: CavityOperator, T_h: np.ndarray, rowsums: RowSums | None = None):
    """Power lost to the ambient through the open fraction of each facet.

    B_N = sum_i sigma eps_i (1 - c_i) int_i (T_h^4 - T_amb^4) phi_N dS.
    Returns ``(B, dB)`` with ``dB`` the sparse Jacobian dB/dT.  The ambient
    quadrature data are prepared by ``build_cavity``; ``rowsums`` defaults
    to the ones stored on the operator.
    """
    if op._Phi is None:
        raise ValueError("ambient quadrature data not prepared; use build_cavity(..., mode='open')")
    c = (rowsums or op.rowsums).c
    q = len(op._wamb) // op.n_facets
    w = op._wamb * np.repeat(op.sigma * op.emissivity * (1.0 - c), q)
    Tq = op._Phi @ np.asarray(T_h, dtype=float)
    B = op._Phi.T @ (w * (Tq ** 4 - op.t_ambient ** 4))
    dB = (op._Phi.T @ sp.diags(4.0 * w * Tq ** 3) @ op._Phi).tocsr()
    return B, dB


def build_cavity(surf: SurfaceMesh, node_to_dof: np.ndarray, n_dofs: int, *, emissivity=0.8,
                 mode: str = CLOSED, t_ambient: float = 300.0, kind: str = LOWRANK,
                 eps_rel: float = 1e-3, n_min: int = 100, adm_const: float = 2.0,
                 policy: QuadPolicy | None = None, sigma: float = STEFAN_BOLTZMANN,
                 memory_budget: float | None = None) -> CavityOperator:
    """Assemble F, apply the row-sum treatment, build and factor C, prepare P.

    ``kind='lowrank'`` compresses F with ACA on an admissibility block tree
    and factors C by H-LU; ``kind='direct'`` forms F densely and inverts C
    explicitly, refusing with ``MemoryBudgetError`` when the dense storage
    would exceed ``memory_budget`` bytes.
    """
    if kind not in (LOWRANK, DIRECT):
        raise ValueError(f"unknown cavity kind {kind!r}")
    n = surf.n_facets
    if kind == DIRECT and memory_budget is not None and direct_bytes_estimate(n) > memory_budget:
        raise MemoryBudgetError(f"dense cavity with {n} facets needs ~{direct_bytes_estimate(n) / 2**30:.2f} GiB, "
                                f"budget is {memory_budget / 2**30:.2f} GiB")
    timings = {"build_F_s": 0.0, "build_LU_s": 0.0, "apply_LU_s": 0.0}
    t0 = time.perf_counter()
    kernel = ViewFactorKernel(surf, policy)
    if kind == LOWRANK:
        btree = build_block_tree(build_index_tree(surf.centroids, n_min), adm_const)
        F = assemble_hmatrix(kernel, btree, eps_rel)
        F_action = F.matvec
    else:
        F = assemble_dense_F(surf, kernel=kernel)
        F_action = F
    rowsums = compute_row_sums(F_action, surf.areas)
    if mode == CLOSED:
        scale_closed_cavity(F, rowsums)
    timings["build_F_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    eps_vec = np.broadcast_to(np.asarray(emissivity, float), (n,))
    C = build_reflection(F, eps_vec, surf.areas)
    if kind == LOWRANK:
        solver = hlu_factorize(C, eps_rel)
    else:
        solver = np.linalg.inv(C)
    del C
    timings["build_LU_s"] = time.perf_counter() - t0

    P = build_projection(surf, node_to_dof, n_dofs)
    op = CavityOperator(F, solver, eps_vec, np.asarray(surf.areas, float), P, rowsums, sigma=sigma,
                        mode=mode, t_ambient=t_ambient, kind=kind, timings=timings)
    op.timings["apply_LU_s"] = 0.0
    if mode == OPEN:
        _ambient_data(op, surf, node_to_dof)
    return op
