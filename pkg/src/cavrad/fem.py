"""First-order Lagrange finite elements for transient heat conduction.

The volume residual of one implicit Euler step is

    R_N(T) = int rho cp(T) (T - T_old)/dt phi_N + int k(T) grad T . grad phi_N - int f phi_N

and ``assemble_Jsparse`` returns its exact derivative with respect to T.
Element integrals are evaluated for all elements of a kind at once and
scattered into a fixed CSR pattern.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Union

import numpy as np
import scipy.sparse as sp

from .mesh import VolumeMesh
from .quadrature import hex_rule, tet_rule

SparseMatrix = sp.csr_matrix

Property = Union[float, tuple]


class FEMError(ValueError):
    pass


def hex8_shape(xi: float, eta: float, zeta: float):
    """Trilinear shape functions on [-1, 1]^3: values (8,) and reference gradients (8, 3)."""
    sx = np.array([-1, 1, 1, -1, -1, 1, 1, -1], dtype=float)
    sy = np.array([-1, -1, 1, 1, -1, -1, 1, 1], dtype=float)
    sz = np.array([-1, -1, -1, -1, 1, 1, 1, 1], dtype=float)
    a, b, c = 1 + sx * xi, 1 + sy * eta, 1 + sz * zeta
    N = a * b * c / 8.0
    dN = np.column_stack([sx * b * c, a * sy * c, a * b * sz]) / 8.0
    return N, dN


def tet4_shape(u: float, v: float, w: float):
    N = np.array([1.0 - u - v - w, u, v, w])
    dN = np.array([[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    return N, dN


class _Table:
    """Piecewise-linear property with constant extrapolation."""

    def __init__(self, temps, values):
        self.t = np.asarray(temps, dtype=float)
        self.v = np.asarray(values, dtype=float)
        if self.t.ndim != 1 or len(self.t) < 2 or len(self.t) != len(self.v):
            raise FEMError("property table needs matching 1-D temperature/value arrays of length >= 2")
        if np.any(np.diff(self.t) <= 0):
            raise FEMError("property table temperatures must be strictly increasing")
        self.slope = np.diff(self.v) / np.diff(self.t)

    def __call__(self, T):
        val = np.interp(T, self.t, self.v)
        seg = np.clip(np.searchsorted(self.t, T, side="right") - 1, 0, len(self.slope) - 1)
        inside = (T > self.t[0]) & (T < self.t[-1])
        return val, np.where(inside, self.slope[seg], 0.0)


def _property(p):
    if np.isscalar(p):
        c = float(p)
        return lambda T: (np.full(np.shape(T), c), np.zeros(np.shape(T)))
    return _Table(*p)


@dataclass(frozen=True)
class Material:
    """Density and specific heat / conductivity, each a constant or a (temps, values) table."""

    rho: float = 8000.0
    cp: Property = 500.0
    k: Property = 15.0

    def __post_init__(self):
        if not self.rho > 0:
            raise FEMError("density must be positive")
        for name in ("cp", "k"):
            p = getattr(self, name)
            vals = [p] if np.isscalar(p) else p[1]
            if np.any(np.asarray(vals, dtype=float) <= 0):
                raise FEMError(f"{name} must be positive")
        object.__setattr__(self, "_cp", _property(self.cp))
        object.__setattr__(self, "_k", _property(self.k))

    @property
    def constant(self) -> bool:
        return np.isscalar(self.cp) and np.isscalar(self.k)

    def eval_cp(self, T):
        return self._cp(T)

    def eval_k(self, T):
        return self._k(T)


class DofMap:
    """Node <-> DoF numbering over the nodes referenced by at least one element."""

    def __init__(self, mesh: VolumeMesh):
        used = np.zeros(mesh.n_nodes, dtype=bool)
        used[mesh.tets.ravel()] = True
        used[mesh.hexes.ravel()] = True
        self.dof_to_node = np.flatnonzero(used)
        self.node_to_dof = np.full(mesh.n_nodes, -1, dtype=np.int64)
        self.node_to_dof[self.dof_to_node] = np.arange(len(self.dof_to_node))
        self.n_nodes = mesh.n_nodes

    @property
    def n_dofs(self) -> int:
        return len(self.dof_to_node)

    def to_nodes(self, u: np.ndarray, fill: float = np.nan) -> np.ndarray:
        out = np.full(self.n_nodes, fill)
        out[self.dof_to_node] = u
        return out


class _Block:
    """Precomputed quadrature data for all elements of one kind."""

    def __init__(self, nodes, conn, dofs, kind):
        if kind == "tet4":
            pts, w = tet_rule()
            shape = tet4_shape
        else:
            pts, w = hex_rule(2)
            shape = hex8_shape
        Ns, dNs = zip(*(shape(*p) for p in pts))
        self.N = np.array(Ns)                      # (q, a)
        dN = np.array(dNs)                         # (q, a, 3)
        x = nodes[conn]                            # (e, a, 3)
        J = np.einsum("eai,qaj->eqij", x, dN)
        det = np.linalg.det(J)
        if np.any(det <= 0):
            raise FEMError("non-positive Jacobian determinant in element quadrature")
        Jinv = np.linalg.inv(J)
        self.G = np.einsum("qaj,eqji->eqai", dN, Jinv)   # physical gradients
        self.wdet = det * w[None, :]
        self.dofs = dofs[conn]


class FEMSpace:
    """Quadrature data and a fixed CSR pattern for a volume mesh."""

    def __init__(self, mesh: VolumeMesh, dofmap: DofMap | None = None):
        self.mesh = mesh
        self.dofmap = dofmap or DofMap(mesh)
        n2d = self.dofmap.node_to_dof
        self.blocks = [_Block(mesh.nodes, conn, n2d, kind)
                       for kind, conn in (("tet4", mesh.tets), ("hex8", mesh.hexes)) if len(conn)]
        n = self.n_dofs
        rows = np.concatenate([np.repeat(b.dofs, b.dofs.shape[1], axis=1).ravel() for b in self.blocks])
        cols = np.concatenate([np.tile(b.dofs, (1, b.dofs.shape[1])).ravel() for b in self.blocks])
        pattern = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        pattern.sum_duplicates()
        pattern.sort_indices()
        self.indptr, self.indices = pattern.indptr, pattern.indices
        keys = np.repeat(np.arange(n, dtype=np.int64), np.diff(self.indptr)) * n + self.indices
        self._scatter = np.searchsorted(keys, rows.astype(np.int64) * n + cols)

    @property
    def n_dofs(self) -> int:
        return self.dofmap.n_dofs

    def _assemble(self, element_mats) -> SparseMatrix:
        data = np.bincount(self._scatter, weights=np.concatenate([m.ravel() for m in element_mats]),
                           minlength=len(self.indices))
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=(self.n_dofs,) * 2)

    def _scatter_vec(self, element_vecs) -> np.ndarray:
        out = np.zeros(self.n_dofs)
        for b, v in zip(self.blocks, element_vecs):
            out += np.bincount(b.dofs.ravel(), weights=v.ravel(), minlength=self.n_dofs)
        return out

    def _fields(self, b, T_new, T_old):
        Te = T_new[b.dofs]
        Tq = Te @ b.N.T
        gT = np.einsum("eqai,ea->eqi", b.G, Te)
        To = T_old[b.dofs] @ b.N.T
        return Tq, gT, To

    def residual(self, mat: Material, T_new, T_old, dt: float, f=None) -> np.ndarray:
        _check_inputs(T_new, T_old, dt, self.n_dofs)
        out = []
        for b in self.blocks:
            Tq, gT, To = self._fields(b, T_new, T_old)
            cp, _ = mat.eval_cp(Tq)
            k, _ = mat.eval_k(Tq)
            mass = b.wdet * mat.rho * cp * (Tq - To) / dt
            src = 0.0 if f is None else b.wdet * (np.asarray(f)[b.dofs] @ b.N.T)
            r = np.einsum("eq,qa->ea", mass - src, b.N)
            r += np.einsum("eq,eqi,eqai->ea", b.wdet * k, gT, b.G, optimize=True)
            out.append(r)
        return self._scatter_vec(out)

    def jacobian(self, mat: Material, T_new, dt: float, T_old=None) -> SparseMatrix:
        T_old = T_new if T_old is None else T_old
        _check_inputs(T_new, T_old, dt, self.n_dofs)
        mats = []
        for b in self.blocks:
            Tq, gT, To = self._fields(b, T_new, T_old)
            cp, dcp = mat.eval_cp(Tq)
            k, dk = mat.eval_k(Tq)
            m = b.wdet * mat.rho * (cp + dcp * (Tq - To)) / dt
            Je = np.einsum("eq,qa,qb->eab", m, b.N, b.N, optimize=True)
            Je += np.einsum("eq,eqai,eqbi->eab", b.wdet * k, b.G, b.G, optimize=True)
            if not np.isscalar(mat.k):
                Je += np.einsum("eq,eqi,eqai,qb->eab", b.wdet * dk, gT, b.G, b.N)
            mats.append(Je)
        return self._assemble(mats)

    def mass_matrix(self, mat: Material | None = None, T=None) -> SparseMatrix:
        """Consistent mass matrix, weighted by rho*cp(T) when a material is given."""
        mats = []
        for b in self.blocks:
            wq = b.wdet
            if mat is not None:
                Tq = np.zeros_like(wq) if T is None else T[b.dofs] @ b.N.T
                wq = wq * mat.rho * mat.eval_cp(Tq)[0]
            mats.append(np.einsum("eq,qa,qb->eab", wq, b.N, b.N))
        return self._assemble(mats)

    def stiffness_matrix(self, kvalue: float = 1.0) -> SparseMatrix:
        return self._assemble([np.einsum("eq,eqai,eqbi->eab", b.wdet * kvalue, b.G, b.G)
                               for b in self.blocks])


def _check_inputs(T_new, T_old, dt, n):
    if not dt > 0:
        raise FEMError("dt must be positive")
    for v in (T_new, T_old):
        if len(v) != n:
            raise FEMError(f"temperature vector has length {len(v)}, expected {n}")
        if not np.all(np.isfinite(v)):
            raise FEMError("non-finite temperature")


def assemble_volume_residual(mesh, mat: Material, T_new, T_old, dt: float, f=None,
                             space: FEMSpace | None = None) -> np.ndarray:
    """Volume residual of one implicit Euler step (mass, conduction, source) per DoF."""
    space = space or FEMSpace(mesh)
    return space.residual(mat, np.asarray(T_new, float), np.asarray(T_old, float), dt, f)


def assemble_Jsparse(mesh, mat: Material, T_new, dt: float, T_old=None,
                     space: FEMSpace | None = None) -> SparseMatrix:
    """Exact derivative of ``assemble_volume_residual`` with respect to ``T_new``.

    ``T_old`` only matters for temperature-dependent cp; it defaults to ``T_new``.
    """
    space = space or FEMSpace(mesh)
    T_new = np.asarray(T_new, float)
    return space.jacobian(mat, T_new, dt, None if T_old is None else np.asarray(T_old, float))


def _bc_arrays(bc):
    if isinstance(bc, Mapping):
        items = list(bc.items())
    else:
        items = list(bc)
    if not items:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    nodes, vals = zip(*items)
    return np.asarray(nodes, dtype=np.int64), np.asarray(vals, dtype=float)


def apply_dirichlet(J: SparseMatrix, residual: np.ndarray, bc: Mapping | Iterable, T: np.ndarray):
    """Replace constrained rows: residual_N = T_N - value and J row N = e_N.

    ``bc`` maps DoF index to prescribed value (a mapping or (dof, value) pairs).
    Returns new ``(J, residual)``; the inputs are not modified.
    """
    dofs, vals = _bc_arrays(bc)
    if len(dofs) == 0:
        return J, residual
    n = J.shape[0]
    if dofs.min() < 0 or dofs.max() >= n:
        raise FEMError("Dirichlet node out of range")
    keep = np.ones(n)
    keep[dofs] = 0.0
    fixed = 1.0 - keep
    J = (sp.diags(keep) @ J + sp.diags(fixed)).tocsr()
    J.sort_indices()
    residual = residual.copy()
    residual[dofs] = T[dofs] - vals
    return J, residual
