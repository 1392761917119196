"""Implicit Euler time stepping with Newton-Krylov iterations.

Per time step the nonlinear residual is

    R(T) = V(T; T_old) - S T^4 [+ B(T)]     (Dirichlet rows: T_N - g_N)

where V is the FEM volume residual, S T^4 the absorbed cavity power and B
the loss to the ambient in open mode.  Its Jacobian is J = Jsp - Jcav with
the sparse part Jsp = dV/dT (+ dB/dT) and the dense cavity part applied
matrix-free.  Each Newton correction solves Jsp^{-1} J dx = -Jsp^{-1} R by
restarted GMRES, with Jsp factored by a sparse LU.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cavity import OPEN, CavityOperator, MemoryBudgetError, ambient_flux, apply_Jcav, apply_S
from .fem import FEMSpace, Material

__all__ = [
    "NewtonConfig", "TimeSeries", "HeatProblem", "NewtonError", "LinearSolveError", "MemoryBudgetError",
    "total_jacobian_action", "preconditioned_solve", "newton_step", "run_transient", "run_direct",
    "error_eT",
]


class NewtonError(RuntimeError):
    pass


class LinearSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class NewtonConfig:
    abs_tol: float = 1e-8
    rel_tol: float = 1e-6
    max_iters: int = 25
    krylov_rtol: float = 1e-8
    krylov_restart: int = 30
    krylov_max_iters: int = 300

    def __post_init__(self):
        if min(self.abs_tol, self.rel_tol, self.krylov_rtol) <= 0:
            raise ValueError("tolerances must be positive")
        if min(self.max_iters, self.krylov_restart, self.krylov_max_iters) < 1:
            raise ValueError("iteration limits must be >= 1")


@dataclass
class TimeSeries:
    """Per-step record of a transient run (step k holds the state at times[k])."""

    times: list = field(default_factory=list)
    T: list = field(default_factory=list)
    newton_iters: list = field(default_factory=list)
    krylov_iters: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    build_F_s: list = field(default_factory=list)
    build_LU_s: list = field(default_factory=list)
    apply_LU_s: list = field(default_factory=list)
    other_s: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.times)

    def rows(self) -> list[dict]:
        out = []
        for k in range(len(self)):
            T = self.T[k]
            out.append({
                "step": k + 1, "time_s": self.times[k],
                "min_T": float(T.min()), "max_T": float(T.max()), "mean_T": float(T.mean()),
                "newton_iters": self.newton_iters[k], "krylov_iters_total": self.krylov_iters[k],
                "build_F_s": self.build_F_s[k], "build_LU_s": self.build_LU_s[k],
                "apply_LU_s": self.apply_LU_s[k], "other_s": self.other_s[k],
            })
        return out


class HeatProblem:
    """Volume discretization plus optional cavity, source and Dirichlet data, in DoF numbering."""

    def __init__(self, space: FEMSpace, material: Material, cavity: CavityOperator | None = None,
                 dirichlet: dict | None = None, source=None):
        self.space = space
        self.material = material
        self.cavity = cavity
        self.source = source
        bc = dict(dirichlet or {})
        self.bc_dofs = np.array(sorted(bc), dtype=np.int64)
        self.bc_vals = np.array([bc[d] for d in self.bc_dofs], dtype=float)
        self._free = np.ones(space.n_dofs)
        self._free[self.bc_dofs] = 0.0

    @property
    def n_dofs(self) -> int:
        return self.space.n_dofs

    def residual(self, T, T_old, dt) -> np.ndarray:
        R = self.space.residual(self.material, T, T_old, dt, self.source)
        cav = self.cavity
        if cav is not None:
            R -= apply_S(cav, T ** 4)
            if cav.mode == OPEN:
                R += ambient_flux(cav, T)[0]
        if len(self.bc_dofs):
            R[self.bc_dofs] = T[self.bc_dofs] - self.bc_vals
        return R

    def jacobian_sparse(self, T, T_old, dt) -> sp.csr_matrix:
        J = self.space.jacobian(self.material, T, dt, T_old)
        if self.cavity is not None and self.cavity.mode == OPEN:
            J = (J + ambient_flux(self.cavity, T)[1]).tocsr()
        if len(self.bc_dofs):
            J = (sp.diags(self._free) @ J + sp.diags(1.0 - self._free)).tocsr()
        return J

    def action(self, Jsp, T):
        return lambda x: total_jacobian_action(Jsp, self.cavity, T, x, self._free)


def total_jacobian_action(Jsp, cav: CavityOperator | None, T, x, free_mask=None) -> np.ndarray:
    """J x = Jsp x - Jcav x.

    The cavity power enters the residual with a minus sign, hence the
    subtraction.  ``free_mask`` (1 on free rows, 0 on Dirichlet rows)
    removes the cavity contribution from constrained rows.
    """
    y = Jsp @ x
    if cav is not None:
        jc = apply_Jcav(cav, T, x)
        y = y - (jc if free_mask is None else free_mask * jc)
    return y


def preconditioned_solve(Jsp_factor, action, b, cfg: NewtonConfig = NewtonConfig()):
    """Left-preconditioned restarted GMRES for J x = b with J ~ action, M = Jsp.

    Returns ``(x, iterations)``.  Stops when the preconditioned residual has
    dropped by ``cfg.krylov_rtol``.
    """
    b = np.asarray(b, dtype=float)
    n = len(b)
    if not np.any(b):
        return np.zeros(n), 0
    rhs = Jsp_factor.solve(b)
    op = spla.LinearOperator((n, n), matvec=lambda v: Jsp_factor.solve(action(np.ravel(v))), dtype=float)
    count = [0]

    def cb(_):
        count[0] += 1

    restart = min(cfg.krylov_restart, n)
    x, info = spla.gmres(op, rhs, rtol=cfg.krylov_rtol, atol=0.0, restart=restart,
                         maxiter=math.ceil(cfg.krylov_max_iters / restart), callback=cb,
                         callback_type="pr_norm")
    if info != 0:
        raise LinearSolveError(f"GMRES did not converge within {cfg.krylov_max_iters} iterations")
    return x, count[0]


def newton_step(problem: HeatProblem, T_old, dt, cfg: NewtonConfig, T_guess=None):
    """Solve one implicit Euler step; returns ``(T, newton_iters, krylov_iters, residual_norms)``."""
    T = np.array(T_old if T_guess is None else T_guess, dtype=float)
    if len(problem.bc_dofs):
        T[problem.bc_dofs] = problem.bc_vals
    R = problem.residual(T, T_old, dt)
    norms = [float(np.linalg.norm(R))]
    target = max(cfg.abs_tol, cfg.rel_tol * norms[0])
    kry = 0
    it = 0
    while norms[-1] > target:
        if it == cfg.max_iters:
            raise NewtonError(f"Newton did not converge in {cfg.max_iters} iterations "
                              f"(residual {norms[-1]:.3e}, target {target:.3e})")
        Jsp = problem.jacobian_sparse(T, T_old, dt)
        # minimum degree on A^T + A suits the structurally symmetric FEM graph
        lu = spla.splu(Jsp.tocsc(), permc_spec="MMD_AT_PLUS_A")
        dx, k = preconditioned_solve(lu, problem.action(Jsp, T), -R, cfg)
        T += dx
        kry += k
        it += 1
        R = problem.residual(T, T_old, dt)
        norms.append(float(np.linalg.norm(R)))
        if not np.isfinite(norms[-1]):
            raise NewtonError("non-finite residual")
    return T, it, kry, norms


def run_transient(problem: HeatProblem, T0, dt: float, n_steps: int | None = None,
                  t_final: float | None = None, cfg: NewtonConfig = NewtonConfig(),
                  keep_states: bool = True, on_step=None) -> TimeSeries:
    """March ``n_steps`` implicit Euler steps (or up to ``t_final``) from ``T0``.

    The cavity operator is built before stepping; its build times are
    charged to the first step of the series.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if n_steps is None:
        if t_final is None:
            raise ValueError("give n_steps or t_final")
        n_steps = int(round(t_final / dt))
        if n_steps < 1 or abs(n_steps * dt - t_final) > 1e-9 * max(1.0, t_final):
            raise ValueError("dt must divide t_final")
    T = np.array(T0, dtype=float)
    if len(T) != problem.n_dofs:
        raise ValueError(f"initial state has length {len(T)}, expected {problem.n_dofs}")
    cav = problem.cavity
    ts = TimeSeries()
    for k in range(n_steps):
        t0 = time.perf_counter()
        lu0 = cav.timings["apply_LU_s"] if cav is not None else 0.0
        try:
            T, nit, kit, norms = newton_step(problem, T, dt, cfg)
        except (NewtonError, LinearSolveError) as exc:
            raise NewtonError(f"step {k + 1}: {exc}") from exc
        wall = time.perf_counter() - t0
        apply_lu = (cav.timings["apply_LU_s"] - lu0) if cav is not None else 0.0
        ts.times.append((k + 1) * dt)
        ts.T.append(T.copy() if keep_states else T)
        ts.newton_iters.append(nit)
        ts.krylov_iters.append(kit)
        ts.residuals.append(norms)
        first = k == 0 and cav is not None
        ts.build_F_s.append(cav.timings["build_F_s"] if first else 0.0)
        ts.build_LU_s.append(cav.timings["build_LU_s"] if first else 0.0)
        ts.apply_LU_s.append(apply_lu)
        ts.other_s.append(wall - apply_lu)
        if on_step is not None:
            on_step(k + 1, T)
    return ts


def run_direct(problem: HeatProblem, surf, T0, dt: float, n_steps: int | None = None,
               t_final: float | None = None, cfg: NewtonConfig = NewtonConfig(),
               memory_budget: float | None = 2 * 2**30, **cavity_kw) -> TimeSeries:
    """Same time stepping with a dense F and an explicit inverse of C.

    The cavity settings (mode, emissivity, ...) are taken from
    ``problem.cavity`` unless overridden in ``cavity_kw``.  Raises
    ``MemoryBudgetError`` when the dense matrices would not fit the budget.
    """
    from .cavity import DIRECT, build_cavity

    ref = problem.cavity
    if ref is not None:
        cavity_kw.setdefault("mode", ref.mode)
        cavity_kw.setdefault("emissivity", ref.emissivity)
        cavity_kw.setdefault("t_ambient", ref.t_ambient)
        cavity_kw.setdefault("sigma", ref.sigma)
    cav = None
    if ref is not None or surf is not None:
        cav = build_cavity(surf, problem.space.dofmap.node_to_dof, problem.n_dofs, kind=DIRECT,
                           memory_budget=memory_budget, **cavity_kw)
    direct = HeatProblem(problem.space, problem.material, cav,
                         dict(zip(problem.bc_dofs.tolist(), problem.bc_vals.tolist())), problem.source)
    return run_transient(direct, T0, dt, n_steps, t_final, cfg)


def error_eT(lowrank: TimeSeries, direct: TimeSeries) -> float:
    """max over steps of ||T - T_direct||_2 / ||T_direct||_2."""
    if len(lowrank) != len(direct) or not np.allclose(lowrank.times, direct.times, rtol=1e-12, atol=0):
        raise ValueError("time series are not on the same time grid")
    if len(direct) == 0:
        return 0.0
    return max(float(np.linalg.norm(a - b) / np.linalg.norm(b)) for a, b in zip(lowrank.T, direct.T))
