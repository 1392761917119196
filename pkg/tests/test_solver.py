import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from cavrad.cavity import CLOSED, DIRECT, LOWRANK, OPEN, MemoryBudgetError, build_cavity, direct_bytes_estimate
from cavrad.fem import Material
from cavrad.generators import CAVITY_TAG, gen_fibonacci_bodies
from cavrad.solver import (HeatProblem, NewtonConfig, NewtonError, TimeSeries, error_eT, newton_step,
                           preconditioned_solve, run_direct, run_transient, total_jacobian_action)

from conftest import Case, unit_hex

MAT = Material()


def cavity(case, **kw):
    kw.setdefault("kind", DIRECT)
    return build_cavity(case.surf, case.space.dofmap.node_to_dof, case.space.n_dofs, **kw)


def hot_cold(case, hot=900.0, cold=300.0):
    z = case.mesh.nodes[case.space.dofmap.dof_to_node, 2]
    return np.where(z > z.mean(), hot, cold)


def series(*states, dt=1.0):
    ts = TimeSeries()
    for k, T in enumerate(states):
        ts.times.append((k + 1) * dt)
        ts.T.append(np.asarray(T, float))
    return ts


# --- Jacobian action ----------------------------------------------------------

def test_isolated_cavity_action_is_sparse_only(rng):
    case = Case(unit_hex(tag=CAVITY_TAG))
    prob = HeatProblem(case.space, MAT, cavity(case))
    T = 300 + 100 * rng.random(8)
    Jsp = prob.jacobian_sparse(T, T, 10.0)
    x = rng.normal(size=8)
    np.testing.assert_array_equal(total_jacobian_action(Jsp, prob.cavity, T, x), Jsp @ x)
    assert not np.any(total_jacobian_action(Jsp, prob.cavity, T, np.zeros(8)))


@pytest.mark.parametrize("mode", [CLOSED, OPEN])
def test_full_residual_finite_difference(plates4, rng, mode):
    prob = HeatProblem(plates4.space, MAT, cavity(plates4, mode=mode))
    T_old = hot_cold(plates4)
    T = T_old + 20 * rng.normal(size=len(T_old))
    dt = 25.0
    x = rng.normal(size=len(T))
    h = 1e-4 * np.linalg.norm(T) / np.linalg.norm(x)
    fd = (prob.residual(T + h * x, T_old, dt) - prob.residual(T - h * x, T_old, dt)) / (2 * h)
    exact = prob.action(prob.jacobian_sparse(T, T_old, dt), T)(x)
    assert np.linalg.norm(fd - exact) <= 1e-5 * np.linalg.norm(exact)


def test_dirichlet_rows_in_action(plates4, rng):
    prob = HeatProblem(plates4.space, MAT, cavity(plates4), dirichlet={0: 500.0, 7: 400.0})
    T = hot_cold(plates4)
    Jsp = prob.jacobian_sparse(T, T, 25.0)
    x = rng.normal(size=len(T))
    y = prob.action(Jsp, T)(x)
    assert y[0] == x[0] and y[7] == x[7]
    R = prob.residual(T, T, 25.0)
    assert R[0] == T[0] - 500.0


# --- preconditioned Krylov ----------------------------------------------------

def test_no_cavity_one_iteration(plates4, rng):
    Jsp = plates4.space.jacobian(MAT, np.full(plates4.space.n_dofs, 400.0), 25.0)
    lu = spla.splu(Jsp.tocsc())
    b = rng.normal(size=Jsp.shape[0])
    x, its = preconditioned_solve(lu, lambda v: Jsp @ v, b)
    assert its == 1
    assert np.linalg.norm(Jsp @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_zero_rhs(plates4):
    Jsp = plates4.space.jacobian(MAT, np.full(plates4.space.n_dofs, 400.0), 25.0)
    x, its = preconditioned_solve(spla.splu(Jsp.tocsc()), lambda v: Jsp @ v, np.zeros(Jsp.shape[0]))
    assert its == 0 and not np.any(x)


def test_krylov_iterations_small(plates4):
    prob = HeatProblem(plates4.space, MAT, cavity(plates4, kind=LOWRANK, n_min=8, eps_rel=1e-6))
    ts = run_transient(prob, hot_cold(plates4, 1000.0), 25.0, 5)
    per_newton = np.array(ts.krylov_iters) / np.array(ts.newton_iters)
    assert per_newton.max() <= 20


def test_krylov_failure_reported(plates4):
    prob = HeatProblem(plates4.space, Material(rho=1.0, cp=1.0, k=1e-3), cavity(plates4, emissivity=1.0))
    cfg = NewtonConfig(krylov_max_iters=1, krylov_restart=1, krylov_rtol=1e-14)
    with pytest.raises(NewtonError, match="step 1"):
        run_transient(prob, hot_cold(plates4, 1500.0), 1e3, 1, cfg=cfg)


# --- Newton and time stepping ---------------------------------------------------

def test_uniform_state_stays_uniform(plates4):
    prob = HeatProblem(plates4.space, MAT, cavity(plates4, kind=LOWRANK, n_min=8, eps_rel=1e-3))
    ts = run_transient(prob, np.full(plates4.space.n_dofs, 650.0), 25.0, 40)
    assert len(ts) == 40
    for T in ts.T:
        assert T.max() - T.min() <= 1e-8


def test_conduction_only_one_newton_iteration(plates4):
    prob = HeatProblem(plates4.space, MAT)
    x = plates4.mesh.nodes[plates4.space.dofmap.dof_to_node, 0]
    ts = run_transient(prob, 300.0 + 400.0 * x, 25.0, t_final=250.0)
    assert ts.newton_iters == [1] * 10
    assert ts.times == pytest.approx(np.arange(1, 11) * 25.0)


def test_newton_contracts(plates4):
    prob = HeatProblem(plates4.space, Material(rho=100.0, cp=100.0, k=1.0), cavity(plates4, emissivity=0.9))
    _, nit, _, norms = newton_step(prob, hot_cold(plates4, 1200.0), 100.0, NewtonConfig(rel_tol=1e-12))
    assert 2 <= nit <= 10
    ratios = np.array(norms[2:]) / np.array(norms[1:-1])
    assert np.all(ratios < 1)


def test_newton_failure_names_step(plates4):
    prob = HeatProblem(plates4.space, MAT, cavity(plates4))
    with pytest.raises(NewtonError, match="step 1"):
        run_transient(prob, hot_cold(plates4), 25.0, 1, cfg=NewtonConfig(max_iters=1, rel_tol=1e-14,
                                                                            abs_tol=1e-30))


def test_dirichlet_held(plates4):
    z = plates4.mesh.nodes[plates4.space.dofmap.dof_to_node, 2]
    # hold the face of the upper plate that looks at the lower one
    bc = {int(d): 1000.0 for d in np.flatnonzero(z == 1.0)}
    prob = HeatProblem(plates4.space, MAT, cavity(plates4), dirichlet=bc)
    ts = run_transient(prob, np.full(len(z), 300.0), 25.0, 3)
    dofs = list(bc)
    np.testing.assert_array_equal(ts.T[-1][dofs], 1000.0)
    # the facing plate is heated by radiation alone
    assert ts.T[-1][z < z.mean()].mean() > 300.0


def test_fibonacci_trend():
    # centimetre-sized bodies: conduction inside each body outpaces the time step
    case = Case(gen_fibonacci_bodies(1, radius=0.0055, scale=0.01))
    regions = case.mesh.node_regions()[case.space.dofmap.dof_to_node]
    T0 = np.where(regions == 0, 1000.0, 300.0)
    prob = HeatProblem(case.space, MAT, cavity(case, kind=LOWRANK, eps_rel=1e-3))
    ts = run_transient(prob, T0, 25.0, 10)
    maxes = [T0.max()] + [T.max() for T in ts.T]
    mins = [T0.min()] + [T.min() for T in ts.T]
    assert np.all(np.diff(maxes) < 0)
    assert np.all(np.diff(mins) > 0)


def test_time_grid_validation(plates4):
    prob = HeatProblem(plates4.space, MAT)
    T0 = np.full(plates4.space.n_dofs, 300.0)
    with pytest.raises(ValueError):
        run_transient(prob, T0, 30.0, t_final=1000.0)
    with pytest.raises(ValueError):
        run_transient(prob, T0[:-1], 25.0, 2)
    with pytest.raises(ValueError):
        run_transient(prob, T0, -1.0, 2)


def test_newton_config_validation():
    with pytest.raises(ValueError):
        NewtonConfig(abs_tol=0.0)
    with pytest.raises(ValueError):
        NewtonConfig(max_iters=0)


# --- direct path ----------------------------------------------------------------

def test_lowrank_matches_direct(plates4):
    prob = HeatProblem(plates4.space, MAT, cavity(plates4, kind=LOWRANK, eps_rel=1e-15, n_min=4))
    T0 = hot_cold(plates4, 1000.0)
    lr = run_transient(prob, T0, 25.0, 10)
    d = run_direct(prob, plates4.surf, T0, 25.0, 10)
    assert error_eT(lr, d) <= 1e-9


def test_conduction_only_direct_identical(plates4):
    prob = HeatProblem(plates4.space, MAT)
    T0 = hot_cold(plates4)
    a = run_transient(prob, T0, 25.0, 4)
    b = run_direct(prob, None, T0, 25.0, 4)
    for x, y in zip(a.T, b.T):
        np.testing.assert_allclose(x, y, rtol=1e-14)


def test_direct_refuses_large_plates():
    # m = 106 gives 2 * 106^2 * 2 = 22472 facets; the dense matrices exceed 2 GiB
    assert direct_bytes_estimate(22472) > 2 * 2**30
    assert 8 * 22472 ** 2 > 4e9 - 1e8


def test_direct_refusal_raised(plates4):
    prob = HeatProblem(plates4.space, MAT, cavity(plates4))
    with pytest.raises(MemoryBudgetError):
        run_direct(prob, plates4.surf, hot_cold(plates4), 25.0, 1, memory_budget=1000)


# --- error metric -----------------------------------------------------------------

def test_error_identical():
    a = series([1.0, 2.0], [3.0, 4.0])
    assert error_eT(a, a) == 0.0


def test_error_homogeneous():
    d = series([300.0, 400.0, 500.0])
    assert error_eT(series(1.003 * d.T[0]), d) == pytest.approx(0.003, rel=1e-12)


def test_error_max_over_steps():
    d = series([1.0, 0.0], [0.0, 2.0])
    lr = series([1.1, 0.0], [0.0, 2.5])
    assert error_eT(lr, d) == pytest.approx(0.25)


def test_error_misaligned():
    with pytest.raises(ValueError):
        error_eT(series([1.0]), series([1.0], [1.0]))
    with pytest.raises(ValueError):
        error_eT(series([1.0], dt=1.0), series([1.0], dt=2.0))


def test_rows_schema(plates4):
    ts = run_transient(HeatProblem(plates4.space, MAT), hot_cold(plates4), 25.0, 2)
    rows = ts.rows()
    assert [r["step"] for r in rows] == [1, 2]
    assert set(rows[0]) == {"step", "time_s", "min_T", "max_T", "mean_T", "newton_iters", "krylov_iters_total",
                            "build_F_s", "build_LU_s", "apply_LU_s", "other_s"}


def test_source_heats(plates4):
    n = plates4.space.n_dofs
    prob = HeatProblem(plates4.space, MAT, source=np.full(n, 1e6))
    ts = run_transient(prob, np.full(n, 300.0), 25.0, 1)
    # uniform source on an insulated body raises T by f dt / (rho cp)
    np.testing.assert_allclose(ts.T[0], 300.0 + 1e6 * 25.0 / (8000 * 500), rtol=1e-10)


def test_sparse_jacobian_open_mode_symmetric_pattern(plates4):
    prob = HeatProblem(plates4.space, MAT, cavity(plates4, mode=OPEN))
    J = prob.jacobian_sparse(hot_cold(plates4), hot_cold(plates4), 25.0)
    P = sp.csr_matrix((J != 0).astype(int))
    assert (P - P.T).nnz == 0
