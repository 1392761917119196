import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from cavrad.cluster import DENSE, LOWRANK, build_block_tree, build_index_tree
from cavrad.hmatrix import (HLUError, LowRank, aca_full_pivot, assemble_hmatrix, block_add, block_mul,
                            hlu_factorize, hmatrix_from_dense, recompress, solve_lu, storage_report)
from cavrad.viewfactor import ViewFactorKernel, assemble_dense_F

from conftest import reflection_pair


def random_lowrank(rng, m, n, k, decay=1.0):
    U = rng.normal(size=(m, k)) * decay ** np.arange(k)
    return U @ rng.normal(size=(n, k)).T


def smooth_kernel(n, rng, dim=3):
    """Points and a Laplace-like kernel matrix with admissible far blocks."""
    x = rng.random((n, dim))
    d = np.linalg.norm(x[:, None] - x[None], axis=-1)
    return x, 1.0 / (0.05 + d)


# --- ACA --------------------------------------------------------------------

def test_aca_rank_one():
    X = np.outer(np.arange(1.0, 6.0), np.arange(1.0, 4.0))
    lr = aca_full_pivot(X, 1e-12)
    assert lr.rank == 1 and lr.residual_norm == 0.0
    np.testing.assert_allclose(lr.to_dense(), X, rtol=1e-15)


def test_aca_zero_block():
    lr = aca_full_pivot(np.zeros((7, 3)), 1e-3)
    assert lr.rank == 0 and lr.shape == (7, 3)


def test_aca_known_rank(rng):
    X = random_lowrank(rng, 50, 40, 5)
    lr = aca_full_pivot(X, 1e-12)
    assert lr.rank == 5
    assert np.linalg.norm(X - lr.to_dense()) <= 1e-10 * np.linalg.norm(X)


def test_aca_does_not_modify_input(rng):
    X = rng.normal(size=(6, 6))
    keep = X.copy()
    aca_full_pivot(X, 1e-2)
    np.testing.assert_array_equal(X, keep)


def test_aca_rejects_bad_tolerance():
    with pytest.raises(ValueError):
        aca_full_pivot(np.ones((2, 2)), 0.0)


@settings(max_examples=40, deadline=None)
@given(m=st.integers(1, 60), n=st.integers(1, 60), k=st.integers(1, 12),
       eps=st.sampled_from([1e-1, 1e-3, 1e-6, 1e-10]), seed=st.integers(0, 999))
def test_aca_certificate(m, n, k, eps, seed):
    rng = np.random.default_rng(seed)
    X = random_lowrank(rng, m, n, k, decay=0.3) + 1e-8 * rng.normal(size=(m, n))
    lr = aca_full_pivot(X, eps)
    err = np.linalg.norm(X - lr.to_dense())
    assert lr.rank <= min(m, n)
    assert lr.residual_norm <= eps * lr.block_norm
    assert err == pytest.approx(lr.residual_norm, rel=1e-6, abs=1e-12 * lr.block_norm)
    assert err <= eps * np.linalg.norm(X) * (1 + 1e-9)


# --- recompression ----------------------------------------------------------

def test_recompress_duplicate_columns(rng):
    U = rng.normal(size=(20, 3))
    V = rng.normal(size=(15, 3))
    blk = LowRank(np.hstack([U, U]), np.hstack([V, V]))
    out = recompress(blk, 1e-12)
    assert out.rank == 3 < blk.rank
    np.testing.assert_allclose(out.to_dense(), blk.to_dense(), atol=1e-12)


def test_recompress_keeps_separated_rank(rng):
    Q1 = np.linalg.qr(rng.normal(size=(30, 4)))[0]
    Q2 = np.linalg.qr(rng.normal(size=(25, 4)))[0]
    s = np.array([1.0, 0.5, 0.25, 0.125])
    out = recompress(LowRank(Q1 * s, Q2), 0.1)
    assert out.rank == 4


def test_recompress_matches_svd_truncation(rng):
    X = random_lowrank(rng, 40, 30, 8, decay=0.4)
    W, s, Zt = np.linalg.svd(X)
    k = int(np.count_nonzero(s > 1e-2 * s[0]))
    ref = (W[:, :k] * s[:k]) @ Zt[:k]
    lr = aca_full_pivot(X, 1e-14)
    out = recompress(lr, 1e-2)
    assert out.rank == k
    assert abs(np.linalg.norm(X - out.to_dense()) - np.linalg.norm(X - ref)) <= 1e-12 * np.linalg.norm(X)


@settings(max_examples=30, deadline=None)
@given(k=st.integers(1, 10), eps=st.floats(1e-8, 0.5), seed=st.integers(0, 999))
def test_recompress_spectral_bound(k, eps, seed):
    rng = np.random.default_rng(seed)
    blk = LowRank(rng.normal(size=(25, k)) * 0.5 ** np.arange(k), rng.normal(size=(18, k)))
    out = recompress(blk, eps)
    X = blk.to_dense()
    assert out.rank <= blk.rank
    assert np.linalg.norm(X - out.to_dense(), 2) <= eps * np.linalg.norm(X, 2) * (1 + 1e-10) + 1e-14


def test_recompress_keeps_zero_rows(rng):
    U = rng.normal(size=(10, 3))
    U[[2, 7]] = 0.0
    out = recompress(LowRank(U, rng.normal(size=(8, 3))), 1e-1)
    assert not out.U[[2, 7]].any()


# --- block arithmetic -------------------------------------------------------

def test_add_cancels(rng):
    A = LowRank(rng.normal(size=(12, 3)), rng.normal(size=(9, 3)))
    B = LowRank(-A.U, A.V.copy())
    assert block_add(A, B, 1e-10).rank == 0


def test_dense_times_identity(rng):
    D = rng.normal(size=(6, 6))
    np.testing.assert_allclose(block_mul(D, np.eye(6), 1e-3), D, rtol=0, atol=1e-15)


def test_lowrank_product(rng):
    A = LowRank(rng.normal(size=(20, 3)), rng.normal(size=(15, 3)))
    B = LowRank(rng.normal(size=(15, 4)), rng.normal(size=(10, 4)))
    P = block_mul(A, B, 1e-10)
    ref = A.to_dense() @ B.to_dense()
    assert P.rank <= 3
    assert np.linalg.norm(P.to_dense() - ref) <= 1e-10 * np.linalg.norm(ref)


@settings(max_examples=30, deadline=None)
@given(kinds=st.tuples(st.booleans(), st.booleans()), seed=st.integers(0, 999))
def test_mixed_operations(kinds, seed):
    rng = np.random.default_rng(seed)

    def payload(low, m, n):
        return LowRank(rng.normal(size=(m, 2)), rng.normal(size=(n, 2))) if low else rng.normal(size=(m, n))

    def dense(x):
        return x.to_dense() if isinstance(x, LowRank) else x

    A, B = payload(kinds[0], 7, 5), payload(kinds[1], 7, 5)
    S = block_add(A, B, 1e-12)
    np.testing.assert_allclose(dense(S), dense(A) + dense(B), atol=1e-11)
    C = payload(kinds[1], 5, 6)
    P = block_mul(A, C, 1e-12)
    np.testing.assert_allclose(dense(P), dense(A) @ dense(C), atol=1e-11)
    assert isinstance(P, LowRank) == (kinds[0] or kinds[1])


def test_shape_mismatch():
    with pytest.raises(ValueError):
        block_add(np.ones((2, 3)), np.ones((3, 2)), 1e-3)
    with pytest.raises(ValueError):
        block_mul(np.ones((2, 3)), np.ones((2, 3)), 1e-3)


# --- assembly and products --------------------------------------------------

def test_identity_assembly(rng):
    tree = build_index_tree(rng.random((200, 3)), n_min=20)
    bt = build_block_tree(tree)
    H = hmatrix_from_dense(np.eye(200), bt, 1e-3)
    for b in H.leaves():
        if b.kind == LOWRANK:
            assert b.lr.rank == 0
        elif b.row is b.col:
            np.testing.assert_array_equal(b.dense, np.eye(b.row.size))
    x = rng.normal(size=200)
    assert np.linalg.norm(H @ x - x) <= 1e-15 * np.linalg.norm(x)
    assert not np.any(H @ np.zeros(200))


def test_matvec_lossless(rng):
    x, A = smooth_kernel(400, rng)
    bt = build_block_tree(build_index_tree(x, 25))
    H = hmatrix_from_dense(A, bt, 1e-15)
    v = rng.normal(size=400)
    assert np.linalg.norm(H @ v - A @ v) <= 1e-13 * np.linalg.norm(A @ v)
    assert np.linalg.norm(H.rmatvec(v) - A.T @ v) <= 1e-13 * np.linalg.norm(A.T @ v)
    np.testing.assert_allclose(H.to_dense(), A, rtol=0, atol=1e-13 * np.abs(A).max())


def test_matvec_random_dense(rng):
    A = rng.normal(size=(150, 150))
    bt = build_block_tree(build_index_tree(rng.random((150, 3)), 10))
    H = hmatrix_from_dense(A, bt, 1e-15)
    v = rng.normal(size=150)
    assert np.linalg.norm(H @ v - A @ v) <= 1e-13 * np.linalg.norm(A @ v)
    with pytest.raises(ValueError):
        H @ np.ones(3)


@settings(max_examples=10, deadline=None)
@given(eps=st.sampled_from([1e-1, 1e-2, 1e-4, 1e-6]), n_min=st.integers(8, 60), seed=st.integers(0, 99))
def test_global_assembly_bound(eps, n_min, seed):
    rng = np.random.default_rng(seed)
    x, A = smooth_kernel(300, rng)
    H = hmatrix_from_dense(A, build_block_tree(build_index_tree(x, n_min)), eps)
    assert np.linalg.norm(A - H.to_dense()) <= eps * np.linalg.norm(A)
    for b in H.leaves():
        if b.kind == LOWRANK:
            X = A[np.ix_(H.perm[b.row.range], H.perm[b.col.range])]
            assert np.linalg.norm(X - b.lr.to_dense()) <= eps * np.linalg.norm(X) * (1 + 1e-12) + 1e-300


def test_viewfactor_assembly_bound(fib1):
    F = assemble_dense_F(fib1.surf)
    bt = build_block_tree(build_index_tree(fib1.surf.centroids, 100))
    kernel = ViewFactorKernel(fib1.surf)
    for eps in (1e-1, 1e-3):
        H = assemble_hmatrix(kernel, bt, eps)
        assert np.linalg.norm(F - H.to_dense()) <= eps * np.linalg.norm(F)


def test_scale_rows_and_identity(rng):
    x, A = smooth_kernel(120, rng)
    H = hmatrix_from_dense(A, build_block_tree(build_index_tree(x, 15)), 1e-15)
    d = rng.random(120)
    H2 = H.copy()
    H2.scale_rows(d)
    H2.add_identity(2.0)
    np.testing.assert_allclose(H2.to_dense(), d[:, None] * A + 2 * np.eye(120), atol=1e-12)
    # the original is untouched by operations on the copy
    np.testing.assert_allclose(H.to_dense(), A, atol=1e-12)


# --- storage ----------------------------------------------------------------

def test_storage_single_dense_leaf(rng):
    n = 37
    H = hmatrix_from_dense(rng.normal(size=(n, n)), build_block_tree(build_index_tree(rng.random((n, 3)), n)), 1e-3)
    rep = storage_report(H)
    assert rep["bytes"] == 8 * n * n and rep["n_lowrank_leaves"] == 0


def test_storage_zero_lowrank_payload(rng):
    n = 200
    bt = build_block_tree(build_index_tree(rng.random((n, 3)), 20))
    H = hmatrix_from_dense(np.diag(rng.random(n) + 1), bt, 1e-3)
    rep = storage_report(H)
    dense_bytes = sum(8 * b.dense.size for b in H.leaves() if b.kind == DENSE)
    assert rep["n_lowrank_leaves"] > 0 and rep["max_rank"] == 0
    assert rep["bytes"] == dense_bytes


def test_storage_plates_compressed(plates40):
    kernel = ViewFactorKernel(plates40.surf)
    bt = build_block_tree(build_index_tree(plates40.surf.centroids, 100))
    rep = storage_report(assemble_hmatrix(kernel, bt, 1e-1))
    assert rep["bytes"] < 8 * 3200 ** 2
    assert rep["compression"] < 0.5


# --- H-LU -------------------------------------------------------------------

def test_hlu_identity(rng):
    bt = build_block_tree(build_index_tree(rng.random((100, 3)), 10))
    f = hlu_factorize(hmatrix_from_dense(np.eye(100), bt, 1e-6))
    L, U = f.factors_dense()
    np.testing.assert_array_equal(L, np.eye(100))
    np.testing.assert_array_equal(U, np.eye(100))
    b = rng.normal(size=100)
    np.testing.assert_array_equal(solve_lu(f, b), b)
    assert not solve_lu(f, np.zeros(100)).any()


def test_hlu_dense_only_matches_lapack(rng):
    A = rng.normal(size=(2, 2)) + 3 * np.eye(2)
    bt = build_block_tree(build_index_tree(rng.random((2, 3)), 2))
    H = hmatrix_from_dense(A, bt, 1e-12)
    L, U = hlu_factorize(H).factors_dense()
    P, L0, U0 = sla.lu(A[np.ix_(H.perm, H.perm)])
    np.testing.assert_allclose(U, U0, atol=1e-14)
    np.testing.assert_allclose(L, P @ L0, atol=1e-14)


@settings(max_examples=10, deadline=None)
@given(n=st.integers(20, 250), n_min=st.integers(4, 40), seed=st.integers(0, 999))
def test_hlu_lossless(n, n_min, seed):
    rng = np.random.default_rng(seed)
    x, K = smooth_kernel(n, rng)
    A = np.eye(n) - 0.3 * K / K.sum(axis=1, keepdims=True)
    H = hmatrix_from_dense(A, build_block_tree(build_index_tree(x, n_min)), 1e-15)
    f = hlu_factorize(H, 1e-15)
    L, U = f.factors_dense()
    Ap = A[np.ix_(H.perm, H.perm)]
    assert np.linalg.norm(Ap - L @ U) <= 1e-12 * np.linalg.norm(A)
    B = rng.normal(size=(n, 3))
    X = solve_lu(f, B)
    assert np.linalg.norm(A @ X - B) <= 1e-11 * np.linalg.norm(B)


def test_hlu_singular_block():
    A = np.eye(4)
    A[1, 1] = 0.0
    bt = build_block_tree(build_index_tree(np.arange(12.0).reshape(4, 3), 4))
    with pytest.raises(HLUError, match="singular"):
        hlu_factorize(hmatrix_from_dense(A, bt, 1e-6))


def test_hlu_does_not_modify_input(rng):
    x, K = smooth_kernel(80, rng)
    A = np.eye(80) - 0.1 * K / K.sum(axis=1, keepdims=True)
    H = hmatrix_from_dense(A, build_block_tree(build_index_tree(x, 10)), 1e-10)
    before = H.to_dense()
    hlu_factorize(H)
    np.testing.assert_array_equal(H.to_dense(), before)


def test_hlu_reconstruction_plates40(plates40, plates40_F):
    C, Cd = reflection_pair(plates40.surf, 1e-6, F_dense=plates40_F)
    L, U = hlu_factorize(C, 1e-6).factors_dense()
    Cp = Cd[np.ix_(C.perm, C.perm)]
    assert np.linalg.norm(Cp - L @ U) / np.linalg.norm(Cp) <= 1e-4


def test_lu_residual_decreases_with_eps():
    from cavrad.generators import CAVITY_TAG, gen_parallel_plates
    from cavrad.mesh import extract_boundary
    surf = extract_boundary(gen_parallel_plates(m=16), {CAVITY_TAG})
    F = assemble_dense_F(surf)
    b = np.random.default_rng(3).normal(size=(surf.n_facets, 4))
    res = []
    for eps in (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6):
        C, Cd = reflection_pair(surf, eps, n_min=32, F_dense=F)
        x = solve_lu(hlu_factorize(C, eps), b)
        res.append(np.linalg.norm(Cd @ x - b) / np.linalg.norm(b))
        assert res[-1] <= 10 * eps
    assert all(b <= a for a, b in zip(res, res[1:]))
