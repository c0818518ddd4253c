import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from slablu.linalg import (BandedMatrix, BlockTridiagonalLU, DenseInverse, SingularMatrixError,
                           banded_lu, dense_lu, numerical_rank, solve)
from slablu.stage_one import partition


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_dense_lu_identity():
    f = dense_lu(np.eye(5))
    L, U = f.factors()
    np.testing.assert_array_equal(L, np.eye(5))
    np.testing.assert_array_equal(U, np.eye(5))
    np.testing.assert_array_equal(f.permutation(), np.arange(5))


def test_dense_lu_permutation_matrix():
    f = dense_lu([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(f.solve([1.0, 2.0]), [2.0, 1.0])
    np.testing.assert_array_equal(f.permutation(), [1, 0])


def test_dense_lu_random_residual(rng):
    A = rng.uniform(-1, 1, (50, 50))
    f = dense_lu(A)
    L, U = f.factors()
    assert np.linalg.norm(A[f.permutation()] - L @ U) / np.linalg.norm(A) <= 1e-13


def test_dense_lu_singular_reports_column():
    A = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]])
    with pytest.raises(SingularMatrixError) as info:
        dense_lu(A)
    assert info.value.index == 1


def test_dense_lu_rejects_bad_input():
    with pytest.raises(ValueError):
        dense_lu(np.ones((2, 3)))
    with pytest.raises(ValueError):
        dense_lu([[np.nan, 0.0], [0.0, 1.0]])


def test_dense_solve_dimension_mismatch():
    with pytest.raises(ValueError):
        dense_lu(np.eye(3)).solve(np.ones(4))


def _toeplitz(n):
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1])


def test_banded_tridiagonal_toeplitz_closed_form():
    n = 100
    f = banded_lu(BandedMatrix.from_sparse(_toeplitz(n)))
    x = f.solve(np.ones(n))
    i = np.arange(1, n + 1)
    np.testing.assert_allclose(x, i * (n + 1 - i) / 2, rtol=1e-12)
    np.testing.assert_allclose(x, sla.solve(_toeplitz(n).toarray(), np.ones(n)), rtol=1e-12)


def test_banded_diagonal_matrix():
    d = np.arange(1.0, 9.0)
    band = BandedMatrix.from_dense(np.diag(d))
    assert band.lower_bw == band.upper_bw == 0
    f = banded_lu(band)
    np.testing.assert_array_equal(np.concatenate([s.lu.ravel() for s in f.schur]), d)
    np.testing.assert_allclose(f.solve(np.ones(8)), 1 / d)


def test_banded_slab_block_matches_dense(poisson32):
    # slab interior of a 16x16 grid with b = 3
    from slablu.problem import assemble_fd5, poisson_problem

    s = assemble_fd5(poisson_problem(16))
    part = partition(16, 16, 3)
    nodes = part.slab_nodes(1)
    Aii = s.matrix[nodes][:, nodes]
    band = BandedMatrix.from_sparse(Aii)
    assert band.lower_bw == band.upper_bw == 3
    rhs = np.random.default_rng(0).standard_normal(len(nodes))
    ref = sla.solve(Aii.toarray(), rhs)
    for inv in (False, True):
        assert _rel(banded_lu(band, explicit_inverse=inv).solve(rhs), ref) <= 1e-12


def _random_banded(rng, n, kl, ku):
    A = np.zeros((n, n))
    for d in range(-kl, ku + 1):
        A += np.diag(rng.uniform(-1, 1, n - abs(d)), d)
    A += np.diag(np.full(n, kl + ku + 2.0))
    return A


@pytest.mark.parametrize("adjoint", [False, True])
@pytest.mark.parametrize("inv", [False, True])
def test_banded_solve_both_modes(rng, adjoint, inv):
    A = _random_banded(rng, 60, 4, 2)
    f = banded_lu(BandedMatrix.from_dense(A), block_size=5, explicit_inverse=inv)
    rhs = rng.standard_normal((60, 3))
    ref = sla.solve(A.T if adjoint else A, rhs)
    assert _rel(solve(f, rhs, adjoint=adjoint), ref) <= 1e-12


def test_identity_solve_returns_rhs(rng):
    r = rng.standard_normal(7)
    np.testing.assert_array_equal(dense_lu(np.eye(7)).solve(r), r)
    np.testing.assert_array_equal(banded_lu(BandedMatrix.from_dense(np.eye(7))).solve(r), r)


def test_adjoint_equals_normal_on_symmetric(rng):
    M = rng.standard_normal((20, 20))
    A = M + M.T + 40 * np.eye(20)
    f = dense_lu(A)
    r = rng.standard_normal(20)
    np.testing.assert_allclose(f.solve(r, adjoint=True), f.solve(r), rtol=1e-13)


def test_banded_storage_round_trip(rng):
    A = _random_banded(rng, 12, 2, 3)
    band = BandedMatrix.from_dense(A)
    np.testing.assert_array_equal(band.to_dense(), A)
    x = rng.standard_normal(12)
    np.testing.assert_allclose(band @ x, A @ x)


def test_banded_block_size_must_cover_bandwidth(rng):
    with pytest.raises(ValueError):
        banded_lu(BandedMatrix.from_dense(_random_banded(rng, 10, 3, 3)), block_size=2)


def test_banded_singular():
    A = np.diag([1.0, 0.0, 2.0])
    with pytest.raises(SingularMatrixError):
        banded_lu(BandedMatrix.from_dense(A))


def test_explicit_inverse_matches_lu(rng):
    A = rng.standard_normal((9, 9)) + 9 * np.eye(9)
    lu = dense_lu(A)
    inv = DenseInverse.from_lu(lu)
    np.testing.assert_allclose(inv.inv, np.linalg.inv(A), rtol=1e-12, atol=1e-14)
    r = rng.standard_normal((9, 2))
    np.testing.assert_allclose(inv.solve(r, adjoint=True), lu.solve(r, adjoint=True), rtol=1e-12)


def test_block_tridiagonal_lu_large_rhs_chunks(rng, monkeypatch):
    import slablu.linalg as la

    monkeypatch.setattr(la, "_SOLVE_CHUNK_SCALARS", 50)
    blocks = [rng.standard_normal((4, 4)) + 8 * np.eye(4) for _ in range(3)]
    off = [rng.standard_normal((4, 4)) for _ in range(2)]
    f = BlockTridiagonalLU(blocks, off, off[::-1])
    A = sla.block_diag(*blocks)
    A[4:8, 0:4], A[8:12, 4:8] = off
    A[0:4, 4:8], A[4:8, 8:12] = off[::-1]
    rhs = rng.standard_normal((12, 17))
    assert _rel(f.solve(rhs), sla.solve(A, rhs)) <= 1e-12


# --- round trip and agreement properties -----------------------------------


@settings(max_examples=40, deadline=None)
@given(st.integers(5, 60), st.floats(0.0, 8.0), st.integers(0, 2**32 - 1))
def test_dense_round_trip_condition_bounded(n, log_cond, seed):
    rng = np.random.default_rng(seed)
    Q1, _ = np.linalg.qr(rng.standard_normal((n, n)))
    Q2, _ = np.linalg.qr(rng.standard_normal((n, n)))
    A = Q1 @ np.diag(np.logspace(0, -log_cond, n)) @ Q2
    x = rng.standard_normal(n)
    assert _rel(dense_lu(A).solve(A @ x), x) <= 1e-11 * max(1.0, 10 ** (log_cond - 4))


@settings(max_examples=40, deadline=None)
@given(st.integers(4, 80), st.integers(0, 5), st.integers(0, 5), st.integers(0, 2**32 - 1))
def test_banded_and_dense_paths_agree(n, kl, ku, seed):
    kl, ku = min(kl, n - 1), min(ku, n - 1)
    rng = np.random.default_rng(seed)
    A = _random_banded(rng, n, kl, ku)
    x = rng.standard_normal(n)
    b = A @ x
    xb = banded_lu(BandedMatrix.from_dense(A)).solve(b)
    xd = dense_lu(A).solve(b)
    assert _rel(xb, xd) <= 1e-12
    assert _rel(xb, x) <= 1e-11


# --- numerical rank ----------------------------------------------------------


def test_numerical_rank_examples(rng):
    assert numerical_rank(np.zeros((5, 4)), 1e-10) == 0
    u, v = rng.standard_normal(6), rng.standard_normal(8)
    assert numerical_rank(np.outer(u, v), 1e-10) == 1
    k = 5
    A = sum(np.outer(rng.standard_normal(20), rng.standard_normal(12)) for _ in range(k))
    assert numerical_rank(A, 1e-10) == k


def test_numerical_rank_monotone_in_tol(rng):
    A = rng.standard_normal((30, 30)) @ np.diag(np.logspace(0, -15, 30)) @ rng.standard_normal((30, 30))
    ranks = [numerical_rank(A, t) for t in np.logspace(-14, -1, 14)]
    assert all(a >= b for a, b in zip(ranks, ranks[1:]))


def test_numerical_rank_tol_range():
    with pytest.raises(ValueError):
        numerical_rank(np.eye(2), 0.0)
