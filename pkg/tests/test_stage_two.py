import numpy as np
import pytest
import scipy.linalg as sla

from slablu.linalg import SingularMatrixError
from slablu.stage_two import BlockTridiagonal, sweep_build, sweep_solve


def random_bt(rng, k, n, dominance=4.0):
    diag = [rng.standard_normal((n, n)) + dominance * n * np.eye(n) for _ in range(k)]
    sub = [rng.standard_normal((n, n)) for _ in range(k - 1)]
    sup = [rng.standard_normal((n, n)) for _ in range(k - 1)]
    return BlockTridiagonal(diag, sub, sup)


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_single_block(rng):
    t = random_bt(rng, 1, 6)
    f = sweep_build(t)
    assert f.k == 1
    r = rng.standard_normal(6)
    np.testing.assert_allclose(sweep_solve(f, r), sla.solve(t.diag[0], r), rtol=1e-13)


def test_block_lu_reconstruction(rng):
    t = random_bt(rng, 3, 8)
    f = sweep_build(t)
    S = [s.factors() for s in f.factors]
    n = 8
    # L = block unit lower with L_k = T[k, k-1] S_{k-1}^{-1}; U = block upper with S_k and T[k, k+1]
    L = np.eye(3 * n)
    U = np.zeros((3 * n, 3 * n))
    for k in range(3):
        r = slice(k * n, (k + 1) * n)
        lo, up = S[k]
        # S_k = P^T L U with P the LAPACK row order
        U[r, r] = (np.eye(n)[f.factors[k].permutation()].T @ lo) @ up
        if k + 1 < 3:
            nxt = slice((k + 1) * n, (k + 2) * n)
            U[r, nxt] = t.sup[k]
            L[nxt, r] = t.sub[k] @ np.linalg.inv(U[r, r])
    T = t.to_dense()
    assert np.linalg.norm(L @ U - T) <= 1e-12 * np.linalg.norm(T)


def test_zero_offdiagonals_keep_diagonals(rng):
    diag = [rng.standard_normal((5, 5)) + 10 * np.eye(5) for _ in range(4)]
    zeros = [np.zeros((5, 5))] * 3
    f = sweep_build(BlockTridiagonal(diag, zeros, zeros))
    for d, s in zip(diag, f.factors):
        lo, up = s.factors()
        np.testing.assert_allclose(np.eye(5)[s.permutation()].T @ lo @ up, d, rtol=1e-13)


def test_identity_blocks(rng):
    eye = [np.eye(4)] * 3
    zeros = [np.zeros((4, 4))] * 2
    r = rng.standard_normal(12)
    np.testing.assert_allclose(sweep_solve(sweep_build(BlockTridiagonal(eye, zeros, zeros)), r), r)


def test_against_dense_assembled(rng):
    t = random_bt(rng, 4, 8)
    r = rng.standard_normal((32, 3))
    assert _rel(sweep_solve(sweep_build(t), r), sla.solve(t.to_dense(), r)) <= 1e-11


def test_adjoint_solve(rng):
    t = random_bt(rng, 5, 6)
    r = rng.standard_normal(30)
    got = sweep_build(t).solve(r, adjoint=True)
    assert _rel(got, sla.solve(t.to_dense().T, r)) <= 1e-11


def test_linearity(rng):
    f = sweep_build(random_bt(rng, 4, 8))
    f1, f2 = rng.standard_normal(32), rng.standard_normal(32)
    a, b = 2.5, -0.75
    lhs = sweep_solve(f, a * f1 + b * f2)
    rhs = a * sweep_solve(f, f1) + b * sweep_solve(f, f2)
    assert _rel(lhs, rhs) <= 1e-11


@pytest.mark.parametrize("k,n", [(2, 64), (8, 32), (16, 128)])
def test_equivalence_to_dense(rng, k, n):
    t = random_bt(rng, k, n, dominance=1.0)
    x = rng.standard_normal(k * n)
    got = sweep_solve(sweep_build(t), t @ x)
    assert _rel(got, x) <= 1e-10
    np.testing.assert_allclose(t @ x, t.to_dense() @ x, rtol=1e-12)


def test_storage_exact(rng):
    for k, n in ((1, 5), (3, 8), (6, 4)):
        f = sweep_build(random_bt(rng, k, n))
        assert f.stored_scalars == k * n**2 + 2 * (k - 1) * n**2


def test_singular_block_named(rng):
    diag = [np.eye(3), np.zeros((3, 3)), np.eye(3)]
    zeros = [np.zeros((3, 3))] * 2
    with pytest.raises(SingularMatrixError) as info:
        sweep_build(BlockTridiagonal(diag, zeros, zeros))
    assert info.value.block == 1


def test_shape_validation(rng):
    with pytest.raises(ValueError):
        BlockTridiagonal([np.eye(3), np.eye(3)], [np.zeros((3, 3))], [])
    with pytest.raises(ValueError):
        BlockTridiagonal([np.eye(3), np.eye(2)], [np.zeros((3, 3))], [np.zeros((3, 2))])
    with pytest.raises(ValueError):
        BlockTridiagonal([np.full((2, 2), np.inf)], [], [])


def test_rhs_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        sweep_solve(sweep_build(random_bt(rng, 2, 4)), np.ones(7))
