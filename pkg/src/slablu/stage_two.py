"""Sweeping factorization of the reduced block-tridiagonal system."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .linalg import BlockTridiagonalLU, SingularMatrixError


@dataclass(frozen=True)
class BlockTridiagonal:
    """``diag[j]`` on the diagonal, ``sub[j] = T[j+1, j]``, ``sup[j] = T[j, j+1]``."""

    diag: list
    sub: list
    sup: list

    def __post_init__(self):
        k = len(self.diag)
        if len(self.sub) != max(k - 1, 0) or len(self.sup) != max(k - 1, 0):
            raise ValueError(f"{k} diagonal blocks need {max(k - 1, 0)} sub/super blocks")
        for j in range(k - 1):
            n0, n1 = self.diag[j].shape[0], self.diag[j + 1].shape[0]
            if self.sub[j].shape != (n1, n0) or self.sup[j].shape != (n0, n1):
                raise ValueError(f"coupling blocks at position {j} have inconsistent shapes")
        for j, d in enumerate(self.diag):
            if not np.all(np.isfinite(d)):
                raise ValueError(f"diagonal block {j} has non-finite entries")

    @property
    def k(self) -> int:
        return len(self.diag)

    @property
    def sizes(self) -> list[int]:
        return [d.shape[0] for d in self.diag]

    def to_sparse(self) -> sp.csr_matrix:
        k = self.k
        grid = [[None] * k for _ in range(k)]
        for j in range(k):
            grid[j][j] = sp.csr_matrix(self.diag[j])
            if j + 1 < k:
                grid[j + 1][j] = sp.csr_matrix(self.sub[j])
                grid[j][j + 1] = sp.csr_matrix(self.sup[j])
        return sp.bmat(grid, format="csr") if k else sp.csr_matrix((0, 0))

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()

    def __matmul__(self, x):
        x = np.asarray(x, dtype=float)
        offs = np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)
        out = np.zeros_like(x)
        for j in range(self.k):
            r = slice(offs[j], offs[j + 1])
            out[r] += self.diag[j] @ x[r]
            if j + 1 < self.k:
                nxt = slice(offs[j + 1], offs[j + 2])
                out[r] += self.sup[j] @ x[nxt]
                out[nxt] += self.sub[j] @ x[r]
        return out


class SweepFactorization:
    """LU factors of the Schur complements ``S_j`` plus the retained couplings."""

    def __init__(self, lu: BlockTridiagonalLU):
        self._lu = lu

    @property
    def factors(self):
        return self._lu.schur

    @property
    def k(self) -> int:
        return self._lu.nblocks

    @property
    def n(self) -> int:
        return self._lu.n

    @property
    def stored_scalars(self) -> int:
        return self._lu.stored_scalars

    def solve(self, rhs, adjoint: bool = False) -> np.ndarray:
        return self._lu.solve(rhs, adjoint=adjoint)


def sweep_build(t: BlockTridiagonal) -> SweepFactorization:
    """Form and factor ``S_0 = T_00``, ``S_j = T_jj - T_j,j-1 S_{j-1}^{-1} T_j-1,j`` in order."""
    try:
        lu = BlockTridiagonalLU(t.diag, t.sub, t.sup)
    except SingularMatrixError as err:
        block = int(np.searchsorted(np.cumsum(t.sizes), err.index, side="right"))
        new = SingularMatrixError(err.index, f"sweep: Schur complement S_{block} is singular")
        new.block = block
        raise new from None
    return SweepFactorization(lu)


def sweep_solve(fact: SweepFactorization, rhs) -> np.ndarray:
    """Forward elimination then back substitution over the blocks."""
    return fact.solve(rhs)
