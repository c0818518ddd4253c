"""Dense and banded LU kernels shared by both elimination stages.

Real double precision throughout.  Pivoting is partial and confined to dense
diagonal blocks; block LU never pivots across block boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack

# rough cap on the working set of one blocked solve, in scalars
_SOLVE_CHUNK_SCALARS = 2.5e7


class SingularMatrixError(np.linalg.LinAlgError):
    """An exactly zero pivot was met; ``index`` is the failing column."""

    def __init__(self, index: int, message: str | None = None):
        self.index = int(index)
        super().__init__(message or f"matrix is singular: zero pivot in column {self.index}")


def _as_block(rhs, n):
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != n:
        raise ValueError(f"dimension mismatch: factor has order {n}, rhs has {rhs.shape[0]} rows")
    return rhs


def _stored(block) -> int:
    return int(block.nnz) if sp.issparse(block) else int(np.size(block))


@dataclass(frozen=True)
class DenseLU:
    """Packed LU factors with LAPACK (0-based) pivot indices: ``P A = L U``."""

    lu: np.ndarray
    piv: np.ndarray

    @property
    def n(self) -> int:
        return self.lu.shape[0]

    @property
    def stored_scalars(self) -> int:
        return self.lu.size

    def solve(self, rhs, adjoint: bool = False) -> np.ndarray:
        rhs = _as_block(rhs, self.n)
        if self.n == 0:
            return np.array(rhs, dtype=float)
        x, info = lapack.dgetrs(self.lu, self.piv, rhs, trans=1 if adjoint else 0)
        return x

    def permutation(self) -> np.ndarray:
        """Row order ``p`` such that ``A[p] = L U``."""
        perm = np.arange(self.n)
        for i, j in enumerate(self.piv):
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def factors(self) -> tuple[np.ndarray, np.ndarray]:
        L = np.tril(self.lu, -1) + np.eye(self.n)
        return L, np.triu(self.lu)


@dataclass(frozen=True)
class DenseInverse:
    """Explicit inverse, formed from a pivoted LU; applies with one GEMM."""

    inv: np.ndarray

    @property
    def n(self) -> int:
        return self.inv.shape[0]

    @property
    def stored_scalars(self) -> int:
        return self.inv.size

    def solve(self, rhs, adjoint: bool = False) -> np.ndarray:
        rhs = _as_block(rhs, self.n)
        return (self.inv.T if adjoint else self.inv) @ rhs

    @classmethod
    def from_lu(cls, lu: DenseLU) -> "DenseInverse":
        if lu.n == 0:
            return cls(np.zeros((0, 0)))
        inv, info = lapack.dgetri(lu.lu, lu.piv)
        return cls(np.ascontiguousarray(inv))


class _Diagonal:
    """Diagonal coupling block; ``@`` is a row scaling."""

    def __init__(self, d):
        self.d = np.asarray(d, dtype=float)
        self.shape = (self.d.size, self.d.size)
        self.nnz = self.d.size

    @property
    def T(self):
        return self

    def toarray(self):
        return np.diag(self.d)

    def __matmul__(self, x):
        return self.d[:, None] * x if x.ndim == 2 else self.d * x


def _compact(block):
    if sp.issparse(block) and block.shape[0] == block.shape[1]:
        coo = block.tocoo()
        if np.all(coo.row == coo.col):
            return _Diagonal(block.diagonal())
    return block


def dense_lu(a) -> DenseLU:
    a = np.array(a, dtype=float, order="F")
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"dense_lu needs a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    if a.shape[0] == 0:
        return DenseLU(a, np.zeros(0, dtype=np.int32))
    lu, piv, info = lapack.dgetrf(a, overwrite_a=True)
    if info > 0:
        raise SingularMatrixError(info - 1)
    return DenseLU(lu, piv)


@dataclass(frozen=True)
class BandedMatrix:
    """Square banded matrix in LAPACK band layout: ``band[ku + i - j, j] = a[i, j]``."""

    dim: int
    lower_bw: int
    upper_bw: int
    band: np.ndarray

    def __post_init__(self):
        if self.band.shape != (self.lower_bw + self.upper_bw + 1, self.dim):
            raise ValueError("band storage does not match the bandwidths")
        if self.dim > 0 and (self.lower_bw >= max(self.dim, 1) or self.upper_bw >= max(self.dim, 1)):
            raise ValueError("bandwidths must be smaller than the dimension")

    @classmethod
    def from_sparse(cls, a) -> "BandedMatrix":
        a = sp.coo_matrix(a)
        n = a.shape[0]
        if a.shape != (n, n):
            raise ValueError("banded matrices are square")
        off = a.row - a.col
        kl = int(max(off.max(initial=0), 0))
        ku = int(max(-off.min(initial=0), 0))
        band = np.zeros((kl + ku + 1, n))
        np.add.at(band, (ku + a.row - a.col, a.col), a.data)
        return cls(n, kl, ku, band)

    @classmethod
    def from_dense(cls, a) -> "BandedMatrix":
        return cls.from_sparse(sp.coo_matrix(np.asarray(a, dtype=float)))

    def to_sparse(self) -> sp.csr_matrix:
        diags, offsets = [], []
        for d in range(-self.lower_bw, self.upper_bw + 1):
            row = self.upper_bw - d
            if d >= 0:
                diags.append(self.band[row, d:])
            else:
                diags.append(self.band[row, : self.dim + d])
            offsets.append(d)
        return sp.diags(diags, offsets, shape=(self.dim, self.dim), format="csr")

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()

    def __matmul__(self, x):
        return self.to_sparse() @ x


class BlockTridiagonalLU:
    """Block LU of a block-tridiagonal matrix without inter-block pivoting.

    With ``S_0 = D_0`` and ``S_k = D_k - L_k S_{k-1}^{-1} U_{k-1}``, the solve is a
    forward sweep ``z_k = f_k - L_k y_{k-1}``, ``y_k = S_k^{-1} z_k`` followed by a
    backward sweep ``x_k = S_k^{-1}(z_k - U_k x_{k+1})``.  ``lower[k]`` couples
    block ``k+1`` to block ``k``; ``upper[k]`` couples block ``k`` to ``k+1``.
    Off-diagonal blocks may be dense arrays or scipy sparse matrices.  With
    ``explicit_inverse`` the Schur complements are kept as inverses so each
    sweep step is a single GEMM; the LU path is the default.
    """

    def __init__(self, diag, lower, upper, explicit_inverse: bool = False):
        if len(lower) != max(len(diag) - 1, 0) or len(upper) != len(lower):
            raise ValueError("need len(diag) - 1 sub- and super-diagonal blocks")
        self.sizes = np.array([d.shape[0] for d in diag], dtype=int)
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.lower = [_compact(b) for b in lower]
        self.upper = [_compact(b) for b in upper]
        self.schur: list[DenseLU] = []
        for k, d in enumerate(diag):
            d = d.toarray() if sp.issparse(d) else np.asarray(d, dtype=float)
            if d.shape != (self.sizes[k], self.sizes[k]):
                raise ValueError(f"diagonal block {k} is not square")
            if k > 0:
                up = self.upper[k - 1]
                up = up.toarray() if hasattr(up, "toarray") else up
                d = d - self.lower[k - 1] @ self.schur[k - 1].solve(up)
            try:
                lu = dense_lu(d)
                self.schur.append(DenseInverse.from_lu(lu) if explicit_inverse else lu)
            except SingularMatrixError as err:
                raise SingularMatrixError(
                    self.offsets[k] + err.index,
                    f"Schur complement of block {k} is singular (column {err.index})",
                ) from None
            except ValueError as err:
                raise ValueError(f"block {k}: {err}") from None

    @property
    def n(self) -> int:
        return int(self.offsets[-1])

    @property
    def nblocks(self) -> int:
        return len(self.schur)

    @property
    def stored_scalars(self) -> int:
        return (sum(s.stored_scalars for s in self.schur)
                + sum(_stored(b) for b in self.lower) + sum(_stored(b) for b in self.upper))

    def solve(self, rhs, adjoint: bool = False) -> np.ndarray:
        rhs = _as_block(rhs, self.n)
        vec = rhs.ndim == 1
        F = rhs[:, None] if vec else rhs
        out = np.empty_like(F, dtype=float)
        step = max(1, int(_SOLVE_CHUNK_SCALARS // max(self.n, 1)))
        for c in range(0, F.shape[1], step):
            sl = slice(c, c + step)
            out[:, sl] = (self._solve_adjoint if adjoint else self._solve)(F[:, sl])
        return out[:, 0] if vec else out

    def _blocks(self, F):
        return [F[self.offsets[k]:self.offsets[k + 1]] for k in range(self.nblocks)]

    def _solve(self, F):
        f = self._blocks(F)
        K = self.nblocks
        z = [None] * K
        y = None
        for k in range(K):
            z[k] = f[k] if k == 0 else f[k] - self.lower[k - 1] @ y
            y = self.schur[k].solve(z[k])
        x = [None] * K
        if K:
            x[-1] = y
        for k in range(K - 2, -1, -1):
            x[k] = self.schur[k].solve(z[k] - self.upper[k] @ x[k + 1])
        return np.vstack(x) if K else F.copy()

    def _solve_adjoint(self, F):
        # A^T is block tridiagonal with diag S-chain D_k^T, lower U_k^T, upper L_k^T;
        # the same elimination order applies with transposed pieces.
        f = self._blocks(F)
        K = self.nblocks
        z = [None] * K
        y = None
        for k in range(K):
            z[k] = f[k] if k == 0 else f[k] - self.upper[k - 1].T @ y
            y = self.schur[k].solve(z[k], adjoint=True)
        x = [None] * K
        if K:
            x[-1] = y
        for k in range(K - 2, -1, -1):
            x[k] = self.schur[k].solve(z[k] - self.lower[k].T @ x[k + 1], adjoint=True)
        return np.vstack(x) if K else F.copy()


class BandedLU(BlockTridiagonalLU):
    """Blocked LU of a banded matrix, blocks of size ``max(lower_bw, upper_bw)``."""

    def __init__(self, a: BandedMatrix, block_size: int | None = None, explicit_inverse: bool = False):
        bs = block_size or max(a.lower_bw, a.upper_bw, 1)
        if bs < max(a.lower_bw, a.upper_bw):
            raise ValueError("block size must cover the bandwidth")
        self.dim = a.dim
        self.lower_bw = a.lower_bw
        self.upper_bw = a.upper_bw
        self.block_size = bs
        A = a.to_sparse()
        cuts = list(range(0, a.dim, bs)) + [a.dim]
        diag, lower, upper = [], [], []
        for k in range(len(cuts) - 1):
            r = slice(cuts[k], cuts[k + 1])
            diag.append(A[r, r].toarray())
            if k + 1 < len(cuts) - 1:
                nxt = slice(cuts[k + 1], cuts[k + 2])
                lower.append(A[nxt, r].tocsr())
                upper.append(A[r, nxt].tocsr())
        try:
            super().__init__(diag, lower, upper, explicit_inverse)
        except SingularMatrixError as err:
            raise SingularMatrixError(err.index, f"banded matrix is singular at column {err.index}") from None


def banded_lu(a: BandedMatrix, block_size: int | None = None, explicit_inverse: bool = False) -> BandedLU:
    return BandedLU(a, block_size, explicit_inverse)


def solve(factors, rhs, adjoint: bool = False) -> np.ndarray:
    """Solve with any factor object of this module (``A^T`` when ``adjoint``)."""
    return factors.solve(rhs, adjoint=adjoint)


def numerical_rank(a, rel_tol: float) -> int:
    """Number of singular values above ``rel_tol * sigma_max``."""
    if not 0 < rel_tol < 1:
        raise ValueError("rel_tol must lie in (0, 1)")
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.count_nonzero(s > rel_tol * s[0]))
