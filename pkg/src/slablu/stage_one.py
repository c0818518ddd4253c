"""Slab partition and elimination of slab interiors.

Grid columns are split left to right into interior strips of width ``b``
separated by single-column interfaces.  Slab ``i`` lies left of interface
``i``; interface ``j`` couples slab ``j`` and, when present, slab ``j + 1``.
Inside a slab, unknowns are ordered with x (the thin direction) fastest so
the interior block is banded with bandwidth equal to the strip width.
"""

from __future__ import annotations

import logging
from contextlib import contextmanager
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from .hbs import CompressionError, hbs_compress_adaptive
from .linalg import BandedLU, BandedMatrix, SingularMatrixError
from .problem import SparseSystem
from .stage_two import BlockTridiagonal

log = logging.getLogger(__name__)

# test hook: names of deliberately injected faults (see inject_fault)
_FAULTS: set[str] = set()
KNOWN_FAULTS = ("schur-sign",)


@contextmanager
def inject_fault(name: str):
    """Temporarily corrupt the elimination; used to prove the verifier catches it.

    ``schur-sign`` flips the sign of the slab term in ``apply_T_block``.
    """
    if name not in KNOWN_FAULTS:
        raise ValueError(f"unknown fault {name!r}; known: {', '.join(KNOWN_FAULTS)}")
    _FAULTS.add(name)
    try:
        yield
    finally:
        _FAULTS.discard(name)


@dataclass(frozen=True)
class SlabPartition:
    n1: int
    n2: int
    b: int
    interface_cols: tuple[int, ...]
    strips: tuple[tuple[int, int], ...]  # half-open column ranges

    @property
    def m(self) -> int:
        """Number of interior strips."""
        return len(self.strips)

    @property
    def k(self) -> int:
        """Number of interfaces (blocks of the reduced system)."""
        return len(self.interface_cols)

    def interface_nodes(self, j: int) -> np.ndarray:
        c = self.interface_cols[j]
        return np.arange(c * self.n2, (c + 1) * self.n2)

    def slab_nodes(self, i: int) -> np.ndarray:
        c0, c1 = self.strips[i]
        cols = np.arange(c0, c1)
        return (cols[None, :] * self.n2 + np.arange(self.n2)[:, None]).ravel()

    def slab_width(self, i: int) -> int:
        c0, c1 = self.strips[i]
        return c1 - c0

    def slab_interfaces(self, i: int) -> tuple[int | None, int | None]:
        left = i - 1 if i >= 1 else None
        right = i if i < self.k else None
        return left, right

    def interface_slabs(self, j: int) -> tuple[int, ...]:
        return tuple(i for i in (j, j + 1) if i < self.m)

    def interface_rows(self) -> np.ndarray:
        return np.concatenate([self.interface_nodes(j) for j in range(self.k)]) if self.k else np.zeros(0, int)


def partition(n1: int, n2: int, b: int) -> SlabPartition:
    """Interfaces at every ``(b+1)``-th grid column; strips fill the gaps."""
    if not 1 <= b <= n1:
        raise ValueError(f"slab width b={b} must lie in [1, n1={n1}]")
    cols = tuple(range(b, n1, b + 1))
    edges = [-1, *cols, n1]
    strips = tuple((lo + 1, hi) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo + 1)
    return SlabPartition(n1, n2, b, cols, strips)


@dataclass(frozen=True)
class SlabFactor:
    index: int
    nodes: np.ndarray
    lu: BandedLU
    left: int | None
    right: int | None
    # A[slab, interface] and A[interface, slab] for each neighbouring interface
    into: dict = field(default_factory=dict)
    outof: dict = field(default_factory=dict)

    def solve(self, rhs, adjoint: bool = False) -> np.ndarray:
        return self.lu.solve(rhs, adjoint=adjoint)

    @property
    def stored_scalars(self) -> int:
        return self.lu.stored_scalars + sum(a.nnz for a in (*self.into.values(), *self.outof.values()))


def _factor_slab(A: sp.csr_matrix, part: SlabPartition, i: int) -> SlabFactor:
    nodes = part.slab_nodes(i)
    Aii = A[nodes][:, nodes]
    band = BandedMatrix.from_sparse(Aii)
    try:
        lu = BandedLU(band, block_size=max(part.slab_width(i), band.lower_bw, band.upper_bw, 1),
                      explicit_inverse=True)
    except SingularMatrixError as err:
        new = SingularMatrixError(err.index, f"interior block of slab {i} is singular "
                                             f"(local column {err.index})")
        new.slab = i
        raise new from None
    left, right = part.slab_interfaces(i)
    into, outof = {}, {}
    rows = A[nodes]
    for j in (left, right):
        if j is None:
            continue
        ifc = part.interface_nodes(j)
        into[j] = rows[:, ifc].tocsr()
        outof[j] = A[ifc][:, nodes].tocsr()
    return SlabFactor(i, nodes, lu, left, right, into, outof)


def factor_interiors(system: SparseSystem, part: SlabPartition, threads: int = 1) -> list[SlabFactor]:
    if system.N != part.n1 * part.n2:
        raise ValueError("partition does not match the system size")
    A = system.matrix.tocsr()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(lambda i: _factor_slab(A, part, i), range(part.m)))
    return [_factor_slab(A, part, i) for i in range(part.m)]


@dataclass
class ReducedSystem:
    t: BlockTridiagonal
    mode: str
    ranks: dict = field(default_factory=dict)
    origin: dict = field(default_factory=dict)

    @property
    def max_rank(self) -> int:
        return max(self.ranks.values(), default=0)


class SlabElimination:
    """Matrix-free access to the reduced blocks ``T_jk`` and the rhs reduction."""

    def __init__(self, system: SparseSystem, part: SlabPartition, factors: list[SlabFactor]):
        if len(factors) != part.m:
            raise ValueError(f"expected {part.m} slab factors, got {len(factors)}")
        self.system = system
        self.part = part
        self.factors = factors
        A = system.matrix.tocsr()
        n = part.n2
        self._direct = {}
        for j in range(part.k):
            ij = part.interface_nodes(j)
            rows = A[ij]
            for k in (j - 1, j, j + 1):
                if 0 <= k < part.k:
                    self._direct[j, k] = rows[:, part.interface_nodes(k)].tocsr()
        self.n2 = n

    def shared_slabs(self, j: int, k: int) -> tuple[int, ...]:
        if not (0 <= j < self.part.k and 0 <= k < self.part.k):
            raise IndexError(f"interface pair ({j}, {k}) out of range")
        if abs(j - k) > 1:
            raise ValueError(f"T[{j}, {k}] is structurally zero: interfaces are not adjacent")
        return tuple(sorted(set(self.part.interface_slabs(j)) & set(self.part.interface_slabs(k))))

    def rank_bound(self, j: int, k: int) -> int:
        """Structural HBS rank bound of ``T[j, k]``.

        Each shared slab contributes ``2w`` (two separator rows of its width);
        a diagonal block adds ``2`` for the direct stencil coupling along the
        interface.
        """
        r = sum(2 * self.part.slab_width(i) for i in self.shared_slabs(j, k)) + (2 if j == k else 0)
        return max(1, min(r, self.n2))

    def slab_schur(self, i: int, j: int, k: int, X, adjoint: bool = False) -> np.ndarray:
        """``A_ji A_ii^{-1} A_ik X`` (or its transpose applied to X)."""
        f = self.factors[i]
        if adjoint:
            return f.into[k].T @ f.solve(f.outof[j].T @ X, adjoint=True)
        return f.outof[j] @ f.solve(f.into[k] @ X)

    def apply_T_block(self, j: int, k: int, X, adjoint: bool = False) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[0] != self.n2:
            raise ValueError(f"block has {X.shape[0]} rows, interfaces have {self.n2}")
        slabs = self.shared_slabs(j, k)
        direct = self._direct[j, k]
        out = direct.T @ X if adjoint else direct @ X
        out = np.array(out, dtype=float)
        sign = -1.0 if "schur-sign" in _FAULTS else 1.0
        for i in slabs:
            out -= sign * self.slab_schur(i, j, k, X, adjoint)
        return out

    def block_operator(self, j: int, k: int) -> LinearOperator:
        n = self.n2
        return LinearOperator(
            (n, n), dtype=float,
            matvec=lambda x: self.apply_T_block(j, k, x.reshape(-1, 1)).ravel(),
            rmatvec=lambda x: self.apply_T_block(j, k, x.reshape(-1, 1), adjoint=True).ravel(),
            matmat=lambda X: self.apply_T_block(j, k, X),
            rmatmat=lambda X: self.apply_T_block(j, k, X, adjoint=True),
        )

    def dense_block(self, j: int, k: int) -> np.ndarray:
        return self.apply_T_block(j, k, np.eye(self.n2))

    def build_reduced(self, mode: str = "dense", *, tol: float = 1e-10, r_start: int = 8,
                      r_max: int | None = None, leaf_size: int = 64, seed: int = 0) -> ReducedSystem:
        if mode not in ("dense", "hbs"):
            raise ValueError(f"unknown compression mode {mode!r}")
        K = self.part.k
        ranks, origin, blocks = {}, {}, {}
        for j in range(K):
            for k in (j - 1, j, j + 1):
                if not 0 <= k < K:
                    continue
                origin[j, k] = self.shared_slabs(j, k)
                if mode == "dense":
                    blocks[j, k] = self.dense_block(j, k)
                    continue
                block_seed = int(np.random.SeedSequence([seed, j, k]).generate_state(1)[0])
                try:
                    h = hbs_compress_adaptive(self.block_operator(j, k), self.n2,
                                              r_start=min(r_start, self.n2),
                                              r_max=min(r_max or self.n2, self.n2),
                                              seed=block_seed, tol=tol, leaf_size=leaf_size)
                except CompressionError as err:
                    raise CompressionError(f"block T[{j}, {k}]: {err}", err.residual, err.rank) from None
                ranks[j, k] = h.rank
                blocks[j, k] = h.to_dense()
                log.debug("T[%d,%d] compressed at rank %d (%s)", j, k, h.rank, h.meta["rounds"])
        t = BlockTridiagonal([blocks[j, j] for j in range(K)],
                             [blocks[j + 1, j] for j in range(K - 1)],
                             [blocks[j, j + 1] for j in range(K - 1)])
        return ReducedSystem(t, mode, ranks, origin)

    def reduce_rhs(self, f) -> np.ndarray:
        """Interface loads ``f_j - sum_i A_ji A_ii^{-1} f_i`` stacked over interfaces."""
        F = self._as_full(f)
        n = self.n2
        out = np.empty((self.part.k * n,) + F.shape[1:])
        for j in range(self.part.k):
            out[j * n:(j + 1) * n] = F[self.part.interface_nodes(j)]
        for fac in self.factors:
            w = fac.solve(F[fac.nodes])
            for j, blk in fac.outof.items():
                out[j * n:(j + 1) * n] -= blk @ w
        return out

    def recover_interiors(self, u_ifc, f) -> np.ndarray:
        F = self._as_full(f)
        n = self.n2
        u_ifc = np.asarray(u_ifc, dtype=float)
        if u_ifc.shape[0] != self.part.k * n:
            raise ValueError(f"interface solution has {u_ifc.shape[0]} rows, expected {self.part.k * n}")
        u = np.empty(F.shape)
        for j in range(self.part.k):
            u[self.part.interface_nodes(j)] = u_ifc[j * n:(j + 1) * n]
        for fac in self.factors:
            rhs = F[fac.nodes].copy()
            for j, blk in fac.into.items():
                rhs -= blk @ u_ifc[j * n:(j + 1) * n]
            u[fac.nodes] = fac.solve(rhs)
        return u

    def _as_full(self, f) -> np.ndarray:
        F = np.asarray(f, dtype=float)
        if F.shape[0] != self.system.N:
            raise ValueError(f"rhs has {F.shape[0]} rows, system has {self.system.N}")
        return F

    @property
    def stored_scalars(self) -> int:
        return sum(f.stored_scalars for f in self.factors)
