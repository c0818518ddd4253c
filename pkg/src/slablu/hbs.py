"""Hierarchically block-separable (HBS) matrices and their black-box recovery.

Representation (telescoping form).  Every leaf ``t`` stores ``D_t`` (its
diagonal remainder) and orthonormal bases ``U_t, V_t``.  An internal node with
children ``a, b`` stores ``U_t, V_t`` acting on the stacked child coordinates
and a full coupling block ``D_t`` of size ``(k_a + k_b) x (k'_a + k'_b)``.
Applying ``M`` is an upward pass ``xh_t = V_t^T [xh_a; xh_b]``, then a
downward pass ``[yh_a; yh_b] = U_t yh_t + D_t [xh_a; xh_b]``, and at the
leaves ``y_t = U_t yh_t + D_t x_t``.

Recovery uses one set of Gaussian sketches ``Y = M Om``, ``Z = M^T Psi`` for
all levels: a nullspace of the local slice of ``Om`` annihilates the unknown
diagonal block, leaving a sample of the off-diagonal range.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, aslinearoperator

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
OVERSAMPLING = 10
PROBE_VECTORS = 4  # per mode


class CompressionError(RuntimeError):
    def __init__(self, message, residual=float("nan"), rank=None):
        super().__init__(message)
        self.residual = residual
        self.rank = rank


@dataclass(frozen=True)
class Node:
    start: int
    stop: int
    children: tuple[int, ...] = ()
    parent: int | None = None
    level: int = 0

    @property
    def size(self) -> int:
        return self.stop - self.start

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class ClusterTree:
    """Binary tree of contiguous index ranges over ``range(n)``; node 0 is the root."""

    n: int
    leaf_size: int
    nodes: tuple[Node, ...]

    @property
    def leaves(self) -> list[int]:
        return [i for i, nd in enumerate(self.nodes) if nd.is_leaf]

    def postorder(self) -> list[int]:
        order, stack = [], [(0, False)]
        while stack:
            i, seen = stack.pop()
            if seen or self.nodes[i].is_leaf:
                order.append(i)
            else:
                stack.append((i, True))
                stack.extend((c, False) for c in reversed(self.nodes[i].children))
        return order

    @property
    def max_leaf(self) -> int:
        return max(self.nodes[i].size for i in self.leaves)


def build_tree(n: int, leaf_size: int) -> ClusterTree:
    if not 1 <= leaf_size <= max(n, 1):
        raise ValueError(f"leaf_size must lie in [1, n], got {leaf_size} for n={n}")
    nodes: list[Node] = []

    def grow(start, stop, parent, level):
        idx = len(nodes)
        nodes.append(Node(start, stop, (), parent, level))
        if stop - start > leaf_size:
            mid = start + (stop - start) // 2
            left = grow(start, mid, idx, level + 1)
            right = grow(mid, stop, idx, level + 1)
            nodes[idx] = Node(start, stop, (left, right), parent, level)
        return idx

    grow(0, n, None, 0)
    return ClusterTree(n, leaf_size, tuple(nodes))


@dataclass
class HbsMatrix:
    tree: ClusterTree
    U: dict[int, np.ndarray]
    V: dict[int, np.ndarray]
    D: dict[int, np.ndarray]
    rank_bound: int
    seed: int | None = None
    residual: float = float("nan")
    meta: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.tree.n, self.tree.n)

    @property
    def rank(self) -> int:
        """Largest generator width actually used."""
        widths = [u.shape[1] for u in self.U.values()] + [v.shape[1] for v in self.V.values()]
        return max(widths, default=0)

    @property
    def stored_scalars(self) -> int:
        return sum(a.size for part in (self.U, self.V, self.D) for a in part.values())

    def matmat(self, X, adjoint: bool = False) -> np.ndarray:
        return hbs_apply(self, X, adjoint)

    def __matmul__(self, X):
        return hbs_apply(self, X)

    def as_operator(self) -> LinearOperator:
        n = self.tree.n
        return LinearOperator((n, n), matvec=lambda x: hbs_apply(self, x),
                              rmatvec=lambda x: hbs_apply(self, x, adjoint=True),
                              matmat=lambda X: hbs_apply(self, X),
                              rmatmat=lambda X: hbs_apply(self, X, adjoint=True), dtype=float)

    def to_dense(self) -> np.ndarray:
        return hbs_to_dense(self)

    def save(self, file) -> None:
        arrays = {"version": np.array(FORMAT_VERSION),
                  "n": np.array(self.tree.n), "leaf_size": np.array(self.tree.leaf_size),
                  "rank_bound": np.array(self.rank_bound),
                  "seed": np.array(-1 if self.seed is None else self.seed),
                  "residual": np.array(self.residual)}
        for name, part in (("U", self.U), ("V", self.V), ("D", self.D)):
            for i, a in part.items():
                arrays[f"{name}_{i}"] = a
        np.savez(file, **arrays)

    @classmethod
    def load(cls, file) -> "HbsMatrix":
        with np.load(file) as z:
            version = int(z["version"])
            if version != FORMAT_VERSION:
                raise ValueError(f"unsupported HBS format version {version}")
            tree = build_tree(int(z["n"]), int(z["leaf_size"]))
            parts = {"U": {}, "V": {}, "D": {}}
            for key in z.files:
                name, _, idx = key.partition("_")
                if name in parts and idx.isdigit():
                    parts[name][int(idx)] = z[key]
            seed = int(z["seed"])
            return cls(tree, parts["U"], parts["V"], parts["D"], int(z["rank_bound"]),
                       None if seed < 0 else seed, float(z["residual"]))


def hbs_apply(m: HbsMatrix, x, adjoint: bool = False) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    vec = x.ndim == 1
    X = x[:, None] if vec else x
    tree = m.tree
    if X.shape[0] != tree.n:
        raise ValueError(f"dimension mismatch: HBS order {tree.n}, input has {X.shape[0]} rows")
    # adjoint swaps the roles of U and V and transposes every D
    Ub, Vb = (m.V, m.U) if adjoint else (m.U, m.V)

    def Dt(i):
        return m.D[i].T if adjoint else m.D[i]

    nodes = tree.nodes
    order = tree.postorder()
    if len(nodes) == 1:
        Y = Dt(0) @ X
        return Y[:, 0] if vec else Y

    def local_x(i):
        nd = nodes[i]
        if nd.is_leaf:
            return X[nd.start:nd.stop]
        return np.vstack([xh[c] for c in nd.children])

    xh = {}
    for i in order[:-1]:
        xh[i] = Vb[i].T @ local_x(i)
    yh = {}
    Y = np.empty((tree.n, X.shape[1]))
    for i in reversed(order):
        nd = nodes[i]
        y = Dt(i) @ local_x(i)
        if i != 0:
            y = y + Ub[i] @ yh[i]
        if nd.is_leaf:
            Y[nd.start:nd.stop] = y
        else:
            off = 0
            for c in nd.children:
                k = Ub[c].shape[1]
                yh[c] = y[off:off + k]
                off += k
    return Y[:, 0] if vec else Y


def hbs_to_dense(m: HbsMatrix) -> np.ndarray:
    return hbs_apply(m, np.eye(m.tree.n))


class CountingOperator(LinearOperator):
    """Wraps a sampler and counts the vectors pushed through each mode."""

    def __init__(self, op):
        self.op = aslinearoperator(op)
        super().__init__(dtype=np.float64, shape=self.op.shape)
        self.n_forward = 0
        self.n_adjoint = 0

    def _matmat(self, X):
        self.n_forward += X.shape[1]
        return self.op.matmat(X)

    def _rmatmat(self, X):
        self.n_adjoint += X.shape[1]
        return self.op.rmatmat(X)

    def _matvec(self, x):
        return self._matmat(x.reshape(-1, 1)).ravel()

    def _rmatvec(self, x):
        return self._rmatmat(x.reshape(-1, 1)).ravel()

    def _adjoint(self):
        raise NotImplementedError


def sample_count(r: int) -> int:
    """Sketch width used for rank bound ``r``."""
    return 3 * r + OVERSAMPLING


def _range_basis(sample, r, thresh):
    if sample.size == 0:
        return np.zeros((sample.shape[0], 0))
    Q, s, _ = sla.svd(sample, full_matrices=False)
    k = min(int(np.count_nonzero(s > thresh)), r)
    return Q[:, :k]


def _null_basis(omega):
    # columns spanning {p : omega @ p = 0}; omega has full row rank
    _, _, vh = sla.svd(omega, full_matrices=True)
    return vh[omega.shape[0]:].T


def hbs_compress(sampler, n: int, tree: ClusterTree, r: int, *, seed=None,
                 tol: float = 1e-10, rng=None) -> HbsMatrix:
    """Recover an HBS representation of rank at most ``r`` from products.

    ``sampler`` is anything ``aslinearoperator`` accepts; it is asked for
    ``3r + 10`` products per mode plus ``4`` fresh probe vectors per mode.
    Leaves must not exceed ``2r`` indices (the sketch must leave a nullspace
    of width ``r + 10`` on every leaf).  Raises :class:`CompressionError` when
    the a-posteriori probe misses ``tol``.
    """
    op = aslinearoperator(sampler)
    if op.shape != (n, n) or tree.n != n:
        raise ValueError("sampler, tree and n disagree on the dimension")
    if r < 1:
        raise ValueError("rank bound must be at least 1")
    if tree.max_leaf > 2 * r:
        raise ValueError(f"leaves of size {tree.max_leaf} exceed 2r = {2 * r}")
    if rng is None:
        rng = np.random.default_rng(seed)
    s = sample_count(r)
    Om = rng.standard_normal((n, s))
    Psi = rng.standard_normal((n, s))
    Y = np.asarray(op.matmat(Om))
    Z = np.asarray(op.rmatmat(Psi))

    m = _recover(tree, Om, Psi, Y, Z, r, 1e-3 * tol)
    m.seed = seed

    G = rng.standard_normal((n, PROBE_VECTORS))
    H = rng.standard_normal((n, PROBE_VECTORS))
    MG = np.asarray(op.matmat(G))
    MH = np.asarray(op.rmatmat(H))
    scale = max(np.linalg.norm(MG), np.linalg.norm(MH))
    err = max(np.linalg.norm(MG - hbs_apply(m, G)), np.linalg.norm(MH - hbs_apply(m, H, adjoint=True)))
    m.residual = float(err / scale) if scale > 0 else float(err)
    if m.residual > tol:
        raise CompressionError(
            f"HBS probe residual {m.residual:.2e} exceeds tolerance {tol:.1e} at rank bound {r}",
            m.residual, r)
    return m


def _recover(tree, Om, Psi, Y, Z, r, rel_floor) -> HbsMatrix:
    nodes = tree.nodes
    s = Om.shape[1]
    # truncation floor from the global sample scale: E|M Om|_F^2 = s |M|_F^2
    norm_est = max(np.linalg.norm(Y), np.linalg.norm(Z)) / np.sqrt(s)
    floor = rel_floor * norm_est
    if len(nodes) == 1:
        D = sla.lstsq(Om.T, Y.T)[0].T
        return HbsMatrix(tree, {}, {}, {0: D}, r)

    U, V, D = {}, {}, {}
    # compressed sketches carried up the tree: (omega, y, psi, z)
    carry = {}
    for i in tree.postorder():
        nd = nodes[i]
        if nd.is_leaf:
            sl = slice(nd.start, nd.stop)
            om, y, ps, z = Om[sl], Y[sl], Psi[sl], Z[sl]
        else:
            parts = [carry.pop(c) for c in nd.children]
            om, y, ps, z = (np.vstack([p[j] for p in parts]) for j in range(4))
        if i == 0:
            D[0] = sla.lstsq(om.T, y.T)[0].T
            break
        width = s - om.shape[0]
        thresh = floor * np.sqrt(width)
        u = _range_basis(y @ _null_basis(om), r, thresh)
        v = _range_basis(z @ _null_basis(ps), r, thresh)
        om_pinv = sla.pinv(om)
        ps_pinv = sla.pinv(ps)
        # D = (I - UU^T) Y Om^+ + UU^T (Psi^+)^T Z^T (I - VV^T)
        t1 = y @ om_pinv
        t1 -= u @ (u.T @ t1)
        t2 = ps_pinv.T @ z.T
        t2 -= (t2 @ v) @ v.T
        d = t1 + u @ (u.T @ t2)
        U[i], V[i], D[i] = u, v, d
        carry[i] = (v.T @ om, u.T @ (y - d @ om), u.T @ ps, v.T @ (z - d.T @ ps))
    return HbsMatrix(tree, U, V, D, r)


def hbs_compress_adaptive(sampler, n: int, tree: ClusterTree | None = None, r_start: int = 8,
                          r_max: int | None = None, *, seed=None, tol: float = 1e-10,
                          leaf_size: int | None = None) -> HbsMatrix:
    """Double the rank bound until the probe passes.

    Each round uses a tree whose leaves are at most ``2r`` (the template
    ``tree``'s leaf size caps it).  ``meta['rounds']`` records the attempts.
    """
    r_max = n if r_max is None else r_max
    if r_start > r_max or r_start < 1:
        raise ValueError("need 1 <= r_start <= r_max")
    cap = leaf_size or (tree.leaf_size if tree is not None else 64)
    rng = np.random.default_rng(seed)
    r = r_start
    rounds = []
    last = float("nan")
    while True:
        t = build_tree(n, max(1, min(cap, 2 * r, n)))
        try:
            m = hbs_compress(sampler, n, t, r, tol=tol, rng=rng)
        except CompressionError as err:
            last = err.residual
            rounds.append((r, last))
            log.debug("HBS rank %d rejected, residual %.2e", r, last)
            if r >= r_max:
                raise CompressionError(
                    f"HBS compression failed up to rank {r_max}; last residual {last:.2e}",
                    last, r) from None
            r = min(2 * r, r_max)
            continue
        rounds.append((r, m.residual))
        m.seed = seed
        m.meta["rounds"] = rounds
        return m


def to_bytes(m: HbsMatrix) -> bytes:
    buf = io.BytesIO()
    m.save(buf)
    return buf.getvalue()
