"""Brute-force reference computations and the verification suites built on them.

Nothing here goes through the slab or sweep factorizations, except
``dense_schur_block``, which applies the matrix-free operator to the identity
and is itself checked against :func:`dense_interface_schur`.  All dense work
uses scipy directly.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .linalg import numerical_rank
from .problem import SparseSystem

log = logging.getLogger(__name__)

MAX_DENSE_N = 10_000
MAX_DENSE_N2 = 1024


class OracleSizeError(ValueError):
    """The problem is too large for a dense reference computation."""


def _dense(system: SparseSystem, rows, cols) -> np.ndarray:
    return system.matrix[rows][:, cols].toarray()


def dense_full_solve(system: SparseSystem, f=None, max_n: int = MAX_DENSE_N) -> np.ndarray:
    """Dense pivoted LU solve of the whole system."""
    if system.N > max_n:
        raise OracleSizeError(f"dense oracle limited to N <= {max_n}, got {system.N}")
    f = system.rhs if f is None else np.asarray(f, dtype=float)
    return sla.lu_solve(sla.lu_factor(system.matrix.toarray()), f)


# --- interface Schur complements --------------------------------------------


def _adjacent_slab(part, j: int, slab: int | None) -> int:
    touching = part.interface_slabs(j)
    if slab is None:
        return touching[0]
    if slab not in touching:
        raise ValueError(f"slab {slab} does not touch interface {j}")
    return slab


def dense_interface_schur(system: SparseSystem, part, j: int, slab: int | None = None) -> np.ndarray:
    """``A_jj - A_js A_ss^{-1} A_sj`` for interface ``j`` and one adjacent slab ``s``.

    This is the single-slab complement whose off-diagonal sub-blocks obey the
    ``2b`` rank bound.
    """
    s = _adjacent_slab(part, j, slab)
    I, S = part.interface_nodes(j), part.slab_nodes(s)
    if len(S) > MAX_DENSE_N:
        raise OracleSizeError("slab too large for the dense oracle")
    Ass = _dense(system, S, S)
    return _dense(system, I, I) - _dense(system, I, S) @ sla.solve(Ass, _dense(system, S, I))


def dense_reduced_blocks(system: SparseSystem, part, max_n: int = 2500) -> dict:
    """All blocks ``T[j, k]`` of the reduced system by one dense elimination.

    Interior unknowns of every slab are eliminated together with a single dense
    solve, so the result is independent of the slab-by-slab code path.
    """
    if system.N > max_n:
        raise OracleSizeError(f"dense Schur elimination limited to N <= {max_n}")
    I = part.interface_rows()
    S = np.setdiff1d(np.arange(system.N), I)
    A = system.matrix.toarray()
    T = A[np.ix_(I, I)]
    if S.size:
        T = T - A[np.ix_(I, S)] @ sla.solve(A[np.ix_(S, S)], A[np.ix_(S, I)])
    n = part.n2
    return {(j, k): T[j * n:(j + 1) * n, k * n:(k + 1) * n]
            for j in range(part.k) for k in range(part.k)}


def dense_reduced_rhs(system: SparseSystem, part, f, max_n: int = 2500) -> np.ndarray:
    """``f_I - A_IS A_SS^{-1} f_S`` by dense elimination."""
    if system.N > max_n:
        raise OracleSizeError(f"dense Schur elimination limited to N <= {max_n}")
    f = np.asarray(f, dtype=float)
    I = part.interface_rows()
    S = np.setdiff1d(np.arange(system.N), I)
    A = system.matrix.toarray()
    out = f[I].copy()
    if S.size:
        out -= A[np.ix_(I, S)] @ sla.solve(A[np.ix_(S, S)], f[S])
    return out


def dense_schur_block(elimination, j: int, k: int, max_n2: int = MAX_DENSE_N2) -> np.ndarray:
    """``T[j, k]`` by applying the matrix-free operator to identity columns."""
    if elimination.n2 > max_n2:
        raise OracleSizeError(f"dense block extraction limited to n2 <= {max_n2}")
    return elimination.apply_T_block(j, k, np.eye(elimination.n2))


# --- rank structure ----------------------------------------------------------


def _split_interface(n2: int, J_B) -> tuple[np.ndarray, np.ndarray]:
    r0, r1 = J_B
    if not 0 <= r0 <= r1 <= n2:
        raise ValueError(f"J_B = [{r0}, {r1}) is not a contiguous range inside [0, {n2})")
    B = np.arange(r0, r1)
    F = np.concatenate([np.arange(0, r0), np.arange(r1, n2)])
    return B, F


@dataclass
class RankCheck:
    """Ranks of the off-diagonal sub-blocks of the single-slab complement.

    ``rank_*`` are ranks of ``T`` itself.  ``dense_rank_*`` are ranks of the
    slab contribution ``T - A_JJ`` alone; the sparse direct coupling ``A_FB``
    (one entry per cut of ``J_B`` for the five-point stencil) is what separates
    the two, so ``rank <= dense_rank + direct_rank``.
    """

    rank_BF: int
    rank_FB: int
    dense_rank_BF: int
    dense_rank_FB: int
    direct_rank: int
    bound: int
    J_B: tuple

    @property
    def passed(self) -> bool:
        """The literal bound ``rank((T)_BF), rank((T)_FB) <= 2b``."""
        return self.rank_BF <= self.bound and self.rank_FB <= self.bound

    @property
    def passed_dense_part(self) -> bool:
        """The bound the separator argument proves: slab part ``<= 2b``, total ``<= 2b + direct``."""
        return (max(self.dense_rank_BF, self.dense_rank_FB) <= self.bound
                and max(self.rank_BF, self.rank_FB) <= self.bound + self.direct_rank)


def rank_property_check(system: SparseSystem, part, j: int, J_B, tol: float = 1e-10,
                        slab: int | None = None) -> RankCheck:
    """Numerical ranks of ``T_BF`` and ``T_FB`` for contiguous rows ``J_B = [r0, r1)``."""
    B, F = _split_interface(part.n2, J_B)
    s = _adjacent_slab(part, j, slab)
    bound = 2 * part.slab_width(s)
    if not (F.size and B.size):
        return RankCheck(0, 0, 0, 0, 0, bound, tuple(J_B))
    T = dense_interface_schur(system, part, j, s)
    I = part.interface_nodes(j)
    A = _dense(system, I, I)
    BF, FB = np.ix_(B, F), np.ix_(F, B)
    direct = max(np.linalg.matrix_rank(A[BF]), np.linalg.matrix_rank(A[FB]))
    return RankCheck(numerical_rank(T[BF], tol), numerical_rank(T[FB], tol),
                     numerical_rank((T - A)[BF], tol), numerical_rank((T - A)[FB], tol),
                     int(direct), bound, tuple(J_B))


@dataclass
class RankFactorPair:
    X: np.ndarray  # |F| x |gamma|
    Y: np.ndarray  # |gamma| x |B|
    J_B: np.ndarray
    J_F: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    residual: float = 0.0


def appendix_a_factors(system: SparseSystem, part, j: int, J_B, slab: int | None = None) -> RankFactorPair:
    """Explicit rank factors of ``(T)_FB`` from a separator-ordered slab LU.

    Slab rows ``r0 - 1`` and ``r1`` (the F-side rows touching the cuts of
    ``J_B``) form the separator gamma.  It splits the slab into alpha (F side)
    and beta (B side).  With the ordering alpha, beta, gamma and a block LU
    that pivots only inside diagonal blocks, ``A_{F,s} U^{-1}`` vanishes on beta
    and ``L^{-1} A_{s,B}`` vanishes on alpha, so
    ``T_FB = A_FB - X_{F,gamma} Y_{gamma,B}``.
    """
    s = _adjacent_slab(part, j, slab)
    n2, w = part.n2, part.slab_width(s)
    B, F = _split_interface(n2, J_B)
    r0, r1 = J_B
    S = part.slab_nodes(s)  # row-major: local index = row * w + col
    I = part.interface_nodes(j)
    rows = np.repeat(np.arange(n2), w)
    cut = [r for r in (r0 - 1, r1) if 0 <= r < n2 and B.size and F.size]
    in_gamma = np.isin(rows, cut)
    in_beta = (rows >= r0) & (rows < r1) & ~in_gamma
    alpha = np.flatnonzero(~in_gamma & ~in_beta)
    beta = np.flatnonzero(in_beta)
    gamma = np.flatnonzero(in_gamma)

    A = _dense(system, S, S)
    blocks = (alpha, beta, gamma)
    order = np.concatenate(blocks)
    sizes = [len(b) for b in blocks]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    P = A[np.ix_(order, order)]
    sl = [slice(offs[t], offs[t + 1]) for t in range(3)]

    # block LU: L = [[Pa La, 0, 0], [0, Pb Lb, 0], [Cga, Cgb, Pg Lg]], U = [[Ua, 0, Ea], [0, Ub, Eb], [0, 0, Ug]]
    L = np.zeros_like(P)
    U = np.zeros_like(P)
    schur = P[sl[2], sl[2]].copy()
    for t in (0, 1):
        if sizes[t] == 0:
            continue
        p, l, u = sla.lu(P[sl[t], sl[t]])
        L[sl[t], sl[t]] = p @ l
        U[sl[t], sl[t]] = u
        U[sl[t], sl[2]] = sla.solve(p @ l, P[sl[t], sl[2]])
        L[sl[2], sl[t]] = sla.solve_triangular(u, P[sl[2], sl[t]].T, trans="T").T
        schur -= L[sl[2], sl[t]] @ U[sl[t], sl[2]]
    if sizes[2]:
        p, l, u = sla.lu(schur)
        L[sl[2], sl[2]] = p @ l
        U[sl[2], sl[2]] = u

    A_Fs = _dense(system, I[F], S)[:, order]
    A_sB = _dense(system, S, I[B])[order]
    X = sla.solve_triangular(U, A_Fs.T, trans="T").T if A_Fs.size else np.zeros(A_Fs.shape)
    Y = sla.solve(L, A_sB) if A_sB.size else np.zeros(A_sB.shape)
    pair = RankFactorPair(X[:, sl[2]], Y[sl[2]], B, F, S[alpha], S[beta], S[gamma])

    T = dense_interface_schur(system, part, j, s)
    T_FB = T[np.ix_(F, B)]
    approx = _dense(system, I[F], I[B]) - pair.X @ pair.Y
    nrm = np.linalg.norm(T_FB)
    pair.residual = float(np.linalg.norm(T_FB - approx) / nrm) if nrm > 0 else float(np.linalg.norm(approx))
    return pair


# --- verification suites -----------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0


@dataclass
class VerificationSummary:
    level: str
    results: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failed(self) -> list[str]:
        return [r.name for r in self.results if not r.passed]

    def lines(self) -> list[str]:
        return [f"{'PASS' if r.passed else 'FAIL'}  {r.name:<28s} {r.seconds:6.1f}s  {r.detail}"
                for r in self.results]


def _timed(name, fn) -> CheckResult:
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # noqa: BLE001 - a crash is a failed check
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    return CheckResult(name, bool(ok), detail, time.perf_counter() - t0)


def check_elimination_exactness(grids=(32, 48), bs=(3, 4, 8), ppw: float = 15.0, tol: float = 1e-10):
    from .driver import SolverConfig, factorize
    from .problem import assemble_fd5, helmholtz_problem, poisson_problem

    worst = 0.0
    for n in grids:
        for spec in (poisson_problem(n), helmholtz_problem(n, ppw=ppw)):
            system = assemble_fd5(spec)
            ref = dense_full_solve(system)
            for b in bs:
                u = factorize(system, SolverConfig(b=b, compression="dense")).solve()
                worst = max(worst, np.linalg.norm(u - ref, np.inf) / np.linalg.norm(ref, np.inf))
    return worst <= tol, f"max rel inf-norm error {worst:.2e} (limit {tol:.0e})"


def _rank_cases(n2: int):
    """Four contiguous J_B ranges of varying size and offset."""
    return [(n2 // 4, 3 * n2 // 4), (0, n2 // 2), (n2 // 8, n2 // 8 + n2 // 4), (5 * n2 // 8, 7 * n2 // 8)]


def _rank_specs(n: int, full: bool):
    from .problem import helmholtz_problem, helmholtz_varcoef_problem, poisson_problem

    specs = [poisson_problem(n)]
    if full:
        specs += [helmholtz_problem(n, ppw=20), helmholtz_varcoef_problem(n, ppw=20, seed=1)]
    return specs


def check_rank_property(n: int = 64, bs=(4,), full: bool = False, tol: float = 1e-10):
    """Slab part within ``2b`` and total within ``2b`` plus the direct coupling rank.

    Ranks above the literal ``2b`` (interior ``J_B`` adds one direct stencil
    entry per cut) are counted in the detail line, not failed.
    """
    from .problem import assemble_fd5
    from .stage_one import partition

    ok, literal_over, worst = True, 0, 0
    for spec in _rank_specs(n, full):
        system = assemble_fd5(spec)
        for b in bs:
            part = partition(n, n, b)
            for J_B in _rank_cases(n):
                rc = rank_property_check(system, part, 0, J_B, tol)
                ok &= rc.passed_dense_part
                literal_over += not rc.passed
                worst = max(worst, max(rc.dense_rank_BF, rc.dense_rank_FB) - rc.bound)
    return ok, (f"max slab-part rank minus 2b = {worst}; "
                f"{literal_over} case(s) exceed 2b only through the sparse direct term")


def check_separator_factors(n: int = 48, b: int = 4, tol: float = 1e-11):
    from .problem import assemble_fd5, poisson_problem
    from .stage_one import partition

    system = assemble_fd5(poisson_problem(n))
    part = partition(n, n, b)
    worst, widths_ok = 0.0, True
    for J_B in ((n // 4, 3 * n // 4), (n // 8, n // 2), (n // 3, n // 3 + 5)):
        pair = appendix_a_factors(system, part, 0, J_B)
        worst = max(worst, pair.residual)
        widths_ok &= pair.X.shape[1] == 2 * b and pair.Y.shape[0] == 2 * b
    return worst <= tol and widths_ok, f"max residual {worst:.2e}, widths 2b: {widths_ok}"


def check_hbs(n: int = 64, b: int = 4, tol: float = 1e-10, seed: int = 0):
    """Compress every block at its structural rank bound; compare with dense extraction."""
    from .hbs import CountingOperator, build_tree, hbs_compress
    from .problem import assemble_fd5, poisson_problem
    from .stage_one import SlabElimination, factor_interiors, partition

    system = assemble_fd5(poisson_problem(n))
    part = partition(n, n, b)
    elim = SlabElimination(system, part, factor_interiors(system, part))
    worst, budget_ok = 0.0, True
    for j in range(part.k):
        for k in range(max(j - 1, 0), min(j + 2, part.k)):
            r = elim.rank_bound(j, k)
            op = CountingOperator(elim.block_operator(j, k))
            m = hbs_compress(op, n, build_tree(n, min(2 * r, n)), r, seed=seed, tol=tol)
            dense = dense_schur_block(elim, j, k)
            worst = max(worst, np.linalg.norm(m.to_dense() - dense) / np.linalg.norm(dense))
            budget_ok &= max(op.n_forward, op.n_adjoint) <= 4 * r + 16
    return worst <= tol and budget_ok, f"max rel Frobenius error {worst:.2e}, budget held: {budget_ok}"


def check_matrix_free(n: int = 32, b: int = 4, tol: float = 1e-12):
    from .problem import assemble_fd5, helmholtz_problem
    from .stage_one import SlabElimination, factor_interiors, partition

    system = assemble_fd5(helmholtz_problem(n, ppw=15))
    part = partition(n, n, b)
    elim = SlabElimination(system, part, factor_interiors(system, part))
    ref = dense_reduced_blocks(system, part)
    worst = 0.0
    for j in range(part.k):
        for k in range(max(j - 1, 0), min(j + 2, part.k)):
            T = dense_schur_block(elim, j, k)
            worst = max(worst, np.linalg.norm(T - ref[j, k]) / np.linalg.norm(ref[j, k]))
    return worst <= tol, f"max rel error vs dense elimination {worst:.2e}"


def check_determinism(n: int = 48, seed: int = 7):
    from .driver import SolverConfig, factorize
    from .problem import assemble_fd5, poisson_problem

    system = assemble_fd5(poisson_problem(n))
    cfg = SolverConfig(b=4, compression="hbs", r_start=4, leaf_size=16, seed=seed)
    f1, f2 = factorize(system, cfg), factorize(system, cfg)
    same = np.array_equal(f1.solve(), f2.solve()) and f1.ranks == f2.ranks
    return same, "bitwise identical" if same else "solutions differ"


def run_verification(level: str = "quick") -> VerificationSummary:
    """Run the named checks; ``full`` adds rank sweeps over b in {2, 4, 8}."""
    if level not in ("quick", "full"):
        raise ValueError(f"unknown verification level {level!r}")
    full = level == "full"
    checks = [
        ("elimination-exactness", check_elimination_exactness),
        ("matrix-free-consistency", check_matrix_free),
        ("rank-bound", lambda: check_rank_property(bs=(2, 4, 8) if full else (4,), full=full)),
        ("separator-factors", check_separator_factors),
        ("hbs-compression", check_hbs),
        ("determinism", check_determinism),
    ]
    summary = VerificationSummary(level)
    for name, fn in checks:
        res = _timed(name, fn)
        log.info("%s: %s (%s)", name, "pass" if res.passed else "FAIL", res.detail)
        summary.results.append(res)
    return summary
