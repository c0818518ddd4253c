"""Five-point finite-difference model problems on rectangular grids.

Unknowns are the interior nodes of an ``(n1 + 2) x (n2 + 2)`` grid with spacing
``h``; node ``(i, j)`` (1-based, ``i`` along x) sits at ``(i*h, j*h)`` and has
global index ``(i - 1) * n2 + (j - 1)``, so every grid column is a contiguous
run of ``n2`` unknowns.  Dirichlet nodes are folded into the right-hand side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.io
import scipy.sparse as sp

GridFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]

SOURCE_POINT = (-0.1, 0.5)


def _zero(x, y):
    return np.zeros(np.broadcast(x, y).shape)


def _one(x, y):
    return np.ones(np.broadcast(x, y).shape)


@dataclass(frozen=True)
class ProblemSpec:
    """Geometry and data of ``-lap(u) - kappa^2 b(x) u = f`` with Dirichlet data ``g``."""

    n1: int
    n2: int
    h: float
    kappa: float = 0.0
    coefficient_field: GridFunction = _one
    dirichlet_data: GridFunction = _zero
    body_load: GridFunction = _zero
    true_solution: GridFunction | None = None
    name: str = "custom"

    def __post_init__(self):
        if self.n1 < 2 or self.n2 < 2:
            raise ValueError(f"grid must have at least 2x2 unknowns, got {self.n1}x{self.n2}")
        if self.n1 < self.n2:
            raise ValueError(f"expected n1 >= n2 (long side first), got n1={self.n1}, n2={self.n2}")
        if not self.h > 0:
            raise ValueError(f"grid spacing must be positive, got h={self.h}")
        if not self.kappa >= 0:
            raise ValueError(f"wavenumber must be non-negative, got kappa={self.kappa}")

    @property
    def N(self) -> int:
        return self.n1 * self.n2

    @property
    def extent(self) -> tuple[float, float]:
        return ((self.n1 + 1) * self.h, (self.n2 + 1) * self.h)


@dataclass(frozen=True)
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    node_coords: np.ndarray
    spec: ProblemSpec | None = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return self.matrix.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        """Grid shape ``(n1, n2)`` of the unknowns."""
        return (self.spec.n1, self.spec.n2)

    def u_true(self) -> np.ndarray | None:
        if self.spec is None or self.spec.true_solution is None:
            return None
        return self.spec.true_solution(self.node_coords[:, 0], self.node_coords[:, 1])


@dataclass(frozen=True)
class ErrorReport:
    relerr_res: float
    relerr_true: float
    n_rhs: int = 1
    res_is_absolute: bool = False
    true_is_absolute: bool = False


def grid_coordinates(n1: int, n2: int, h: float) -> np.ndarray:
    i, j = np.meshgrid(np.arange(1, n1 + 1), np.arange(1, n2 + 1), indexing="ij")
    return np.column_stack([i.ravel() * h, j.ravel() * h])


def assemble_fd5(spec: ProblemSpec) -> SparseSystem:
    """Assemble the five-point discretization of ``-lap - kappa^2 b``.

    Rows are scaled by ``1/h^2``: diagonal ``4/h^2 - kappa^2 b``, neighbours
    ``-1/h^2``.  A neighbour on the boundary contributes ``g/h^2`` to the rhs.
    """
    n1, n2, h = spec.n1, spec.n2, spec.h
    N = n1 * n2
    coords = grid_coordinates(n1, n2, h)
    x, y = coords[:, 0], coords[:, 1]

    bvals = np.broadcast_to(np.asarray(spec.coefficient_field(x, y), dtype=float), (N,))
    if np.any(bvals < 0) or not np.all(np.isfinite(bvals)):
        raise ValueError("coefficient field must be finite and non-negative at grid points")

    inv_h2 = 1.0 / h**2
    diag = 4.0 * inv_h2 - spec.kappa**2 * bvals
    idx = np.arange(N).reshape(n1, n2)
    rows = [idx.ravel()]
    cols = [idx.ravel()]
    vals = [diag]
    # neighbours along y (within a column) and along x (across columns)
    for a, b in ((idx[:, :-1], idx[:, 1:]), (idx[:-1, :], idx[1:, :])):
        a, b = a.ravel(), b.ravel()
        rows += [a, b]
        cols += [b, a]
        vals += [np.full(a.size, -inv_h2)] * 2
    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    )
    A.sort_indices()

    f = np.broadcast_to(np.asarray(spec.body_load(x, y), dtype=float), (N,)).copy()
    f += inv_h2 * _boundary_load(spec)
    return SparseSystem(matrix=A, rhs=f, node_coords=coords, spec=spec)


def _boundary_load(spec: ProblemSpec) -> np.ndarray:
    """Sum of Dirichlet values over the boundary neighbours of every unknown."""
    n1, n2, h = spec.n1, spec.n2, spec.h
    g = spec.dirichlet_data
    load = np.zeros((n1, n2))
    xs = np.arange(1, n1 + 1) * h
    ys = np.arange(1, n2 + 1) * h
    load[:, 0] += g(xs, np.zeros(n1))
    load[:, -1] += g(xs, np.full(n1, (n2 + 1) * h))
    load[0, :] += g(np.zeros(n2), ys)
    load[-1, :] += g(np.full(n2, (n1 + 1) * h), ys)
    return load.ravel()


def write_matrix_market(system: SparseSystem, path) -> None:
    scipy.io.mmwrite(str(path), system.matrix, field="real", symmetry="general")


# --- manufactured solutions -------------------------------------------------


def _source_distance(x, y):
    return np.hypot(np.asarray(x, dtype=float) - SOURCE_POINT[0], np.asarray(y, dtype=float) - SOURCE_POINT[1])


def true_solution_poisson(x, y):
    """Harmonic log potential centred at the exterior point (-0.1, 0.5)."""
    r = _source_distance(x, y)
    if np.any(r == 0):
        raise ValueError("log potential is singular at the source point (-0.1, 0.5)")
    return np.log(r)


def true_solution_helmholtz(x, y, kappa: float):
    if not kappa >= 0:
        raise ValueError(f"wavenumber must be non-negative, got {kappa}")
    return bessel_j0(kappa * _source_distance(x, y))


def kappa_from_ppw(ppw: float, h: float) -> float:
    """Wavenumber giving ``ppw`` grid points per wavelength at spacing ``h``."""
    if ppw <= 0:
        raise ValueError("points per wavelength must be positive")
    return 2 * math.pi / (ppw * h)


def poisson_problem(n: int, n1: int | None = None) -> ProblemSpec:
    n1 = n if n1 is None else n1
    return ProblemSpec(
        n1=n1,
        n2=n,
        h=1.0 / (n + 1),
        dirichlet_data=true_solution_poisson,
        true_solution=true_solution_poisson,
        name="poisson",
    )


def helmholtz_problem(n: int, kappa: float | None = None, ppw: float | None = None,
                      n1: int | None = None) -> ProblemSpec:
    if (kappa is None) == (ppw is None):
        raise ValueError("give exactly one of kappa or ppw")
    n1 = n if n1 is None else n1
    h = 1.0 / (n + 1)
    if kappa is None:
        kappa = kappa_from_ppw(ppw, h)

    def u(x, y):
        return true_solution_helmholtz(x, y, kappa)

    return ProblemSpec(n1=n1, n2=n, h=h, kappa=kappa, dirichlet_data=u, true_solution=u,
                       name="helmholtz_const")


def smooth_coefficient(x, y):
    return 1.0 + 0.5 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)


def random_smooth_coefficient(seed: int, modes: int = 3):
    """``1 + sum a_pq sin(p pi x) sin(q pi y)`` with ``sum |a_pq| <= 1/2``, so b stays in [1/2, 3/2]."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1.0, 1.0, (modes, modes))
    a *= 0.5 / np.abs(a).sum()
    p = np.arange(1, modes + 1)

    def coef(x, y):
        sx = np.sin(np.pi * np.multiply.outer(x, p))
        sy = np.sin(np.pi * np.multiply.outer(y, p))
        return 1.0 + np.einsum("...p,pq,...q->...", sx, a, sy)

    return coef


def helmholtz_varcoef_problem(n: int, kappa: float | None = None, ppw: float | None = None,
                              n1: int | None = None, seed: int | None = None) -> ProblemSpec:
    """Variable-coefficient Helmholtz with ``g = 1`` and no known solution.

    ``seed`` swaps the fixed coefficient for a random smooth one.
    """
    if (kappa is None) == (ppw is None):
        raise ValueError("give exactly one of kappa or ppw")
    n1 = n if n1 is None else n1
    h = 1.0 / (n + 1)
    if kappa is None:
        kappa = kappa_from_ppw(ppw, h)
    coef = smooth_coefficient if seed is None else random_smooth_coefficient(seed)
    return ProblemSpec(n1=n1, n2=n, h=h, kappa=kappa, coefficient_field=coef,
                       dirichlet_data=_one, name="helmholtz_varcoef")


# --- error metrics ----------------------------------------------------------


def error_report(system: SparseSystem, u_calc, u_true=None) -> ErrorReport:
    """Relative residual and true-solution errors (worst column for blocks)."""
    u_calc = np.asarray(u_calc, dtype=float)
    single = u_calc.ndim == 1
    U = u_calc[:, None] if single else u_calc
    if U.shape[0] != system.N:
        raise ValueError(f"solution has {U.shape[0]} rows, system has {system.N}")
    F = system.rhs[:, None] if system.rhs.ndim == 1 else system.rhs
    if F.shape[1] != U.shape[1]:
        F = np.broadcast_to(F, U.shape)

    res = np.linalg.norm(system.matrix @ U - F, axis=0)
    fnorm = np.linalg.norm(F, axis=0)
    res_abs = bool(np.any(fnorm == 0))
    relerr_res = float(np.max(res if res_abs else res / fnorm))

    if u_true is None:
        return ErrorReport(relerr_res, float("nan"), U.shape[1], res_abs, False)
    T = np.asarray(u_true, dtype=float)
    T = T[:, None] if T.ndim == 1 else T
    if T.shape[0] != system.N:
        raise ValueError(f"u_true has {T.shape[0]} rows, system has {system.N}")
    err = np.linalg.norm(U - T, axis=0)
    tnorm = np.linalg.norm(np.broadcast_to(T, U.shape), axis=0)
    true_abs = bool(np.any(tnorm == 0))
    relerr_true = float(np.max(err if true_abs else err / tnorm))
    return ErrorReport(relerr_res, relerr_true, U.shape[1], res_abs, true_abs)


# --- Bessel J0 ---------------------------------------------------------------

_SERIES_MAX = 1.0
_ASYMPTOTIC_MIN = 25.0


def _j0_series(t):
    q = -(t * t) / 4.0
    term = np.ones_like(t)
    total = np.ones_like(t)
    for k in range(1, 30):
        term = term * q / (k * k)
        total = total + term
    return total


def _j0_miller(t):
    # backward recurrence J_{n-1} = (2n/t) J_n - J_{n+1}, normalised by
    # J_0 + 2 sum J_{2k} = 1
    m = int(2 * ((int(t.max()) + 30 + int(6 * np.cbrt(t.max()))) // 2))
    jp1 = np.zeros_like(t)
    jn = np.full_like(t, 1e-30)
    norm = np.zeros_like(t)
    j0 = None
    for n in range(m, 0, -1):
        jm1 = (2.0 * n / t) * jn - jp1
        if n % 2 == 0:
            norm += 2.0 * jn
        jp1, jn = jn, jm1
        big = np.abs(jn) > 1e250
        if big.any():
            scale = np.where(big, 1e-250, 1.0)
            jn, jp1, norm = jn * scale, jp1 * scale, norm * scale
        j0 = jn
    norm += j0
    return j0 / norm


def _j0_asymptotic(t):
    # Hankel expansion: J0 = sqrt(2/(pi t)) (P cos w - Q sin w), w = t - pi/4
    P = np.ones_like(t)
    Q = np.zeros_like(t)
    a = 1.0
    term_p = np.ones_like(t)
    for k in range(1, 40):
        a *= -((2 * k - 1) ** 2) / (k * 8.0)
        term = a / t**k
        if k % 2 == 1:
            Q += (-1) ** ((k - 1) // 2) * term
        else:
            term_p = (-1) ** (k // 2) * term
            P += term_p
        if np.max(np.abs(term)) < 1e-17:
            break
    c, s = np.cos(t), np.sin(t)
    cos_w = (c + s) / math.sqrt(2.0)
    sin_w = (s - c) / math.sqrt(2.0)
    return np.sqrt(2.0 / (math.pi * t)) * (P * cos_w - Q * sin_w)


def bessel_j0(t):
    """Bessel function of the first kind, order zero, for real arguments."""
    arr = np.abs(np.asarray(t, dtype=float))
    flat = arr.ravel()
    out = np.empty_like(flat)
    small = flat < _SERIES_MAX
    large = flat > _ASYMPTOTIC_MIN
    mid = ~(small | large)
    if small.any():
        out[small] = _j0_series(flat[small])
    if mid.any():
        out[mid] = _j0_miller(flat[mid])
    if large.any():
        out[large] = _j0_asymptotic(flat[large])
    out = out.reshape(arr.shape)
    return float(out) if out.ndim == 0 else out
