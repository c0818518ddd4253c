"""Two-level sparse direct solver for five-point discretizations on thin slabs.

Stage one eliminates slab interiors with banded LU and forms the interface
Schur complements (densely or by randomized HBS compression).  Stage two
factorizes the resulting block-tridiagonal system by a sweep.
"""

from .driver import (CSV_COLUMNS, Factorization, SolveReport, SolverConfig, benchmark, choose_b,
                     factorize, run, solve)
from .hbs import HbsMatrix, build_tree, hbs_apply, hbs_compress, hbs_compress_adaptive, hbs_to_dense
from .linalg import SingularMatrixError, banded_lu, dense_lu, numerical_rank
from .problem import (ProblemSpec, SparseSystem, assemble_fd5, bessel_j0, error_report,
                      helmholtz_problem, helmholtz_varcoef_problem, poisson_problem)
from .stage_one import SlabElimination, factor_interiors, partition
from .stage_two import BlockTridiagonal, sweep_build, sweep_solve

__version__ = "0.1.0"

__all__ = [
    "CSV_COLUMNS", "Factorization", "SolveReport", "SolverConfig", "benchmark", "choose_b",
    "factorize", "run", "solve", "HbsMatrix", "build_tree", "hbs_apply", "hbs_compress",
    "hbs_compress_adaptive", "hbs_to_dense", "SingularMatrixError", "banded_lu", "dense_lu",
    "numerical_rank", "ProblemSpec", "SparseSystem", "assemble_fd5", "bessel_j0", "error_report",
    "helmholtz_problem", "helmholtz_varcoef_problem", "poisson_problem", "SlabElimination",
    "factor_interiors", "partition", "BlockTridiagonal", "sweep_build", "sweep_solve",
]
