"""End-to-end factorize / solve and the benchmark harness."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .problem import ErrorReport, ProblemSpec, SparseSystem, assemble_fd5, error_report
from .stage_one import SlabElimination, factor_interiors, partition
from .stage_two import SweepFactorization, sweep_build

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "N", "n1", "n2", "b", "kappa", "T_factor_stage1_s", "T_factor_stage2_s", "T_solve_s",
    "M_factor_scalars", "relerr_res", "relerr_true", "hbs_max_rank", "seed",
)
TIMING_COLUMNS = ("T_factor_stage1_s", "T_factor_stage2_s", "T_solve_s")


@dataclass(frozen=True)
class SolverConfig:
    b: int | None = None
    c: float = 0.6
    compression: str = "auto"  # auto | dense | hbs
    hbs_tol: float = 1e-10
    r_start: int = 16
    r_max: int | None = None
    leaf_size: int = 64
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not 0 < self.c <= 2:
            raise ValueError(f"b coefficient c must lie in (0, 2], got {self.c}")
        if self.compression not in ("auto", "dense", "hbs"):
            raise ValueError(f"unknown compression mode {self.compression!r}")
        if self.b is not None and self.b < 1:
            raise ValueError(f"explicit b must be positive, got {self.b}")

    def resolve_mode(self, n2: int, b: int) -> str:
        if self.compression != "auto":
            return self.compression
        return "hbs" if n2 >= 512 and b >= 16 else "dense"


def choose_b(n1: int, n2: int, config: SolverConfig | None = None) -> int:
    """``c * n2^(2/3)`` rounded to a multiple of 10, clamped to ``[10, n1/2]``."""
    config = config or SolverConfig()
    if config.b is not None:
        return config.b
    if n2 < 8:
        raise ValueError(f"choose_b needs n2 >= 8, got {n2}")
    b = 10 * math.floor(config.c * n2 ** (2.0 / 3.0) / 10 + 0.5)
    return max(1, min(max(b, 10), n1 // 2))


@dataclass
class Factorization:
    system: SparseSystem
    config: SolverConfig
    elimination: SlabElimination
    sweep: SweepFactorization
    ranks: dict
    mode: str
    timings: dict = field(default_factory=dict)

    @property
    def partition(self):
        return self.elimination.part

    @property
    def b(self) -> int:
        return self.partition.b

    @property
    def stored_scalars_stage1(self) -> int:
        return self.elimination.stored_scalars

    @property
    def stored_scalars_stage2(self) -> int:
        return self.sweep.stored_scalars

    @property
    def stored_scalars(self) -> int:
        return self.stored_scalars_stage1 + self.stored_scalars_stage2

    @property
    def hbs_max_rank(self) -> int:
        return max(self.ranks.values(), default=0)

    def solve(self, f=None) -> np.ndarray:
        return solve(self, self.system.rhs if f is None else f)


def factorize(system: SparseSystem, config: SolverConfig | None = None) -> Factorization:
    config = config or SolverConfig()
    n1, n2 = system.shape
    b = choose_b(n1, n2, config)
    mode = config.resolve_mode(n2, b)

    t0 = time.perf_counter()
    part = partition(n1, n2, b)
    elim = SlabElimination(system, part, factor_interiors(system, part, config.threads))
    reduced = elim.build_reduced(mode, tol=config.hbs_tol, r_start=config.r_start,
                                 r_max=config.r_max, leaf_size=config.leaf_size, seed=config.seed)
    t1 = time.perf_counter()
    sweep = sweep_build(reduced.t)
    t2 = time.perf_counter()
    log.info("factorized N=%d b=%d (%s): stage one %.2fs, stage two %.2fs",
             system.N, b, mode, t1 - t0, t2 - t1)
    return Factorization(system, config, elim, sweep, reduced.ranks, mode,
                         {"stage1": t1 - t0, "stage2": t2 - t1})


def solve(fact: Factorization, f) -> np.ndarray:
    """Reduce the load onto interfaces, sweep, then recover slab interiors."""
    elim = fact.elimination
    f = np.asarray(f, dtype=float)
    if f.shape[0] != fact.system.N:
        raise ValueError(f"rhs has {f.shape[0]} rows, system has {fact.system.N}")
    u_ifc = fact.sweep.solve(elim.reduce_rhs(f))
    return elim.recover_interiors(u_ifc, f)


@dataclass
class SolveReport:
    N: int
    n1: int
    n2: int
    b: int
    kappa: float
    T_factor_stage1_s: float
    T_factor_stage2_s: float
    T_solve_s: float
    M_factor_scalars: int
    M_factor_stage1: int
    M_factor_stage2: int
    error: ErrorReport
    hbs_max_rank: int
    seed: int
    status: str = "ok"

    @property
    def M_factor_bytes(self) -> int:
        return 8 * self.M_factor_scalars

    @property
    def T_factor_s(self) -> float:
        return self.T_factor_stage1_s + self.T_factor_stage2_s

    def row(self) -> dict:
        d = {c: getattr(self, c) for c in CSV_COLUMNS if hasattr(self, c)}
        d["relerr_res"] = self.error.relerr_res
        d["relerr_true"] = self.error.relerr_true
        d["status"] = self.status
        return {c: d[c] for c in (*CSV_COLUMNS, "status")}


def run(spec: ProblemSpec, config: SolverConfig | None = None) -> tuple[SolveReport, np.ndarray]:
    config = config or SolverConfig()
    system = assemble_fd5(spec)
    fact = factorize(system, config)
    t0 = time.perf_counter()
    u = fact.solve()
    t_solve = time.perf_counter() - t0
    err = error_report(system, u, system.u_true())
    report = SolveReport(
        N=system.N, n1=spec.n1, n2=spec.n2, b=fact.b, kappa=spec.kappa,
        T_factor_stage1_s=fact.timings["stage1"], T_factor_stage2_s=fact.timings["stage2"],
        T_solve_s=t_solve, M_factor_scalars=fact.stored_scalars,
        M_factor_stage1=fact.stored_scalars_stage1, M_factor_stage2=fact.stored_scalars_stage2,
        error=err, hbs_max_rank=fact.hbs_max_rank, seed=config.seed,
    )
    return report, u


def failed_report(spec: ProblemSpec, config: SolverConfig, exc: Exception) -> SolveReport:
    nan = float("nan")
    try:
        b = choose_b(spec.n1, spec.n2, config)
    except ValueError:
        b = -1
    return SolveReport(spec.N, spec.n1, spec.n2, b, spec.kappa, nan, nan, nan, 0, 0, 0,
                       ErrorReport(nan, nan, 0), 0, config.seed,
                       status=f"error: {type(exc).__name__}: {exc}")


def benchmark(specs, config: SolverConfig | None = None, on_report=None) -> list[SolveReport]:
    """Run every spec; failures become ``status`` entries and the sweep continues."""
    config = config or SolverConfig()
    reports = []
    for spec in specs:
        try:
            report, _ = run(spec, config)
        except Exception as exc:  # noqa: BLE001 - recorded per row
            log.warning("run failed for %s n=%d: %s", spec.name, spec.n2, exc)
            report = failed_report(spec, config, exc)
        reports.append(report)
        if on_report is not None:
            on_report(report)
    return reports


class ReportWriter:
    """Appends report rows as they arrive so partial sweeps survive a crash."""

    def __init__(self, path, fmt: str = "csv"):
        if fmt not in ("csv", "json"):
            raise ValueError(f"unknown format {fmt!r}")
        self.path = path
        self.fmt = fmt
        self.rows: list[dict] = []
        if fmt == "csv":
            with open(path, "w", newline="") as fh:
                csv.writer(fh).writerow((*CSV_COLUMNS, "status"))

    def __call__(self, report: SolveReport) -> None:
        row = report.row()
        self.rows.append(row)
        if self.fmt == "csv":
            with open(self.path, "a", newline="") as fh:
                csv.DictWriter(fh, fieldnames=(*CSV_COLUMNS, "status")).writerow(row)
        else:
            with open(self.path, "w") as fh:
                json.dump(self.rows, fh, indent=2, default=_json_default)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def config_dict(config: SolverConfig) -> dict:
    return asdict(config)


def with_seed(config: SolverConfig, seed: int) -> SolverConfig:
    return replace(config, seed=seed)


def estimate_peak_bytes(n1: int, n2: int, config: SolverConfig | None = None) -> int:
    """Rough peak memory of :func:`factorize`.

    Stage one keeps about ``b`` scalars per unknown.  The dense reduced blocks
    (``3k n2^2`` scalars) and the sweep factors (same size) coexist while
    stage two runs.
    """
    b = choose_b(n1, n2, config)
    k = partition(n1, n2, b).k
    return 8 * (b * n1 * n2 + 2 * 3 * k * n2 * n2)


def fit_exponent(N, T) -> float:
    """Least-squares slope of ``log T`` against ``log N``."""
    N, T = np.asarray(N, dtype=float), np.asarray(T, dtype=float)
    if N.size < 2 or np.any(N <= 0) or np.any(T <= 0):
        raise ValueError("need at least two positive (N, T) points")
    return float(np.polyfit(np.log(N), np.log(T), 1)[0])
