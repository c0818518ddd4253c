import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from slablu.driver import (CSV_COLUMNS, ReportWriter, SolverConfig, benchmark, choose_b, estimate_peak_bytes,
                           factorize, fit_exponent, run, solve)
from slablu.oracles import dense_full_solve
from slablu.problem import ProblemSpec, assemble_fd5, helmholtz_problem, poisson_problem


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# --- choose_b ----------------------------------------------------------------


def test_choose_b_reference_rows():
    assert choose_b(1000, 1000, SolverConfig(c=0.5)) == 50
    assert choose_b(10000, 10000, SolverConfig(c=0.54)) == 250


def test_choose_b_default():
    assert choose_b(1000, 1000) == 60


def test_choose_b_clamps_and_overrides():
    assert choose_b(64, 8) == 10
    assert choose_b(12, 12) == 6  # n1 / 2 wins over the floor of 10
    assert choose_b(1000, 1000, SolverConfig(b=7)) == 7
    with pytest.raises(ValueError):
        choose_b(10, 7)


@pytest.mark.parametrize("kw", [dict(c=0.0), dict(c=2.5), dict(compression="lowrank"), dict(b=0)])
def test_solver_config_validation(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


def test_auto_mode_selection():
    cfg = SolverConfig()
    assert cfg.resolve_mode(512, 40) == "hbs"
    assert cfg.resolve_mode(256, 40) == "dense"
    assert cfg.resolve_mode(1024, 8) == "dense"
    assert SolverConfig(compression="hbs").resolve_mode(16, 2) == "hbs"


# --- factorize / solve -------------------------------------------------------


def test_factorize_matches_dense_oracle(poisson32):
    fact = factorize(poisson32, SolverConfig(b=4))
    assert _rel(fact.solve(), dense_full_solve(poisson32)) <= 1e-10
    assert fact.timings["stage1"] >= 0 and fact.timings["stage2"] >= 0


def test_factorize_deterministic_with_seed():
    s = assemble_fd5(poisson_problem(48))
    cfg = SolverConfig(b=4, compression="hbs", r_start=4, leaf_size=16, seed=9)
    f1, f2 = factorize(s, cfg), factorize(s, cfg)
    assert f1.ranks == f2.ranks
    np.testing.assert_array_equal(f1.solve(), f2.solve())


def test_single_slab_degenerate():
    s = assemble_fd5(helmholtz_problem(20, kappa=5.0))
    fact = factorize(s, SolverConfig(b=20))
    assert fact.partition.k == 0 and fact.stored_scalars_stage2 == 0
    assert _rel(fact.solve(), dense_full_solve(s)) <= 1e-12


def test_b_n1_minus_two():
    s = assemble_fd5(poisson_problem(20))
    fact = factorize(s, SolverConfig(b=18))
    assert fact.partition.k == 1
    assert _rel(fact.solve(), dense_full_solve(s)) <= 1e-12


def test_self_consistency_random_w(helmholtz32, rng):
    fact = factorize(helmholtz32, SolverConfig(b=5))
    w = rng.standard_normal(helmholtz32.N)
    assert _rel(fact.solve(helmholtz32.matrix @ w), w) <= 1e-10


def test_zero_rhs_gives_zero(poisson32):
    fact = factorize(poisson32, SolverConfig(b=4))
    assert not np.any(fact.solve(np.zeros(poisson32.N)))


def test_multi_rhs_in_one_pass(helmholtz32, rng):
    fact = factorize(helmholtz32, SolverConfig(b=4))
    W = rng.standard_normal((helmholtz32.N, 5))
    U = solve(fact, helmholtz32.matrix @ W)
    assert _rel(U, W) <= 1e-10
    np.testing.assert_allclose(U[:, 2], fact.solve(helmholtz32.matrix @ W[:, 2]), rtol=1e-12, atol=1e-14)


def test_solve_dimension_mismatch(poisson32):
    with pytest.raises(ValueError):
        factorize(poisson32, SolverConfig(b=4)).solve(np.ones(5))


def test_factor_once_solve_many_bitwise():
    s = assemble_fd5(helmholtz_problem(24, ppw=12))
    cfg = SolverConfig(b=3, seed=4)
    rhs = np.random.default_rng(0).standard_normal((s.N, 100))
    fact = factorize(s, cfg)
    shared = [fact.solve(rhs[:, i]) for i in range(100)]
    for i in range(100):
        np.testing.assert_array_equal(shared[i], factorize(s, cfg).solve(rhs[:, i]))


def test_concurrent_solves_share_factorization(poisson32, rng):
    fact = factorize(poisson32, SolverConfig(b=4))
    F = rng.standard_normal((poisson32.N, 8))
    serial = [fact.solve(F[:, i]) for i in range(8)]
    with ThreadPoolExecutor(4) as pool:
        threaded = list(pool.map(lambda i: fact.solve(F[:, i]), range(8)))
    for a, b in zip(serial, threaded):
        np.testing.assert_array_equal(a, b)


def test_singular_slab_propagates():
    three = lambda x, y: np.full(np.broadcast(x, y).shape, 3.0)
    s = assemble_fd5(ProblemSpec(n1=3, n2=2, h=1.0, kappa=1.0, coefficient_field=three))
    with pytest.raises(np.linalg.LinAlgError, match="slab"):
        factorize(s, SolverConfig(b=1))


# --- storage accounting ------------------------------------------------------


def test_stage_two_storage_exact():
    for n, b in ((32, 4), (48, 5), (64, 10)):
        fact = factorize(assemble_fd5(poisson_problem(n)), SolverConfig(b=b))
        k = fact.partition.k
        assert fact.stored_scalars_stage2 == (k + 2 * (k - 1)) * n**2
        assert fact.stored_scalars == fact.stored_scalars_stage1 + fact.stored_scalars_stage2


def test_report_storage_matches_components():
    rep, _ = run(poisson_problem(32), SolverConfig(b=4))
    assert rep.M_factor_scalars == rep.M_factor_stage1 + rep.M_factor_stage2
    assert rep.M_factor_bytes == 8 * rep.M_factor_scalars
    assert min(rep.T_factor_stage1_s, rep.T_factor_stage2_s, rep.T_solve_s) >= 0


# --- benchmark ---------------------------------------------------------------


def test_benchmark_empty():
    assert benchmark([]) == []


def test_benchmark_convergence_order():
    reports = benchmark([poisson_problem(n) for n in (64, 128, 256)], SolverConfig())
    errs = [r.error.relerr_true for r in reports]
    assert all(r.status == "ok" for r in reports)
    for a, b in zip(errs, errs[1:]):
        assert 3.4 <= a / b <= 4.6


def test_benchmark_helmholtz_250ppw_plateau():
    # the pollution error only reaches the 1e-3 range once kappa is moderate
    reports = benchmark([helmholtz_problem(n, ppw=250) for n in (384, 512)], SolverConfig())
    for r in reports:
        assert r.error.relerr_res <= 1e-9
        assert 1e-4 <= r.error.relerr_true <= 3e-2


def test_benchmark_records_failures_and_continues():
    three = lambda x, y: np.full(np.broadcast(x, y).shape, 3.0)
    bad = ProblemSpec(n1=3, n2=2, h=1.0, kappa=1.0, coefficient_field=three)
    seen = []
    reports = benchmark([bad, poisson_problem(16)], SolverConfig(b=1), on_report=seen.append)
    assert reports[0].status.startswith("error: SingularMatrixError")
    assert math.isnan(reports[0].T_solve_s)
    assert reports[1].status == "ok"
    assert seen == reports


# --- report output -----------------------------------------------------------


GOLDEN_HEADER = ("N,n1,n2,b,kappa,T_factor_stage1_s,T_factor_stage2_s,T_solve_s,M_factor_scalars,"
                 "relerr_res,relerr_true,hbs_max_rank,seed,status")


def test_csv_header_golden(tmp_path):
    path = tmp_path / "r.csv"
    ReportWriter(path, "csv")
    assert path.read_text().splitlines() == [GOLDEN_HEADER]
    assert GOLDEN_HEADER.startswith(",".join(CSV_COLUMNS))


def test_csv_rows_appended_as_runs_finish(tmp_path):
    path = tmp_path / "r.csv"
    w = ReportWriter(path, "csv")
    rep, _ = run(poisson_problem(16), SolverConfig(b=3))
    w(rep)
    assert len(path.read_text().splitlines()) == 2
    w(rep)
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == 2 and rows[0]["N"] == "256" and rows[0]["status"] == "ok"


def test_json_mirror(tmp_path):
    path = tmp_path / "r.json"
    w = ReportWriter(path, "json")
    rep, _ = run(poisson_problem(16), SolverConfig(b=3, seed=2))
    w(rep)
    data = json.loads(path.read_text())
    assert list(data[0]) == [*CSV_COLUMNS, "status"]
    assert data[0]["seed"] == 2


def test_writer_rejects_format(tmp_path):
    with pytest.raises(ValueError):
        ReportWriter(tmp_path / "x", "xml")


# --- scaling helpers ---------------------------------------------------------


def test_fit_exponent_exact_power():
    N = np.array([1e4, 4e4, 1.6e5])
    assert fit_exponent(N, 3e-6 * N ** (5 / 3)) == pytest.approx(5 / 3, abs=1e-12)
    with pytest.raises(ValueError):
        fit_exponent([10], [1.0])


def test_peak_estimate_covers_stored_factors():
    for n in (64, 128):
        fact = factorize(assemble_fd5(poisson_problem(n)))
        assert fact.stored_scalars * 8 <= estimate_peak_bytes(n, n) <= 4 * fact.stored_scalars * 8
