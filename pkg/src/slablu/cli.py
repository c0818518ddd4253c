"""Command-line front end: ``solve``, ``bench`` and ``verify``.

Configs are flat JSON objects.  Recognised keys::

    problem      poisson | helmholtz_const | helmholtz_varcoef
    n1, n2       grid size (or ``n`` for a square grid)
    ppw | kappa  exactly one for Helmholtz problems, neither for Poisson
    b | c        explicit slab width or the coefficient of the b heuristic
    compression  auto | dense | hbs
    hbs_tol      a-posteriori probe tolerance for compression
    seed         random seed (unsigned 64-bit)
    output       report path
    format       csv | json
    threads      worker threads for stage one
    sweep        bench only: list of n, or of [n1, n2] pairs

Exit codes: 0 success, 1 config error, 2 solver error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields, replace

from .driver import ReportWriter, SolverConfig, benchmark, run
from .problem import helmholtz_problem, helmholtz_varcoef_problem, poisson_problem

log = logging.getLogger("slablu")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VERIFY = 0, 1, 2, 3
PROBLEMS = ("poisson", "helmholtz_const", "helmholtz_varcoef")
FAULT_ENV = "SLABLU_INJECT_FAULT"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    problem: str = "poisson"
    n1: int | None = None
    n2: int | None = None
    ppw: float | None = None
    kappa: float | None = None
    b: int | None = None
    c: float | None = None
    compression: str = "auto"
    hbs_tol: float = 1e-10
    seed: int = 0
    output: str | None = None
    format: str = "csv"
    threads: int = 1
    sweep: tuple | None = None

    def validate(self, need_grid: bool = True) -> "RunConfig":
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {', '.join(PROBLEMS)}, got {self.problem!r}")
        helm = self.problem != "poisson"
        if helm and (self.ppw is None) == (self.kappa is None):
            raise ConfigError(f"{self.problem} needs exactly one of 'ppw' or 'kappa'")
        if not helm and (self.ppw is not None or self.kappa is not None):
            raise ConfigError("poisson takes neither 'ppw' nor 'kappa'")
        if self.b is not None and self.c is not None:
            raise ConfigError("give at most one of 'b' and 'c'")
        if need_grid and (self.n1 is None or self.n2 is None):
            raise ConfigError("grid size missing: set 'n' or both 'n1' and 'n2'")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"format must be csv or json, got {self.format!r}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        try:
            self.solver_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def solver_config(self) -> SolverConfig:
        kw = dict(b=self.b, compression=self.compression, hbs_tol=self.hbs_tol,
                  seed=self.seed, threads=self.threads)
        if self.c is not None:
            kw["c"] = self.c
        return SolverConfig(**kw)

    def problem_spec(self, n1: int | None = None, n2: int | None = None):
        n1 = self.n1 if n1 is None else n1
        n2 = self.n2 if n2 is None else n2
        if self.problem == "poisson":
            return poisson_problem(n2, n1=n1)
        build = helmholtz_problem if self.problem == "helmholtz_const" else helmholtz_varcoef_problem
        return build(n2, kappa=self.kappa, ppw=self.ppw, n1=n1)

    def sweep_specs(self):
        if not self.sweep:
            raise ConfigError("bench needs a non-empty 'sweep' list")
        specs = []
        for item in self.sweep:
            n1, n2 = (item, item) if isinstance(item, int) else item
            specs.append(self.problem_spec(n1, n2))
        return specs

    def resolved(self) -> dict:
        """Config with defaults filled in, suitable for re-running."""
        d = asdict(self)
        d["c"] = self.solver_config().c if self.b is None else None
        d["sweep"] = list(self.sweep) if self.sweep else None
        return d


def _int(v, key):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"'{key}' must be an integer")
    return v


def _num(v, key):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"'{key}' must be a number")
    return float(v)


def parse_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = dict(raw)
    known = {f.name for f in fields(RunConfig)} | {"n"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    if "n" in raw:
        n = _int(raw.pop("n"), "n")
        if "n1" in raw or "n2" in raw:
            raise ConfigError("use either 'n' or 'n1'/'n2'")
        raw["n1"] = raw["n2"] = n
    for key in ("n1", "n2", "b", "threads", "seed"):
        if raw.get(key) is not None:
            raw[key] = _int(raw[key], key)
    for key in ("ppw", "kappa", "c", "hbs_tol"):
        if raw.get(key) is not None:
            raw[key] = _num(raw[key], key)
    if raw.get("sweep") is not None:
        sweep = raw["sweep"]
        if not isinstance(sweep, list):
            raise ConfigError("'sweep' must be a list")
        items = []
        for item in sweep:
            if isinstance(item, list) and len(item) == 2:
                items.append((_int(item[0], "sweep"), _int(item[1], "sweep")))
            else:
                items.append(_int(item, "sweep"))
        raw["sweep"] = tuple(items)
    return RunConfig(**raw)


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    return parse_config(raw)


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    over = {}
    for key in ("output", "format", "seed", "threads"):
        val = getattr(args, key, None)
        if val is not None:
            over[key] = val
    return replace(cfg, **over) if over else cfg


def _err(msg: str) -> None:
    print(f"slablu: {msg}", file=sys.stderr)


def _load(args, need_grid: bool) -> RunConfig:
    cfg = _apply_overrides(load_config(args.config), args).validate(need_grid)
    if not cfg.output:
        raise ConfigError("no output path: set 'output' in the config or pass --output")
    if args.save_config:
        with open(args.save_config, "w") as fh:
            json.dump(cfg.resolved(), fh, indent=2)
    return cfg


def cmd_solve(args) -> int:
    try:
        cfg = _load(args, need_grid=True)
        spec = cfg.problem_spec()
    except (ConfigError, ValueError) as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    try:
        report, _ = run(spec, cfg.solver_config())
    except Exception as exc:  # noqa: BLE001 - mapped to an exit code
        _err(f"solver error: {type(exc).__name__}: {exc}")
        return EXIT_SOLVER
    ReportWriter(cfg.output, cfg.format)(report)
    e = report.error
    print(f"N={report.N} b={report.b} relerr_res={e.relerr_res:.2e} relerr_true={e.relerr_true:.2e} "
          f"factor={report.T_factor_s:.2f}s solve={report.T_solve_s:.2f}s")
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        cfg = _load(args, need_grid=False)
        specs = cfg.sweep_specs()
    except (ConfigError, ValueError) as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    writer = ReportWriter(cfg.output, cfg.format)
    reports = benchmark(specs, cfg.solver_config(), on_report=writer)
    for r in reports:
        print(f"N={r.N} b={r.b} relerr_res={r.error.relerr_res:.2e} "
              f"relerr_true={r.error.relerr_true:.2e} status={r.status}")
    return EXIT_OK if all(r.status == "ok" for r in reports) else EXIT_SOLVER


def cmd_verify(args) -> int:
    from .oracles import run_verification
    from .stage_one import inject_fault

    level = "full" if args.full else "quick"
    fault = args.inject_fault or os.environ.get(FAULT_ENV)
    try:
        if fault:
            with inject_fault(fault):
                summary = run_verification(level)
        else:
            summary = run_verification(level)
    except ValueError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    for line in summary.lines():
        print(line)
    if summary.passed:
        print(f"verify {level}: all {len(summary.results)} checks passed")
        return EXIT_OK
    _err(f"verify {level}: failed checks: {', '.join(summary.failed)}")
    return EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slablu", description="Two-level slab sparse direct solver.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="flat JSON config file")
        sp.add_argument("--output", help="report path (overrides config)")
        sp.add_argument("--format", choices=("csv", "json"), help="report format (overrides config)")
        sp.add_argument("--seed", type=int, help="random seed (overrides config)")
        sp.add_argument("--threads", type=int, help="stage-one worker threads (overrides config)")
        sp.add_argument("--save-config", help="write the resolved config here")

    common(sub.add_parser("solve", help="factorize and solve one problem"))
    common(sub.add_parser("bench", help="run a sweep and write one row per run"))
    v = sub.add_parser("verify", help="run the oracle verification suite")
    g = v.add_mutually_exclusive_group()
    g.add_argument("--quick", action="store_true", help="fast checks (default)")
    g.add_argument("--full", action="store_true", help="adds rank sweeps over b in {2, 4, 8}")
    v.add_argument("--inject-fault", help=argparse.SUPPRESS)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    handler = {"solve": cmd_solve, "bench": cmd_bench, "verify": cmd_verify}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
