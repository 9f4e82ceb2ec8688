"""spdecomp command line.

    spdecomp solve   --algorithm atr --instance toy-nv --K 3
    spdecomp oracle  --instance problem.json
    spdecomp sample  --smps m.cor m.tim m.sto --N 10000 --seed 1 --out m.json
    spdecomp sweep   --algorithm als --instance m.json --sigma 0.5 0.7 --C 2 4 --csv sweep.csv
    spdecomp convert --smps m.cor m.tim m.sto --out m.json

Any option can also come from a ``key = value`` file given with
``--config``; command-line flags take precedence. Exit status: 0 on
convergence, 1 on invalid input, 2 on numerical or execution failure,
3 when the run stopped without converging (iteration cap).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import smps
from .cutmodel import MasterInfeasible
from .gridsim import (
    ParallelExecutor,
    SimConfig,
    SimulationStalled,
    Simulator,
    WorkerFailure,
    stats_csv,
    worker_series_csv,
)
from .problem import (
    BUILTINS,
    CompleteRecourseViolation,
    NumericalFailure,
    TwoStageProblem,
    ValidationError,
    make_partition,
    solve_deterministic_equivalent,
)
from .solvers import SerialExecutor, SolverConfig, Termination, run, write_trace

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_CAP = 0, 1, 2, 3
OUTPUT_ENV = "SPDECOMP_OUTPUT_DIR"
DEFAULT_ORACLE_CAP = 20_000

_log = logging.getLogger("spdecomp")


class CliError(ValidationError):
    pass


# -- config file --------------------------------------------------------------

def read_config(path) -> dict:
    """Parse a key=value file. Blank lines and '#' comments are ignored."""
    out = {}
    for no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path} line {no}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _apply_config(parser: argparse.ArgumentParser, sub: argparse.ArgumentParser, argv, ns):
    cfg = read_config(ns.config)
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in cfg.items():
        if key not in known or key in ("help", "config"):
            raise CliError(f"{ns.config}: unknown key {key!r}")
        act = known[key]
        if act.nargs in ("+", "*"):
            vals = raw.split()
            defaults[key] = [act.type(v) if act.type else v for v in vals]
        elif isinstance(act, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            defaults[key] = act.type(raw) if act.type else raw
        if act.choices is not None:
            bad = [v for v in (defaults[key] if isinstance(defaults[key], list) else [defaults[key]])
                   if v not in act.choices]
            if bad:
                raise CliError(f"{ns.config}: {key} must be one of {sorted(act.choices)}")
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


# -- argument parser ------------------------------------------------------------

def _instance_args(p):
    p.add_argument("--instance", help="JSON instance path or builtin name (toy-nv)")
    p.add_argument("--smps", nargs=3, metavar=("CORE", "TIME", "STOCH"), help="SMPS file triple")
    p.add_argument("--N", type=int, help="sample size for SMPS input (default: full enumeration)")
    p.add_argument("--seed", type=int, default=0, help="sampling seed")
    p.add_argument("--scenario-cap", type=int, default=smps.DEFAULT_SCENARIO_CAP)


def _solver_args(p, grid: bool = False):
    many = dict(nargs="+") if grid else {}
    p.add_argument("--algorithm", choices=["ls", "als", "tr", "atr"], default="atr", type=str.lower)
    p.add_argument("--eps-tol", type=float, default=1e-5)
    p.add_argument("--delta-hi", type=float, default=1e3)
    p.add_argument("--delta0", type=float, default=1.0)
    p.add_argument("--xi", type=float, default=1e-4)
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--sigma", type=float, default=[0.7] if grid else 0.7, **many)
    p.add_argument("--K", type=int, default=[1] if grid else 1, **many)
    p.add_argument("--T", type=int, default=[None] if grid else None, **many,
                   help="number of clusters (default N)")
    p.add_argument("--C", type=int, default=[None] if grid else None, **many,
                   help="number of tasks per point (default T)")
    p.add_argument("--inactivity", type=float, default=100, help="cut inactivity threshold (inf disables)")
    p.add_argument("--theta-floor", type=float, default=-1e9)
    p.add_argument("--max-iterations", type=int, default=10_000)
    p.add_argument("--x0", help="starting point: JSON list or whitespace-separated numbers in a file")


def _sim_args(p):
    p.add_argument("--sim-seed", type=int, default=0)
    p.add_argument("--initial-workers", type=int)
    p.add_argument("--arrival-rate", type=float, default=0.5)
    p.add_argument("--mean-lifetime", type=float, default=float("inf"))
    p.add_argument("--suspension-rate", type=float, default=0.0)
    p.add_argument("--mean-suspension", type=float, default=30.0)
    p.add_argument("--speed-spread", type=float, default=7.0)
    p.add_argument("--unit-cost", type=float, default=0.01)
    p.add_argument("--latency", type=float, default=0.5)
    p.add_argument("--master-unit-cost", type=float, default=0.001)
    p.add_argument("--master-overhead", type=float, default=0.05)
    p.add_argument("--max-workers", type=int, help="override the worker-request formula")
    p.add_argument("--reschedule-timeout", type=float)


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="spdecomp", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    subs = parser.add_subparsers(dest="command", required=True)
    table = {}

    p = subs.add_parser("solve", help="run one algorithm")
    p.add_argument("--config")
    _instance_args(p)
    _solver_args(p)
    p.add_argument("--mode", choices=["serial", "sim", "parallel"], default="serial")
    p.add_argument("--threads", type=int, default=4)
    _sim_args(p)
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./spdecomp-out)")
    p.add_argument("--label", default=None, help="run label in the CSV row")
    table["solve"] = p

    p = subs.add_parser("oracle", help="solve the deterministic equivalent")
    p.add_argument("--config")
    _instance_args(p)
    p.add_argument("--cap", type=int, default=DEFAULT_ORACLE_CAP, help="max (1+N)*variables")
    table["oracle"] = p

    p = subs.add_parser("sample", help="sample an SMPS model into a JSON instance")
    p.add_argument("--config")
    _instance_args(p)
    p.add_argument("--full", action="store_true", help="enumerate all scenarios instead of sampling")
    p.add_argument("--out", required=False)
    table["sample"] = p

    p = subs.add_parser("sweep", help="simulate a grid of configurations")
    p.add_argument("--config")
    _instance_args(p)
    _solver_args(p, grid=True)
    _sim_args(p)
    p.add_argument("--csv", help="CSV output path (default <out>/sweep.csv)")
    p.add_argument("--out")
    table["sweep"] = p

    p = subs.add_parser("convert", help="convert an SMPS triple to the JSON instance format")
    p.add_argument("--config")
    _instance_args(p)
    p.add_argument("--out", required=False)
    table["convert"] = p
    return parser, table


# -- helpers ----------------------------------------------------------------------

def load_instance(ns) -> TwoStageProblem:
    if ns.smps:
        bundle = smps.read(*ns.smps)
        if ns.N is None:
            return smps.realize_full(bundle, cap=ns.scenario_cap)
        if ns.N < 1:
            raise CliError("--N must be at least 1")
        return smps.realize_sampled(bundle, ns.N, ns.seed)
    if not ns.instance:
        raise CliError("give --instance or --smps")
    if ns.instance in BUILTINS:
        return BUILTINS[ns.instance]()
    path = Path(ns.instance)
    if not path.exists():
        raise CliError(f"no such instance {ns.instance!r} (builtins: {', '.join(sorted(BUILTINS))})")
    return TwoStageProblem.load(path)


def _read_x0(spec, n):
    if spec is None:
        return None
    path = Path(spec)
    text = path.read_text() if path.exists() else spec
    try:
        vals = json.loads(text)
    except json.JSONDecodeError:
        vals = [float(t) for t in text.replace(",", " ").split()]
    x0 = np.asarray(vals, dtype=float).reshape(-1)
    if x0.size != n:
        raise CliError(f"--x0 has {x0.size} entries, instance has {n} first-stage variables")
    return x0


def _solver_config(ns, sigma, K, T, C) -> SolverConfig:
    return SolverConfig(eps_tol=ns.eps_tol, delta_hi=ns.delta_hi, delta0=ns.delta0, xi=ns.xi, eta=ns.eta,
                        sigma=sigma, K=K, T=T, C=C, inactivity_threshold=ns.inactivity,
                        theta_floor=ns.theta_floor, max_iterations=ns.max_iterations)


def _sim_config(ns) -> SimConfig:
    return SimConfig(seed=ns.sim_seed, initial_workers=ns.initial_workers, arrival_rate=ns.arrival_rate,
                     mean_lifetime=ns.mean_lifetime, suspension_rate=ns.suspension_rate,
                     mean_suspension=ns.mean_suspension, speed_spread_max=ns.speed_spread,
                     unit_cost=ns.unit_cost, latency=ns.latency, master_unit_cost=ns.master_unit_cost,
                     master_overhead=ns.master_overhead, max_workers=ns.max_workers,
                     reschedule_timeout=ns.reschedule_timeout)


def _partition(problem, T, C):
    T = T or problem.N
    C = C or T
    if not 1 <= T <= problem.N:
        raise CliError(f"T must lie in [1, N={problem.N}]")
    if not 1 <= C <= T:
        raise CliError(f"C must lie in [1, T={T}]")
    return make_partition(problem.N, T, C)


def _out_dir(ns) -> Path:
    out = Path(ns.out or os.environ.get(OUTPUT_ENV) or "spdecomp-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _exit_for(termination: Termination) -> int:
    if termination in (Termination.CONVERGED, Termination.OPTIMAL_AT_START):
        return EXIT_OK
    return EXIT_CAP


# -- commands ---------------------------------------------------------------------

def cmd_solve(ns) -> int:
    problem = load_instance(ns)
    cfg = _solver_config(ns, ns.sigma, ns.K, ns.T, ns.C)
    part = _partition(problem, ns.T, ns.C)
    x0 = _read_x0(ns.x0, problem.n)
    if ns.mode == "sim":
        executor = Simulator(_sim_config(ns))
    elif ns.mode == "parallel":
        executor = ParallelExecutor(ns.threads)
    else:
        executor = SerialExecutor()
    res = run(ns.algorithm, problem, part, cfg, executor, x0=x0)
    out = _out_dir(ns)
    label = ns.label or ns.algorithm.upper()
    sk = ns.sigma if ns.algorithm == "als" else ns.K
    summary = {
        "algorithm": ns.algorithm.upper(),
        "objective": res.objective,
        "x": res.x.tolist(),
        "termination": res.termination.value,
        "points_evaluated": res.points_evaluated,
        "max_cuts": res.stats.max_cuts,
        "N": problem.N, "T": part.T, "C": part.C,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "stats.csv").write_text(stats_csv([(label, res.stats, sk, part.C, part.T)]))
    write_trace(res.trace, out / "trace.jsonl")
    if ns.mode == "sim":
        (out / "workers.csv").write_text(worker_series_csv(res.stats))
    print(f"{summary['algorithm']}: objective {res.objective:.10g}  termination {res.termination.value}  "
          f"points {res.points_evaluated}  (outputs in {out})")
    return _exit_for(res.termination)


def cmd_oracle(ns) -> int:
    problem = load_instance(ns)
    m2, n2 = problem.recourse_shape
    size = problem.n + problem.N * n2
    if size > ns.cap:
        raise CliError(f"deterministic equivalent has {size} variables, above the cap of {ns.cap}")
    sol = solve_deterministic_equivalent(problem)
    if sol.value is None or not np.isfinite(sol.value):
        print(f"oracle: {sol.status.value}")
        return EXIT_NUMERICAL
    print(f"Q* = {sol.value:.12g}")
    print("x* = " + " ".join(f"{v:.12g}" for v in sol.x))
    return EXIT_OK


def _smps_bundle(ns):
    if not ns.smps:
        raise CliError("--smps CORE TIME STOCH is required")
    return smps.read(*ns.smps)


def _write_instance(problem, ns, default_name):
    path = Path(ns.out) if ns.out else _out_dir(argparse.Namespace(out=None)) / default_name
    path.parent.mkdir(parents=True, exist_ok=True)
    problem.save(path)
    print(f"wrote {path} (n={problem.n}, N={problem.N})")


def cmd_sample(ns) -> int:
    bundle = _smps_bundle(ns)
    if ns.full or ns.N is None:
        problem = smps.realize_full(bundle, cap=ns.scenario_cap)
    else:
        if ns.N < 1:
            raise CliError("--N must be at least 1")
        problem = smps.realize_sampled(bundle, ns.N, ns.seed)
    _write_instance(problem, ns, f"{bundle.core.name.lower()}.json")
    return EXIT_OK


def cmd_convert(ns) -> int:
    bundle = _smps_bundle(ns)
    problem = smps.realize_full(bundle, cap=ns.scenario_cap)
    _write_instance(problem, ns, f"{bundle.core.name.lower()}.json")
    return EXIT_OK


def sweep_cells(ns):
    alg = ns.algorithm
    knobs = ns.sigma if alg == "als" else ns.K
    for T in ns.T:
        for C in ns.C:
            for k in knobs:
                yield T, C, k


def cmd_sweep(ns) -> int:
    problem = load_instance(ns)
    x0 = _read_x0(ns.x0, problem.n)
    rows, failures = [], []
    alg = ns.algorithm
    for i, (T, C, knob) in enumerate(sweep_cells(ns)):
        label = f"{alg.upper()}-{i + 1}"
        sigma = knob if alg == "als" else ns.sigma[0]
        K = knob if alg != "als" else ns.K[0]
        try:
            part = _partition(problem, T, C)
            cfg = _solver_config(ns, sigma, K, T, C)
            res = run(alg, problem, part, cfg, Simulator(_sim_config(ns)), x0=x0)
            rows.append((label, res.stats, knob, part.C, part.T))
            if not res.converged:
                failures.append((label, res.termination.value))
        except (ValidationError, NumericalFailure, MasterInfeasible, SimulationStalled,
                CompleteRecourseViolation) as exc:
            failures.append((label, f"{type(exc).__name__}: {exc}"))
            _log.error("cell %s failed: %s", label, exc)
    text = stats_csv(rows)
    path = Path(ns.csv) if ns.csv else _out_dir(ns) / "sweep.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    print(_table(text))
    for label, why in failures:
        print(f"{label}: {why}", file=sys.stderr)
    print(f"{len(rows)} rows written to {path}")
    return EXIT_OK if rows and not failures else (EXIT_CAP if rows else EXIT_NUMERICAL)


def _table(csv_text: str) -> str:
    lines = [ln.split(",") for ln in csv_text.strip().splitlines()]
    widths = [max(len(r[i]) for r in lines) for i in range(len(lines[0]))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in lines)


COMMANDS = {"solve": cmd_solve, "oracle": cmd_oracle, "sample": cmd_sample, "sweep": cmd_sweep,
            "convert": cmd_convert}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, table = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(ns, "config", None):
            ns = _apply_config(parser, table[ns.command], argv, ns)
        return COMMANDS[ns.command](ns)
    except (ValidationError, CompleteRecourseViolation, SimulationStalled, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalFailure, MasterInfeasible, WorkerFailure) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
