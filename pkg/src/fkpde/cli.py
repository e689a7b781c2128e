"""Command-line front end.

Subcommands
-----------
solve      one estimate of ``u(x, t)``
table1     the four advection-diffusion rows (``a = 0.01``, ``b = 0.1 .. 0.4``)
fig2d      Euler estimates at 2, 4, ..., 1024 steps per unit time plus the EA value
benchmark  methods side by side with work-variance products
oracle     fine-step Euler reference value

Output is CSV (versioned header line, columns in ``bench.CSV_COLUMNS``) or
JSON, written to ``--output`` or stdout.  Wall times are written only with
``--timing`` so that repeated runs give byte-identical files.

Exit codes
----------
0  success
2  usage error (bad flags, malformed problem file, invalid parameters)
3  the exact algorithm does not apply to the problem (``--method ea``)
4  numerical failure (bound violation, sampler failure, resource limit)
"""
import argparse
import inspect
import math
import os
import sys

from . import bench
from .debias import HaltingDistribution
from .errors import ContractError, EaInapplicableError, FkpdeError
from .lea import LeaConfig
from .problem_file import load_problem

EXIT_OK, EXIT_USAGE, EXIT_EA, EXIT_NUMERIC = 0, 2, 3, 4


def _point(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _positive_int(text):
    try:
        v = int(float(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1 or v != float(text):
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def _seed_default():
    env = os.environ.get("FKPDE_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ContractError(f"FKPDE_SEED must be an integer, got {env!r}") from None


def _common(p, problem=True):
    if problem:
        src = p.add_mutually_exclusive_group()
        src.add_argument("--builtin", choices=sorted(bench.BUILTINS))
        src.add_argument("--problem-file", metavar="PATH")
        p.add_argument("--a", type=float, help="diffusivity of the advection-diffusion built-ins")
        p.add_argument("--b", type=float, help="advection speed of the advection-diffusion built-ins")
        p.add_argument("--kappa", type=float, help="drift strength of poisson_drift_2d")
    p.add_argument("--seed", type=int, default=None, help="random seed (default: $FKPDE_SEED, else 0)")
    p.add_argument("--threads", type=_positive_int, default=None, help="worker threads (default: all cores)")
    p.add_argument("--output", "-o", metavar="PATH")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--timing", action="store_true", help="record wall times in the output")


def _method_flags(p, default_n):
    p.add_argument("--n", type=_positive_int, default=default_n, help="samples (N for debiasing)")
    p.add_argument("--halting", default="geometric:0.45", help="halting law, e.g. geometric:0.45 or power:1.5")
    p.add_argument("--steps", type=_positive_int, default=None, help="Euler steps (default 1024 per unit time)")
    p.add_argument("--mode", choices=("two_step", "combined"), default="two_step")
    p.add_argument("--level", type=float, default=0.95, help="confidence level of the interval")


def build_parser():
    parser = argparse.ArgumentParser(prog="fkpde", description="Unbiased Feynman-Kac PDE estimates.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="estimate u(x, t)")
    _common(p)
    p.add_argument("--x", type=_point, required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--method", choices=("ea", "debias", "euler"), default="ea")
    _method_flags(p, 100_000)

    p = sub.add_parser("table1", help="advection-diffusion table")
    _common(p, problem=False)
    p.add_argument("--methods", default="ea,debias")
    p.add_argument("--b-values", type=_point, default=(0.1, 0.2, 0.3, 0.4))
    p.add_argument("--n", type=_positive_int, default=1_000_000, help="EA samples per row")
    p.add_argument("--n-debias", type=_positive_int, default=100_000, help="debiasing draws per row")
    p.add_argument("--halting", default="geometric:0.45")

    p = sub.add_parser("fig2d", help="Euler convergence on the 2D drift problem")
    _common(p, problem=False)
    p.add_argument("--x", type=_point, default=(0.2, 0.2))
    p.add_argument("--t", type=float, default=2.0)
    p.add_argument("--n", type=_positive_int, default=100_000, help="Euler samples per resolution")
    p.add_argument("--n-ea", type=_positive_int, default=1_000_000)

    p = sub.add_parser("benchmark", help="work-variance comparison")
    _common(p)
    p.add_argument("--x", type=_point, required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--methods", default="ea,debias")
    p.add_argument("--budget", type=float, default=None, help="wall seconds per method")
    p.add_argument("--n", type=_positive_int, default=None, help="fixed samples per method")
    p.add_argument("--halting", default="geometric:0.45")

    p = sub.add_parser("oracle", help="fine-step Euler reference")
    _common(p)
    p.add_argument("--x", type=_point, required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--h", type=float, default=1e-4)
    p.add_argument("--n", type=_positive_int, default=1_000_000)
    p.add_argument("--no-bridge", action="store_true", help="check exits at grid points only")
    return parser


def _problem(args):
    """Return ``(problem, case name, LeaConfig or None)``."""
    params = {k: getattr(args, k) for k in ("a", "b", "kappa") if getattr(args, k) is not None}
    if args.problem_file:
        if params:
            raise ContractError("--a/--b/--kappa apply to built-in problems only")
        problem, opts = load_problem(args.problem_file)
        return problem, problem.name or args.problem_file, LeaConfig(opts["theta_max"], opts["global_bounds"])
    if not args.builtin:
        raise ContractError("one of --builtin or --problem-file is required")
    accepted = inspect.signature(bench.BUILTINS[args.builtin]).parameters
    unknown = sorted(set(params) - set(accepted))
    if unknown:
        raise ContractError(f"{args.builtin} does not take {', '.join('--' + k for k in unknown)}")
    problem = bench.builtin_problem(args.builtin, **params)
    return problem, problem.name, None


def _check_point(problem, x, t):
    if len(x) != problem.dim:
        raise ContractError(f"--x has {len(x)} coordinates; the problem is {problem.dim}-dimensional")
    if not t > 0 or math.isinf(t):
        raise ContractError("--t must be positive and finite")


def _methods(text):
    out = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in out if m not in ("ea", "debias", "euler")]
    if bad or not out:
        raise ContractError(f"unknown methods {bad}; choose from ea, debias, euler")
    return out


def cmd_solve(args, seed, report):
    if not 0 < args.level < 1:
        raise ContractError("--level must lie in (0, 1)")
    problem, name, config = _problem(args)
    _check_point(problem, args.x, args.t)
    halting = HaltingDistribution.parse(args.halting)
    res = bench.run_method(args.method, problem, args.x, args.t, args.n, seed, args.threads, halting,
                           args.steps, config=config, mode=args.mode, level=args.level)
    report.add(name, args.method, res)
    if args.method == "ea":
        report.notes.append(f"absorbed_fraction={res.extra['absorbed_fraction']!r}")


def cmd_table1(args, seed, report):
    methods = _methods(args.methods)
    halting = HaltingDistribution.parse(args.halting)
    for b in args.b_values:
        problem = bench.adv_diff_1d(0.01, b)
        for m in methods:
            n = args.n_debias if m == "debias" else args.n
            res = bench.run_method(m, problem, (0.9,), 5.0, n, seed, args.threads, halting)
            report.add(f"b={b:g}", m, res)
    refs = ", ".join(f"{c.label}: {c.value}" for c in bench.TABLE1)
    report.notes.append(f"reference values (a=0.01, x=0.9, t=5): {refs}")


def cmd_fig2d(args, seed, report):
    problem = bench.poisson_drift_2d()
    _check_point(problem, args.x, args.t)
    for m, res in bench.euler_convergence(problem, args.x, args.t, bench.FIG_STEPS, args.n, seed, args.threads):
        report.add(problem.name, f"euler-{m}", res)
    report.add(problem.name, "ea", bench.run_method("ea", problem, args.x, args.t, args.n_ea, seed, args.threads))


def cmd_benchmark(args, seed, report):
    problem, name, _ = _problem(args)
    _check_point(problem, args.x, args.t)
    if args.budget is None and args.n is None:
        raise ContractError("benchmark needs --budget or --n")
    case = _AdHocCase(problem, name, args.x, args.t)
    halting = HaltingDistribution.parse(args.halting)
    got = bench.run_benchmark(case, _methods(args.methods), budget=args.budget or 0.0, seed=seed,
                              threads=args.threads, halting=halting, n=args.n)
    report.rows.extend(got.rows)
    report.notes.extend(got.notes)


class _AdHocCase:
    def __init__(self, problem, name, x, t):
        self._problem, self.name, self.x, self.t = problem, name, x, t

    def problem(self):
        return self._problem


def cmd_oracle(args, seed, report):
    problem, name, _ = _problem(args)
    _check_point(problem, args.x, args.t)
    if not 0 < args.h <= args.t:
        raise ContractError("--h must lie in (0, t]")
    res = bench.oracle_estimate(problem, args.x, args.t, args.h, args.n, seed, args.threads, not args.no_bridge)
    report.add(name, "oracle", res)
    report.notes.append(f"absorbed_fraction={res.extra['absorbed_fraction']!r}")


COMMANDS = {"solve": cmd_solve, "table1": cmd_table1, "fig2d": cmd_fig2d, "benchmark": cmd_benchmark,
            "oracle": cmd_oracle}


def run(argv=None, stdout=None, stderr=None):
    """Run the CLI and return its exit status."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    report = bench.BenchmarkReport()
    try:
        seed = args.seed if args.seed is not None else _seed_default()
        COMMANDS[args.command](args, seed, report)
    except EaInapplicableError as exc:
        print(f"fkpde: exact algorithm not applicable: {exc}", file=stderr)
        return EXIT_EA
    except ContractError as exc:
        print(f"fkpde: {exc}", file=stderr)
        return EXIT_USAGE
    except FkpdeError as exc:
        print(f"fkpde: {type(exc).__name__}: {exc}", file=stderr)
        return EXIT_NUMERIC
    if not args.timing:
        for r in report.rows:
            r.wall_s = math.nan
    text = report.to_csv() if args.format == "csv" else report.to_json() + "\n"
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        stdout.write(text)
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
