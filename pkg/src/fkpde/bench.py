"""Built-in test problems, the fine-grid Euler oracle and a benchmark harness."""
import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import forms
from .debias import HaltingDistribution, estimate_debiased, estimate_euler
from .errors import ContractError
from .estimator import EstimatorResult, estimate_ea
from .forms import coef
from .problem import Hyperrectangle, PdeProblem

CSV_VERSION = "# fkpde-csv v1"
CSV_COLUMNS = ["case", "method", "mean", "ci_half", "n", "work", "wall_s", "wvp", "ci_defined"]
PROVENANCES = ("paper-table", "analytic", "oracle")
FIG_STEPS = tuple(2 ** k for k in range(1, 11))


def adv_diff_1d(a=0.01, b=0.1):
    """``u_t + b u_x = a u_xx`` on ``[0, 1]`` with ``u(x, 0) = 100 x``,
    ``u(0, t) = 0`` and ``u(1, t) = 100``."""
    return PdeProblem(
        1,
        drift=coef(forms.drift_constant, [-b]),
        diffusion=coef(forms.diffusion_constant_diag, [2.0 * a]),
        initial=coef(forms.data_linear, [0.0, 100.0]),
        boundary=coef(forms.data_linear, [0.0, 100.0]),
        domain=Hyperrectangle([0.0], [1.0]),
        name=f"adv_diff_1d(a={a:g},b={b:g})",
    )


def poisson_drift_2d(kappa=0.5):
    """``u_t = 1/2 lap u + grad k . grad u`` on the unit square with
    ``k = exp(kappa x1 x2)``, ``u(x, 0) = x1 x2`` and boundary data ``x1 x2``
    (zero on the faces through the origin, ``x1`` on ``x2 = 1``, ``x2`` on
    ``x1 = 1``)."""
    return PdeProblem(
        2,
        drift=coef(forms.drift_grad_exp_bilinear, [kappa]),
        diffusion=coef(forms.diffusion_constant_diag, [1.0, 1.0]),
        initial=coef(forms.data_product, [1.0]),
        boundary=coef(forms.data_product, [1.0]),
        domain=Hyperrectangle([0.0, 0.0], [1.0, 1.0]),
        name="poisson_drift_2d",
    )


def advection_free_1d(a=0.01, b=0.1):
    """Free-space ``u_t + b u_x = a u_xx`` with ``u(x, 0) = 100 x``; ``u = 100 (x - b t)``."""
    return PdeProblem(
        1,
        drift=coef(forms.drift_constant, [-b]),
        diffusion=coef(forms.diffusion_constant_diag, [2.0 * a]),
        initial=coef(forms.data_linear, [0.0, 100.0]),
        name=f"advection_free_1d(a={a:g},b={b:g})",
    )


BUILTINS = {
    "adv_diff_1d": adv_diff_1d,
    "poisson_drift_2d": poisson_drift_2d,
    "advection_free_1d": advection_free_1d,
}


def builtin_problem(name, **params):
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise ContractError(f"unknown builtin {name!r}; choose from {sorted(BUILTINS)}") from None
    return factory(**{k: v for k, v in params.items() if v is not None})


@dataclass(frozen=True)
class ReferenceCase:
    problem_id: str
    x: tuple
    t: float
    params: dict
    value: float
    provenance: str
    ci_half: float = math.nan
    label: str = ""

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ContractError(f"provenance must be one of {PROVENANCES}")

    def problem(self):
        return builtin_problem(self.problem_id, **self.params)

    @property
    def name(self):
        return self.label or f"{self.problem_id}{self.params}@x={self.x},t={self.t:g}"


TABLE1 = [
    ReferenceCase("adv_diff_1d", (0.9,), 5.0, {"a": 0.01, "b": 0.1}, 56.13, "paper-table", label="b=0.1"),
    ReferenceCase("adv_diff_1d", (0.9,), 5.0, {"a": 0.01, "b": 0.2}, 19.03, "paper-table", label="b=0.2"),
    ReferenceCase("adv_diff_1d", (0.9,), 5.0, {"a": 0.01, "b": 0.3}, 5.223, "paper-table", label="b=0.3"),
    ReferenceCase("adv_diff_1d", (0.9,), 5.0, {"a": 0.01, "b": 0.4}, 1.833, "paper-table", label="b=0.4"),
]
# published intervals for the same rows (1000 replicates of 10^4-sample estimates)
TABLE1_EA_CI = {0.1: (56.11, 2.3e-2), 0.2: (19.03, 2.2e-2), 0.3: (5.227, 1.3e-2), 0.4: (1.831, 8.7e-3)}
TABLE1_DEBIAS_CI = {0.1: (55.90, 2.8e-1), 0.2: (18.94, 6.5e-1), 0.3: (5.330, 3.6e-1), 0.4: (2.141, 3.7e-1)}

POISSON_2D = [
    ReferenceCase("poisson_drift_2d", (0.2, 0.2), 2.0, {}, 5.29e-2, "paper-table", 0.01e-2, "x=(0.2,0.2)"),
    ReferenceCase("poisson_drift_2d", (0.8, 0.8), 2.0, {}, 6.81e-1, "paper-table", 0.001e-1, "x=(0.8,0.8)"),
]
POISSON_2D_DEBIAS_CI = {(0.2, 0.2): (5.49e-2, 0.39e-2), (0.8, 0.8): (6.84e-1, 0.21e-1)}


def oracle_estimate(problem, x, t, h=1e-4, n=1_000_000, seed=0, threads=None, bridge=True):
    """Fixed-step Euler estimate with step ``h`` used as a brute-force reference.

    With ``bridge`` (default) exits between grid points are detected through
    the Brownian-bridge crossing probability, which removes the half-order
    bias of grid-point exit checks.  ``extra`` carries the absorbed fraction
    and the mean and spread of the stopped position.
    """
    steps = max(1, int(round(t / h)))
    return estimate_euler(problem, x, t, steps, n, seed=seed, threads=threads, bridge=bridge)


def euler_convergence(problem, x, t, steps_per_unit=FIG_STEPS, n=100_000, seed=0,
                      threads=None):
    """Plain Euler estimates (grid-point exit checks) at several resolutions."""
    out = []
    for i, m in enumerate(steps_per_unit):
        steps = max(1, int(round(m * t)))
        out.append((m, estimate_euler(problem, x, t, steps, n, seed=seed, threads=threads, stream=(i,))))
    return out


@dataclass
class BenchmarkRow:
    case: str
    method: str
    mean: float
    ci_half: float
    n: int
    work: float
    wall_s: float
    wvp: float
    ci_defined: bool = False
    work_max: float = math.nan
    work_median: float = math.nan

    @classmethod
    def from_result(cls, case, method, res: EstimatorResult):
        wvp = res.work * res.variance if res.n >= 2 else math.nan
        return cls(case, method, res.mean, res.ci_half, res.n, res.work, res.wall, wvp, res.ci_defined,
                   res.work_max, res.work_median)


@dataclass
class BenchmarkReport:
    """Per-method results; ``wvp`` is total work times the sample variance."""

    rows: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def zero_samples(self):
        return any(r.n == 0 for r in self.rows)

    def add(self, case, method, res):
        self.rows.append(BenchmarkRow.from_result(case, method, res))

    def to_csv(self):
        buf = io.StringIO()
        buf.write(CSV_VERSION + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.case, r.method] + [_fmt(getattr(r, c)) for c in CSV_COLUMNS[2:]])
        return buf.getvalue()

    def to_json(self):
        rows = [{k: _json_value(v) for k, v in asdict(r).items()} for r in self.rows]
        doc = {"version": 1, "columns": CSV_COLUMNS, "rows": rows, "zero_samples": self.zero_samples,
               "notes": self.notes}
        return json.dumps(doc, indent=2, default=_json_default, allow_nan=False)

    def write(self, path, fmt="csv"):
        text = self.to_csv() if fmt == "csv" else self.to_json()
        with open(path, "w") as fh:
            fh.write(text)


def _fmt(v):
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _json_value(v):
    # strict JSON has no nan; undefined quantities become null
    if isinstance(v, (float, np.floating)) and not math.isfinite(v):
        return None
    return v


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(type(v))


def pool(results):
    """Merge independent :class:`EstimatorResult` batches into one."""
    results = [r for r in results if r.n > 0]
    if not results:
        return EstimatorResult(math.nan, math.nan, math.nan, 0, 0.0, 0.0)
    n = sum(r.n for r in results)
    mean = sum(r.n * r.mean for r in results) / n
    ss = sum((r.n - 1) * (r.sd ** 2 if r.n > 1 else 0.0) + r.n * (r.mean - mean) ** 2 for r in results)
    sd = math.sqrt(ss / (n - 1)) if n > 1 else math.nan
    z = results[0].ci_half / (results[0].sd / math.sqrt(results[0].n)) if results[0].n > 1 else 1.959963984540054
    return EstimatorResult(mean, sd, z * sd / math.sqrt(n) if n > 1 else math.nan, n,
                           sum(r.work for r in results), sum(r.wall for r in results),
                           results[0].level, max(r.work_max for r in results),
                           float(np.median([r.work_median for r in results])))


def run_method(method, problem, x, t, n, seed, threads=None, halting=None, steps=None, stream=(), config=None,
               mode="two_step", level=0.95):
    if method == "ea":
        return estimate_ea(problem, x, t, n, seed=seed, mode=mode, threads=threads, level=level, config=config,
                           stream=stream)
    if method == "debias":
        halting = halting or HaltingDistribution.geometric(0.45)
        return estimate_debiased(problem, x, t, n, halting, seed=seed, threads=threads, level=level, stream=stream)
    if method == "euler":
        steps = steps or max(1, int(round(1024 * t)))
        return estimate_euler(problem, x, t, steps, n, seed=seed, threads=threads, level=level, stream=stream)
    raise ContractError(f"unknown method {method!r}")


def run_benchmark(case: ReferenceCase, methods=("ea", "debias"), budget=10.0, seed=0, threads=None,
                  halting=None, start=1000, n=None):
    """Run each method in doubling batches until ``budget`` wall seconds are spent.

    With ``n`` set each method instead draws exactly ``n`` samples, which
    makes the report reproducible apart from wall times.  A budget of zero
    gives rows with ``n = 0`` and sets ``zero_samples``.
    """
    report = BenchmarkReport()
    problem = case.problem()
    for method in methods:
        if n is not None:
            report.add(case.name, method, run_method(method, problem, case.x, case.t, n, seed, threads, halting))
            continue
        batches = []
        spent = 0.0
        size = start
        k = 0
        while spent < budget:
            t0 = time.perf_counter()
            batches.append(run_method(method, problem, case.x, case.t, size, seed, threads, halting, stream=(k,)))
            spent += time.perf_counter() - t0
            size *= 2
            k += 1
        report.add(case.name, method, pool(batches))
    if budget <= 0 and n is None:
        report.notes.append("zero budget: no samples drawn")
    return report
