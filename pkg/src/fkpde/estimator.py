"""Monte Carlo aggregation of exact Feynman-Kac path functionals."""
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import lea
from ._jit import njit
from .brownian import ConditionedSegment
from .errors import BoundViolationError, ContractError, EaInapplicableError, FkpdeError
from .problem import PdeProblem, UnitVolatilitySde, transform
from .rng import RngStream, as_generator

CHUNK = 4096


@dataclass(frozen=True)
class PathFunctionalSample:
    value: float
    n_points: int
    t_hat: float
    work: float


@dataclass(frozen=True)
class EstimatorResult:
    """Sample mean with a CLT confidence interval.

    ``ci_half`` is ``z * sd / sqrt(n)``; it is ``nan`` and ``ci_defined`` is
    false when ``n < 2``.  ``work`` is the summed per-sample work, with the
    largest and median per-sample work kept to expose heavy tails.
    """

    mean: float
    sd: float
    ci_half: float
    n: int
    work: float
    wall: float
    level: float = 0.95
    work_max: float = 0.0
    work_median: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def ci_defined(self):
        return self.n >= 2

    @property
    def variance(self):
        return self.sd ** 2

    @property
    def stderr(self):
        return self.sd / math.sqrt(self.n) if self.n > 0 else math.nan

    def ci(self):
        return self.mean - self.ci_half, self.mean + self.ci_half

    def contains(self, value):
        lo, hi = self.ci()
        return bool(lo <= value <= hi)


def summarize(values, work, wall, level=0.95, extra=None):
    """Build an :class:`EstimatorResult` from per-sample values and work."""
    values = np.asarray(values, dtype=float)
    work = np.asarray(work, dtype=float)
    n = values.size
    if n == 0:
        return EstimatorResult(math.nan, math.nan, math.nan, 0, 0.0, wall, level, extra=extra or {})
    mean = float(values.mean())
    sd = float(values.std(ddof=1)) if n >= 2 else math.nan
    z = float(norm.ppf(0.5 + level / 2))
    half = z * sd / math.sqrt(n) if n >= 2 else math.nan
    return EstimatorResult(mean, sd, half, n, float(work.sum()), wall, level, float(work.max()),
                           float(np.median(work)), extra or {})


def default_threads():
    return os.cpu_count() or 1


def run_chunked(kernel, n, seed, width, threads=None, chunk=CHUNK, stream=()):
    """Fill an ``(n, width)`` array chunk by chunk.

    ``kernel(generator, rows)`` fills ``rows`` in place and returns the
    number of rows completed (fewer signals an error in the last one).
    Chunk ``i`` always uses stream ``(seed, *stream, i)``, so the output does
    not depend on the number of threads.
    """
    out = np.zeros((n, width))
    bounds = [(i, lo, min(lo + chunk, n)) for i, lo in enumerate(range(0, n, chunk))]

    def work(item):
        i, lo, hi = item
        g = RngStream(seed, tuple(stream) + (i,)).generator
        return lo, kernel(g, out[lo:hi]) + lo, hi

    threads = threads or default_threads()
    if threads == 1 or len(bounds) == 1:
        done = [work(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            done = list(ex.map(work, bounds))
    for lo, filled, hi in done:
        if filled < hi:
            return out, filled - 1
    return out, None


def check_ea_applicable(problem, x, t, **transform_kwargs):
    """Transform the problem or raise :class:`EaInapplicableError` naming the failed check."""
    try:
        return transform(problem, x, t, **transform_kwargs)
    except EaInapplicableError:
        raise
    except FkpdeError as exc:
        if isinstance(exc, ContractError):
            raise
        raise EaInapplicableError(f"{type(exc).__name__}: {exc}") from exc


def estimate_ea(problem: PdeProblem, x, t, n, seed=0, mode="two_step", threads=None, level=0.95,
                config=None, sde=None, stream=()):
    """Exact-algorithm estimate of ``u(x, t)`` from ``n`` independent paths.

    ``mode`` is ``"two_step"`` (segments retried until accepted, killing by
    a separate Poisson weight) or ``"combined"`` (killing folded into the
    thinning step).  Both are unbiased.
    """
    if n < 1:
        raise ContractError("n must be positive")
    sde = sde or check_ea_applicable(problem, x, t)
    from dataclasses import replace

    config = replace(config or lea.LeaConfig(), mode=mode)
    args = lea.kernel_args(sde, problem, config)
    width = lea.O_END + sde.dim

    def kernel(g, rows):
        return lea.lea_batch(g, rows.shape[0], *args, rows)

    t0 = time.perf_counter()
    out, bad = run_chunked(kernel, int(n), seed, width, threads, stream=stream)
    wall = time.perf_counter() - t0
    if bad is not None:
        lea.raise_for_status(out[bad, lea.O_STATUS])
    extra = {
        "absorbed_fraction": float(out[:, lea.O_ABSORBED].mean()),
        "segments": float(out[:, lea.O_NSEG].sum()),
        "killing_points": float(out[:, lea.O_NKILL].sum()),
        "theta_max": args[4],
    }
    res = summarize(out[:, lea.O_VALUE], out[:, lea.O_WORK], wall, level, extra)
    return res


def simulate_paths(problem, x, t, n, seed=0, threads=None, config=None):
    """Per-path outputs of the two-step sampler: value, ``t_hat``, absorbed
    flag and end point in original coordinates."""
    sde = check_ea_applicable(problem, x, t)
    args = lea.kernel_args(sde, problem, config)
    width = lea.O_END + sde.dim
    out, bad = run_chunked(lambda g, rows: lea.lea_batch(g, rows.shape[0], *args, rows), int(n), seed,
                           width, threads)
    if bad is not None:
        lea.raise_for_status(out[bad, lea.O_STATUS])
    v_end = np.ascontiguousarray(out[:, lea.O_END:])
    ends = np.empty_like(v_end)
    _map_rows(sde.eta_inv.fn, sde.eta_inv.params, v_end, ends)
    for i in np.flatnonzero(out[:, lea.O_ABSORBED]):
        _snap_to_face(sde, problem, v_end[i], ends[i])
    return {
        "value": out[:, lea.O_VALUE].copy(),
        "t_hat": out[:, lea.O_THAT].copy(),
        "absorbed": out[:, lea.O_ABSORBED].astype(bool),
        "end": ends,
    }


@njit
def _map_rows(fn, p, v, out):
    for i in range(v.shape[0]):
        out[i] = fn(v[i], p)


def _snap_to_face(sde, problem, v, x):
    # the face coordinate is exact in transformed space; keep it exact after mapping back
    for k in np.flatnonzero((v == sde.domain.lower) | (v == sde.domain.upper)):
        lo, hi = problem.domain.lower[k], problem.domain.upper[k]
        x[k] = lo if abs(x[k] - lo) <= abs(x[k] - hi) else hi


def path_functional(skeleton: lea.Skeleton, problem: PdeProblem, sde: UnitVolatilitySde, rng):
    """Single-path estimate from a recorded skeleton.

    Killing points arrive at rate ``M_c - L_c`` on ``[0, t_hat]``; the path is
    revealed there conditionally on everything already in the skeleton.
    """
    g = as_generator(rng)
    lc, mc = problem.killing_bounds
    rate = mc - lc
    x_end = sde.to_x(skeleton.end)
    kappa = problem.eval_boundary(x_end) if skeleton.absorbed else problem.eval_initial(x_end)
    weight = 1.0
    n_points = 0
    work = skeleton.work
    if rate > 0:
        r = g.exponential(1.0 / rate)
        pieces = None
        seg_i = 0
        segs = skeleton.segments
        while r < skeleton.t_hat:
            while seg_i + 1 < len(segs) and segs[seg_i + 1].s0 <= r:
                seg_i += 1
                pieces = None
            seg = segs[seg_i]
            if pieces is None:
                pieces = [
                    ConditionedSegment(
                        float(seg.theta[k]), float(seg.duration),
                        float(seg.side * seg.theta[k] if k == seg.exit_dim else seg.end[k] - seg.start[k]),
                        int(seg.side) if k == seg.exit_dim else 0,
                        list(seg.point_times - seg.s0), list(seg.point_values[:, k] - seg.start[k]))
                    for k in range(sde.dim)
                ]
            rel = r - seg.s0
            v = seg.start + np.array([p.sample(rel, g) for p in pieces]) if 0 < rel < seg.duration else seg.start
            c = float(problem.eval_killing(sde.to_x(v), sde.t - r))
            if c < lc - 1e-10 * (1 + mc) or c > mc + 1e-10 * (1 + mc):
                raise BoundViolationError(f"killing rate {c} outside [{lc}, {mc}]")
            weight *= (mc - c) / rate
            n_points += 1
            work += 1
            r += g.exponential(1.0 / rate)
    value = kappa * weight * math.exp(-lc * skeleton.t_hat)
    return PathFunctionalSample(float(value), n_points, skeleton.t_hat, work)
