"""Euler-Maruyama estimates and their randomized-halting debiasing.

For a halting level ``H`` the estimator

    u_dagger = sum_{j <= H} (u_j - u_{j-1}) / P(H >= j),   u_{-1} = 0,

is unbiased for ``lim_j E[u_j]`` where ``u_j`` is the Euler functional on the
grid of step ``t / 2**j``.  All levels of one draw are driven by the same
Brownian path: the finest increments are generated one at a time and summed
in pairs to feed the next coarser level, so level ``j - 1`` increment ``k``
is exactly ``inc_j[2k] + inc_j[2k + 1]``.  Memory stays ``O(H d)``.

Dirichlet problems are stopped at the first grid point outside the domain
and scored with the boundary data at the nearest boundary point.
"""
import math
import time
import warnings
from dataclasses import dataclass

import numpy as np

from ._jit import njit
from .errors import ContractError, ResourceError
from .estimator import EstimatorResult, run_chunked, summarize
from .problem import PdeProblem, complementary_sde
from .rng import as_generator

MAX_LEVEL = 30
BRIDGE_MAX_LEVEL = 24

OK = 0
TOO_DEEP = 1

# ladder row: u_dagger, H, work, status
L_VALUE, L_H, L_WORK, L_STATUS = range(4)
# plain Euler row: value, t_hat, absorbed, work, end point
E_VALUE, E_THAT, E_ABSORBED, E_WORK, E_END = range(5)


@dataclass(frozen=True)
class HaltingDistribution:
    """Halting level with ``P(H >= j) = q**j``.

    ``geometric(p)`` has ``q = 1 - p`` (``P(H = j) = p (1 - p)**j``);
    ``power(r)`` has ``q = 2**-r``.  ``p = 1`` is allowed and always halts
    at level 0.
    """

    kind: str
    param: float

    def __post_init__(self):
        if self.kind == "geometric":
            if not 0 < self.param <= 1:
                raise ContractError("geometric parameter must lie in (0, 1]")
        elif self.kind == "power":
            if not self.param > 0:
                raise ContractError("power exponent must be positive")
        else:
            raise ContractError(f"unknown halting kind {self.kind!r}")

    @classmethod
    def geometric(cls, p):
        return cls("geometric", float(p))

    @classmethod
    def power(cls, r):
        return cls("power", float(r))

    @classmethod
    def parse(cls, text):
        """``"geometric:0.45"`` or ``"power:1.5"``."""
        kind, _, val = text.partition(":")
        try:
            return cls(kind.strip(), float(val))
        except ValueError:
            raise ContractError(f"bad halting spec {text!r}") from None

    @property
    def ratio(self):
        return 1.0 - self.param if self.kind == "geometric" else 2.0 ** (-self.param)

    def survival(self, j):
        """``P(H >= j)``."""
        j = np.asarray(j)
        return np.where(j <= 0, 1.0, self.ratio ** np.maximum(j, 0).astype(float))

    def weights(self, h):
        """``1 / P(H >= j)`` for ``j = 0..h``, built by repeated division as in the kernels."""
        w = np.empty(h + 1)
        w[0] = 1.0
        for j in range(1, h + 1):
            w[j] = w[j - 1] / self.ratio
        return w

    def sample(self, rng):
        return _draw_halting(as_generator(rng), self.ratio)

    def __str__(self):
        return f"{self.kind}:{self.param:g}"


@njit
def _draw_halting(rng, q):
    if q <= 0.0:
        return 0
    u = 1.0 - rng.random()
    h = math.floor(math.log(u) / math.log(q))
    if h > 2 ** 40:
        return 2 ** 40
    return int(h)


@dataclass(frozen=True)
class EulerConfig:
    """Ladder ``h_j = t 2**-j``; piecewise-constant or linear interpolation of
    the discrete path (the functional only reads grid values, so both give
    the same estimate); Dirichlet exit checked at grid points."""

    interpolation: str = "piecewise-constant"
    coupling: str = "aggregate"

    def __post_init__(self):
        if self.interpolation not in ("piecewise-constant", "linear"):
            raise ContractError(f"unknown interpolation {self.interpolation!r}")
        if self.coupling not in ("aggregate", "bridge"):
            raise ContractError(f"unknown coupling {self.coupling!r}")

    @staticmethod
    def step(t, j):
        return t * 2.0 ** (-j)


@dataclass
class LadderDraw:
    halting: int
    levels: np.ndarray
    differences: np.ndarray
    weights: np.ndarray
    value: float
    work: float

    @staticmethod
    def combine(levels, weights):
        """``sum_j w_j (u_j - u_{j-1})`` accumulated in level order."""
        diffs = np.empty_like(levels)
        total = 0.0
        prev = 0.0
        for j in range(levels.size):
            diffs[j] = levels[j] - prev
            total += weights[j] * diffs[j]
            prev = levels[j]
        return diffs, total


# ---------------------------------------------------------------------------
# kernels


@njit
def _outside(x, lo, hi):
    for k in range(x.shape[0]):
        if x[k] < lo[k] or x[k] > hi[k]:
            return True
    return False


@njit
def _clip(x, lo, hi):
    y = x.copy()
    for k in range(y.shape[0]):
        if y[k] < lo[k]:
            y[k] = lo[k]
        elif y[k] > hi[k]:
            y[k] = hi[k]
    return y


@njit
def euler_level(x0, t, incs, lo, hi, has_domain, drift_fn, drift_p, sig_fn, sig_p, kill_fn, kill_p,
                init_fn, init_p, bdry_fn, bdry_p):
    """One Euler path on the grid implied by ``incs``; returns ``(value, steps)``."""
    m_steps = incs.shape[0]
    h = t / m_steps
    d = x0.shape[0]
    x = x0.copy()
    bb = np.empty(d)
    ss = np.empty((d, d))
    s = 0.0
    for m in range(m_steps):
        tau = t - m * h
        s += h * kill_fn(x, tau, kill_p)
        drift_fn(x, tau, drift_p, bb)
        sig_fn(x, tau, sig_p, ss)
        for i_ in range(d):
            acc = bb[i_] * h
            for k_ in range(d):
                acc += ss[i_, k_] * incs[m][k_]
            x[i_] += acc
        if has_domain and _outside(x, lo, hi):
            return bdry_fn(_clip(x, lo, hi), bdry_p) * math.exp(-s), m + 1
    return init_fn(x, init_p) * math.exp(-s), m_steps


@njit
def aggregate_increments(fine):
    """Pairwise sums: row ``k`` of the result is ``fine[2k] + fine[2k + 1]``."""
    n = fine.shape[0] // 2
    out = np.empty((n, fine.shape[1]))
    for k in range(n):
        for i in range(fine.shape[1]):
            out[k, i] = fine[2 * k, i] + fine[2 * k + 1, i]
    return out


@njit
def ladder_kernel(rng, big_h, q, x0, t, lo, hi, has_domain, drift_fn, drift_p, sig_fn, sig_p,
                  kill_fn, kill_p, init_fn, init_p, bdry_fn, bdry_p, levels):
    """Evaluate levels ``0..big_h`` on one Brownian path; returns ``(u_dagger, work, status)``."""
    if big_h > MAX_LEVEL:
        return math.nan, 0.0, TOO_DEEP
    d = x0.shape[0]
    nl = big_h + 1
    xs = np.empty((nl, d))
    for j in range(nl):
        xs[j] = x0
    alive = np.ones(nl, dtype=np.bool_)
    ksum = np.zeros(nl)
    steps = np.zeros(nl, dtype=np.int64)
    pend = np.empty((nl, d))
    has_pend = np.zeros(nl, dtype=np.bool_)
    n_alive = nl
    n_fine = 1 << big_h
    sq = math.sqrt(t / n_fine)
    inc = np.empty(d)
    bb = np.empty(d)
    ss = np.empty((d, d))
    work = 0.0
    for i in range(n_fine):
        if n_alive == 0:
            break
        for k in range(d):
            inc[k] = sq * rng.standard_normal()
        j = big_h
        while True:
            if alive[j]:
                h = t / (1 << j)
                x = xs[j]
                tau = t - steps[j] * h
                ksum[j] += h * kill_fn(x, tau, kill_p)
                drift_fn(x, tau, drift_p, bb)
                sig_fn(x, tau, sig_p, ss)
                for i_ in range(d):
                    acc = bb[i_] * h
                    for k_ in range(d):
                        acc += ss[i_, k_] * inc[k_]
                    x[i_] += acc
                steps[j] += 1
                work += 1.0
                if has_domain and _outside(x, lo, hi):
                    levels[j] = bdry_fn(_clip(x, lo, hi), bdry_p) * math.exp(-ksum[j])
                    alive[j] = False
                    n_alive -= 1
                elif steps[j] == (1 << j):
                    levels[j] = init_fn(x, init_p) * math.exp(-ksum[j])
                    alive[j] = False
                    n_alive -= 1
            if j == 0:
                break
            if has_pend[j]:
                for k in range(d):
                    inc[k] = pend[j, k] + inc[k]
                has_pend[j] = False
                j -= 1
            else:
                for k in range(d):
                    pend[j, k] = inc[k]
                has_pend[j] = True
                break
    total = 0.0
    prev = 0.0
    w = 1.0
    for j in range(nl):
        total += w * (levels[j] - prev)
        prev = levels[j]
        if j < big_h:
            w = w / q
    return total, work, OK


@njit
def debias_batch(rng, n, q, x0, t, lo, hi, has_domain, drift_fn, drift_p, sig_fn, sig_p,
                 kill_fn, kill_p, init_fn, init_p, bdry_fn, bdry_p, rows):
    levels = np.empty(MAX_LEVEL + 1)
    for i in range(n):
        big_h = _draw_halting(rng, q)
        rows[i, L_H] = big_h
        v, w, st = ladder_kernel(rng, big_h, q, x0, t, lo, hi, has_domain, drift_fn, drift_p, sig_fn, sig_p,
                                 kill_fn, kill_p, init_fn, init_p, bdry_fn, bdry_p, levels)
        rows[i, L_VALUE] = v
        rows[i, L_WORK] = w
        rows[i, L_STATUS] = st
        if st != OK:
            return i + 1
    return n


@njit
def euler_batch(rng, n, n_steps, bridge, x0, t, lo, hi, has_domain, drift_fn, drift_p, sig_fn, sig_p,
                kill_fn, kill_p, init_fn, init_p, bdry_fn, bdry_p, rows):
    """Plain fixed-step Euler paths.

    With ``bridge`` the chance that the path left the box between grid points
    is accounted for through the Brownian-bridge crossing probability of each
    coordinate (frozen local volatility), which removes the leading
    half-order bias of grid-point exit checks.
    """
    d = x0.shape[0]
    h = t / n_steps
    sq = math.sqrt(h)
    inc = np.empty(d)
    xo = np.empty(d)
    pf = np.empty(2 * d)
    s = np.empty((d, d))
    bb = np.empty(d)
    # the step is written out in each kernel: a helper taking the
    # coefficient functions as arguments is not inlined and costs ~100 ns
    for i in range(n):
        x = x0.copy()
        ks = 0.0
        absorbed = False
        t_hat = t
        work = 0.0
        for m in range(n_steps):
            tau = t - m * h
            c = kill_fn(x, tau, kill_p)
            for k in range(d):
                inc[k] = sq * rng.standard_normal()
                xo[k] = x[k]
            drift_fn(x, tau, drift_p, bb)
            sig_fn(x, tau, sig_p, s)
            for i_ in range(d):
                acc = bb[i_] * h
                for k_ in range(d):
                    acc += s[i_, k_] * inc[k_]
                x[i_] += acc
            work += 1.0
            if not has_domain:
                ks += h * c
                continue
            if _outside(x, lo, hi):
                ks += h * c
                absorbed = True
                t_hat = (m + 1) * h
                x = _clip(x, lo, hi)
                break
            if bridge:
                surv = 1.0
                tot = 0.0
                for k in range(d):
                    v = 0.0
                    for l in range(d):
                        v += s[k, l] * s[k, l]
                    v *= h
                    p_lo = math.exp(-2.0 * (xo[k] - lo[k]) * (x[k] - lo[k]) / v) if math.isfinite(lo[k]) else 0.0
                    p_hi = math.exp(-2.0 * (hi[k] - xo[k]) * (hi[k] - x[k]) / v) if math.isfinite(hi[k]) else 0.0
                    pf[2 * k] = p_lo
                    pf[2 * k + 1] = p_hi
                    surv *= (1.0 - p_lo) * (1.0 - p_hi)
                    tot += p_lo + p_hi
                if rng.random() > surv:
                    u = rng.random() * tot
                    f = 0
                    acc = pf[0]
                    while acc < u and f < 2 * d - 1:
                        f += 1
                        acc += pf[f]
                    for k in range(d):
                        x[k] = 0.5 * (xo[k] + x[k])
                    x[f // 2] = lo[f // 2] if f % 2 == 0 else hi[f // 2]
                    x = _clip(x, lo, hi)
                    ks += 0.5 * h * c
                    absorbed = True
                    t_hat = (m + 0.5) * h
                    break
            ks += h * c
        if absorbed:
            val = bdry_fn(x, bdry_p)
        else:
            val = init_fn(x, init_p)
        rows[i, E_VALUE] = val * math.exp(-ks)
        rows[i, E_THAT] = t_hat
        rows[i, E_ABSORBED] = 1.0 if absorbed else 0.0
        rows[i, E_WORK] = work
        rows[i, E_END:E_END + d] = x
    return n


# ---------------------------------------------------------------------------
# Python API


def euler_args(problem: PdeProblem, x, t):
    """Shared trailing arguments of the Euler kernels."""
    sde = complementary_sde(problem, x, t)
    dom = problem.region()
    bdry = problem.boundary if problem.boundary is not None else problem.initial
    return (np.ascontiguousarray(sde.x), float(t), dom.lower.copy(), dom.upper.copy(), problem.dirichlet,
            problem.drift.fn, problem.drift.params, sde.volatility.fn, sde.volatility.params,
            problem.killing.fn, problem.killing.params, problem.initial.fn, problem.initial.params,
            bdry.fn, bdry.params)


def euler_functional(problem: PdeProblem, x, t, level, fine_increments):
    """Euler functional on the level-``level`` grid driven by ``fine_increments``.

    ``fine_increments`` has ``2**J`` rows (``J >= level``) of Brownian
    increments on the finest grid; they are summed pairwise down to
    ``2**level`` rows.
    """
    incs = np.atleast_2d(np.asarray(fine_increments, dtype=float))
    if incs.shape[1] != problem.dim and incs.shape[0] == problem.dim and incs.ndim == 2:
        incs = incs.T
    rows = incs.shape[0]
    if rows & (rows - 1) or rows < 2 ** level:
        raise ContractError("need 2**J increment rows with J >= level")
    while incs.shape[0] > 2 ** level:
        incs = aggregate_increments(incs)
    args = euler_args(problem, x, t)
    value, _ = euler_level(args[0], args[1], incs, *args[2:])
    return float(value)


def _raise_too_deep(big_h, halting):
    prob = float(halting.survival(big_h))
    raise ResourceError(f"halting level {big_h} needs more than 2**{MAX_LEVEL} fine steps "
                        f"(P(H >= {big_h}) = {prob:.3g})")


def sample_ladder(problem: PdeProblem, x, t, halting: HaltingDistribution, seed, config=None, big_h=None):
    """One debiased draw with all its levels kept.

    ``big_h`` fixes the halting level instead of drawing it.
    """
    config = config or EulerConfig()
    g = as_generator(seed)
    if big_h is None:
        big_h = halting.sample(g)
    big_h = int(big_h)
    if big_h > MAX_LEVEL:
        _raise_too_deep(big_h, halting)
    args = euler_args(problem, x, t)
    weights = halting.weights(big_h)
    if config.coupling == "aggregate":
        levels = np.zeros(MAX_LEVEL + 1)
        value, work, st = ladder_kernel(g, big_h, halting.ratio, *args, levels)
        levels = levels[: big_h + 1].copy()
    else:
        levels, work = _bridge_ladder(g, big_h, args)
    diffs, total = LadderDraw.combine(levels, weights)
    return LadderDraw(big_h, levels, diffs, weights, float(total), float(work))


def bridge_refine(rng, w_coarse, h):
    """Midpoints of a Brownian path sampled on a grid of step ``h``."""
    n, d = w_coarse.shape[0] - 1, w_coarse.shape[1]
    out = np.empty((2 * n + 1, d))
    out[0::2] = w_coarse
    out[1::2] = 0.5 * (w_coarse[:-1] + w_coarse[1:]) + math.sqrt(h / 4.0) * rng.standard_normal((n, d))
    return out


def _bridge_ladder(g, big_h, args):
    # coarse-to-fine construction: refine the path by Brownian-bridge midpoints
    if big_h > BRIDGE_MAX_LEVEL:
        raise ResourceError(f"bridge coupling keeps the whole path; level {big_h} is too deep")
    x0, t = args[0], args[1]
    d = x0.size
    w = np.zeros((2, d))
    w[1] = math.sqrt(t) * g.standard_normal(d)
    levels = np.empty(big_h + 1)
    work = 0.0
    for j in range(big_h + 1):
        if j > 0:
            w = bridge_refine(g, w, t * 2.0 ** (-(j - 1)))
        v, steps = euler_level(x0, t, np.diff(w, axis=0), *args[2:])
        levels[j] = v
        work += steps
    return levels, work


def estimate_debiased(problem: PdeProblem, x, t, n, halting, seed=0, threads=None, level=0.95, config=None,
                      stream=()):
    """Average of ``n`` independent debiased draws.

    The result reports total work (Euler steps over all levels) together
    with the largest and median per-draw work.
    """
    if n < 1:
        raise ContractError("n must be positive")
    config = config or EulerConfig()
    if isinstance(halting, str):
        halting = HaltingDistribution.parse(halting)
    args = euler_args(problem, x, t)
    q = halting.ratio
    t0 = time.perf_counter()
    if config.coupling == "aggregate":
        out, bad = run_chunked(lambda g, rows: debias_batch(g, rows.shape[0], q, *args, rows), int(n), seed, 4,
                               threads, stream=stream)
        if bad is not None:
            _raise_too_deep(int(out[bad, L_H]), halting)
        values, work, hs = out[:, L_VALUE], out[:, L_WORK], out[:, L_H]
    else:
        from .rng import RngStream

        g = RngStream(seed, tuple(stream)).generator
        draws = [sample_ladder(problem, x, t, halting, g, config) for _ in range(n)]
        values = np.array([d.value for d in draws])
        work = np.array([d.work for d in draws])
        hs = np.array([d.halting for d in draws])
    wall = time.perf_counter() - t0
    return summarize(values, work, wall, level, {"max_halting": float(hs.max()), "halting": str(halting)})


def expected_work(halting: HaltingDistribution, j_max):
    """``sum_{j <= j_max} 2**j P(H >= j)``, warning when the full series diverges."""
    ratio = 2.0 * halting.ratio
    if ratio >= 1.0:
        warnings.warn(f"expected work diverges for {halting} (term ratio {ratio:g})", RuntimeWarning,
                      stacklevel=2)
    j = np.arange(int(j_max) + 1)
    return float(np.sum(2.0 ** j * halting.survival(j)))


def estimate_euler(problem: PdeProblem, x, t, steps, n, seed=0, threads=None, bridge=False, level=0.95,
                   stream=()):
    """Plain fixed-step Euler estimate (biased); ``steps`` grid steps on ``[0, t]``."""
    args = euler_args(problem, x, t)
    d = problem.dim
    t0 = time.perf_counter()
    out, _ = run_chunked(lambda g, rows: euler_batch(g, rows.shape[0], int(steps), bool(bridge), *args, rows),
                         int(n), seed, E_END + d, threads, stream=stream)
    wall = time.perf_counter() - t0
    extra = {
        "absorbed_fraction": float(out[:, E_ABSORBED].mean()),
        "end_mean": out[:, E_END:].mean(axis=0).tolist(),
        "end_sd": out[:, E_END:].std(axis=0, ddof=1).tolist() if n > 1 else [math.nan] * d,
        "steps": int(steps),
    }
    return summarize(out[:, E_VALUE], out[:, E_WORK], wall, level, extra)
