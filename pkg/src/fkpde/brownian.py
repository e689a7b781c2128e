"""Exact Brownian primitives on symmetric intervals.

All compiled samplers take a ``numpy.random.Generator`` as first argument and
work in coordinates relative to the centre of the interval ``(-theta, theta)``.
Internally the interval is shifted to ``(0, L)`` with ``L = 2 * theta``.

Conditional laws used here:

* exit time of Brownian motion from ``(-1, 1)``: Devroye's alternating-series
  rejection sampler, general half-widths by Brownian scaling;
* position at time ``dt`` given survival in the interval (killed transition);
* position between two revealed interior points given survival (bridge);
* position before the first exit, given the exit time and side.  The
  proposal is a three-dimensional Bessel bridge run down to the exit barrier;
  the far barrier is imposed by an extra accept/reject step.

The two last samplers use rejection with a capped number of attempts and
fall back to numerical inversion of the exact density (image or spectral
series on a fine grid).  Both branches draw from the same target law, so the
mixture is exact up to the quadrature error of the fallback.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from ._jit import njit
from .errors import ContractError, SamplerError
from .rng import as_generator

T_SPLIT = 0.64
FPT_MAX_ITER = 1_000_000
_PI2 = math.pi * math.pi
_K = _PI2 / 8.0
_REJECT_TRIES = 64
_GRID = 2049
_GRID_SMOOTH = 513


# ---------------------------------------------------------------------------
# First passage time from (-1, 1)


@njit(cache=True)
def fpt_series_term(n, x):
    """n-th term of the alternating series for the exit-time density."""
    h = n + 0.5
    if x > T_SPLIT:
        return math.pi * h * math.exp(-h * h * _PI2 * x / 2.0)
    return math.pi * h * (2.0 / (math.pi * x)) ** 1.5 * math.exp(-2.0 * h * h / x)


@njit(cache=True)
def _normal_tail(rng, a):
    # Robert (1995) exponential proposal for N(0,1) restricted to [a, inf)
    alpha = 0.5 * (a + math.sqrt(a * a + 4.0))
    for _ in range(FPT_MAX_ITER):
        z = a + rng.exponential() / alpha
        if rng.random() <= math.exp(-0.5 * (z - alpha) ** 2):
            return z
    return math.nan


@njit(cache=True)
def fpt_unit(rng):
    """Exit time of standard Brownian motion from (-1, 1); NaN on cap."""
    a = 1.0 / math.sqrt(T_SPLIT)
    mass_left = 2.0 * math.erfc(a / math.sqrt(2.0))
    mass_right = (4.0 / math.pi) * math.exp(-_K * T_SPLIT)
    p_left = mass_left / (mass_left + mass_right)
    for _ in range(FPT_MAX_ITER):
        if rng.random() < p_left:
            z = _normal_tail(rng, a)
            x = 1.0 / (z * z)
        else:
            x = T_SPLIT + rng.exponential() / _K
        s = fpt_series_term(0, x)
        u = rng.random() * s
        n = 0
        while True:
            n += 1
            an = fpt_series_term(n, x)
            if n % 2 == 1:
                s -= an
                if u <= s:
                    return x
            else:
                s += an
                if u > s:
                    break
    return math.nan


@njit(cache=True)
def fpt_batch(rng, theta, n, times, sides):
    for i in range(n):
        times[i] = theta * theta * fpt_unit(rng)
        sides[i] = 1.0 if rng.random() < 0.5 else -1.0


def exit_time_cdf(x, theta=1.0, tol=1e-14):
    """CDF of the exit time of Brownian motion from (-theta, theta).

    Uses the image series for small times and the eigenfunction series for
    large times; both are truncated once the next term is below ``tol``.
    """
    x = np.asarray(x, dtype=float) / theta**2
    out = np.empty_like(x)
    small = x <= 1.0
    from scipy.special import erfc

    xs = x[small]
    acc = np.zeros_like(xs)
    for n in range(200):
        term = 4.0 * (-1) ** n * 0.5 * erfc((2 * n + 1) / np.sqrt(2.0 * np.maximum(xs, 1e-300)))
        acc += term
        if np.all(np.abs(term) < tol):
            break
    out[small] = acc
    xl = x[~small]
    acc = np.zeros_like(xl)
    for n in range(200):
        term = (4.0 / np.pi) * (-1) ** n / (2 * n + 1) * np.exp(-((2 * n + 1) ** 2) * _PI2 * xl / 8.0)
        acc += term
        if np.all(np.abs(term) < tol):
            break
    out[~small] = 1.0 - acc
    return out


# ---------------------------------------------------------------------------
# Series for a Brownian path killed outside (0, L)


@njit(cache=True)
def _n_images(dt, L):
    k = int(math.sqrt(22.5 * dt) / L) + 2
    return min(k, 200)


@njit(cache=True)
def bridge_stay_prob(x, y, dt, L):
    """P(Brownian bridge x -> y over dt stays inside (0, L))."""
    if not (0.0 < x < L and 0.0 < y < L):
        return 0.0
    K = _n_images(dt, L)
    s = -math.expm1(-2.0 * x * y / dt)
    for k in range(-K, K + 1):
        if k != 0:
            s += math.exp(-2.0 * k * L * (k * L - (y - x)) / dt)
            s -= math.exp(-2.0 * (x - k * L) * (y - k * L) / dt)
    if s < 0.0:
        return 0.0
    if s > 1.0:
        return 1.0
    return s


@njit(cache=True)
def exit_density_ratio(dist, dt, L):
    """Ratio of two-sided to one-sided first-passage densities.

    ``dist`` is the distance from the current point to the exit barrier; the
    far barrier sits at ``L - dist`` on the other side.
    """
    if not (0.0 < dist <= L):
        return 0.0
    K = _n_images(dt, L)
    s = 1.0
    for k in range(1, K + 1):
        a = 2.0 * k * k * L * L / dt
        z = 2.0 * k * L * dist / dt
        ep = math.exp(z - a)
        em = math.exp(-z - a)
        if z > 1e-3:
            shc = (ep - em) / (2.0 * z)
        else:
            shc = math.exp(-a) * (1.0 + z * z / 6.0 + z ** 4 / 120.0)
        s += (ep + em) - (4.0 * a) * shc
    if s < 0.0:
        return 0.0
    if s > 1.0:
        return 1.0
    return s


@njit(cache=True)
def _log_killed(x, y, dt, L):
    # log transition density of the killed process, up to a y-free constant
    if not (0.0 < y < L):
        return -math.inf
    if dt <= 0.25 * L * L:
        ps = bridge_stay_prob(x, y, dt, L)
        if ps <= 0.0:
            return -math.inf
        return -((y - x) ** 2) / (2.0 * dt) + math.log(ps)
    c = _PI2 * dt / (2.0 * L * L)
    N = int(math.sqrt(1.0 + 80.0 / (2.0 * c))) + 2
    s = 0.0
    for n in range(1, N + 1):
        s += math.sin(n * math.pi * x / L) * math.sin(n * math.pi * y / L) * math.exp(-(n * n - 1) * c)
    if s <= 0.0:
        return -math.inf
    return math.log(s)


@njit(cache=True)
def _log_exit(y, dt, L):
    # log density of exiting (0, L) through L at time dt from y, up to a constant
    if not (0.0 < y < L):
        return -math.inf
    d = L - y
    if dt <= 0.25 * L * L:
        r = exit_density_ratio(d, dt, L)
        if r <= 0.0:
            return -math.inf
        return math.log(d) - d * d / (2.0 * dt) + math.log(r)
    c = _PI2 * dt / (2.0 * L * L)
    N = int(math.sqrt(1.0 + 80.0 / (2.0 * c))) + 2
    s = 0.0
    sign = 1.0
    for n in range(1, N + 1):
        s += sign * n * math.sin(n * math.pi * y / L) * math.exp(-(n * n - 1) * c)
        sign = -sign
    if s <= 0.0:
        return -math.inf
    return math.log(s)


@njit(cache=True)
def _invert_grid(rng, kind, x1, dt1, x2, dt2, L, a, b):
    """Draw from the target density by inverting its CDF on a fine grid."""
    if a < 0.0:
        a = 0.0
    if b > L:
        b = L
    if not b > a:
        a, b = 0.0, L
    G = _GRID
    if dt1 > 0.25 * L * L and (kind == 0 or dt2 > 0.25 * L * L):
        # a few smooth sine modes: a coarse grid is ample
        G = _GRID_SMOOTH
    h = (b - a) / (G - 1)
    logp = np.empty(G)
    for i in range(G):
        y = a + i * h
        lp = _log_killed(x1, y, dt1, L)
        if kind == 1:
            lp += _log_killed(x2, y, dt2, L)
        elif kind == 2:
            lp += _log_exit(y, dt2, L)
        logp[i] = lp
    m = -math.inf
    for i in range(G):
        if logp[i] > m:
            m = logp[i]
    if not math.isfinite(m):
        return math.nan
    p = np.exp(logp - m)
    cdf = np.empty(G)
    cdf[0] = 0.0
    for i in range(1, G):
        cdf[i] = cdf[i - 1] + 0.5 * h * (p[i - 1] + p[i])
    target = rng.random() * cdf[G - 1]
    lo, hi = 0, G - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if cdf[mid] < target:
            lo = mid
        else:
            hi = mid
    # density linear on the cell: solve p0 u + (p1 - p0) u^2 / (2 h) = rest
    p0, p1 = p[lo], p[hi]
    rest = target - cdf[lo]
    slope = (p1 - p0) / h
    if abs(slope) < 1e-14 * max(p0, 1e-300) / h:
        u = rest / p0 if p0 > 0 else 0.5 * h
    else:
        disc = p0 * p0 + 2.0 * slope * rest
        if disc < 0.0:
            disc = 0.0
        u = (math.sqrt(disc) - p0) / slope
    y = a + lo * h + min(max(u, 0.0), h)
    if y <= 0.0:
        y = 1e-300
    if y >= L:
        y = L * (1.0 - 1e-16)
    return y


@njit(cache=True)
def _killed_endpoint_shifted(rng, x0, dt, L):
    if dt <= 0.5 * L * L:
        sd = math.sqrt(dt)
        for _ in range(_REJECT_TRIES):
            y = x0 + sd * rng.standard_normal()
            if 0.0 < y < L and rng.random() < bridge_stay_prob(x0, y, dt, L):
                return y
    sd = math.sqrt(dt)
    return _invert_grid(rng, 0, x0, dt, 0.0, 0.0, L, x0 - 10.0 * sd, x0 + 10.0 * sd)


@njit(cache=True)
def _bridge_shifted(rng, x1, dt1, x2, dt2, L):
    dt = dt1 + dt2
    mean = x1 + (dt1 / dt) * (x2 - x1)
    sd = math.sqrt(dt1 * dt2 / dt)
    if bridge_stay_prob(x1, x2, dt, L) > 0.02:
        for _ in range(_REJECT_TRIES):
            y = mean + sd * rng.standard_normal()
            if 0.0 < y < L:
                acc = bridge_stay_prob(x1, y, dt1, L) * bridge_stay_prob(y, x2, dt2, L)
                if rng.random() < acc:
                    return y
    return _invert_grid(rng, 1, x1, dt1, x2, dt2, L, mean - 10.0 * sd, mean + 10.0 * sd)


@njit(cache=True)
def _exit_conditioned_shifted(rng, x1, dt1, dt2, L):
    # path from x1 that first leaves (0, L) through L exactly dt1 + dt2 later
    dt = dt1 + dt2
    r0 = L - x1
    mr = r0 * dt2 / dt
    sv = math.sqrt(dt1 * dt2 / dt)
    if exit_density_ratio(r0, dt, L) > 0.02:
        for _ in range(_REJECT_TRIES):
            z1 = mr + sv * rng.standard_normal()
            z2 = sv * rng.standard_normal()
            z3 = sv * rng.standard_normal()
            R = math.sqrt(z1 * z1 + z2 * z2 + z3 * z3)
            y = L - R
            if not (0.0 < y < L):
                continue
            one_sided = -math.expm1(-2.0 * r0 * R / dt1)
            if one_sided <= 0.0:
                continue
            acc = bridge_stay_prob(x1, y, dt1, L) / one_sided * exit_density_ratio(R, dt2, L)
            if rng.random() < acc:
                return y
    lo = mr - 10.0 * sv
    if lo < 0.0:
        lo = 0.0
    return _invert_grid(rng, 2, x1, dt1, 0.0, dt2, L, L - (mr + 12.0 * sv), L - lo)


@njit(cache=True)
def _inside(w, theta):
    if w >= theta:
        return theta * (1.0 - 1e-15)
    if w <= -theta:
        return -theta * (1.0 - 1e-15)
    return w


@njit(cache=True)
def sample_killed_endpoint(rng, theta, w0, dt):
    """Position after ``dt`` from ``w0`` given no exit from (-theta, theta)."""
    y = _killed_endpoint_shifted(rng, w0 + theta, dt, 2.0 * theta)
    return _inside(y - theta, theta)


@njit(cache=True)
def sample_bridge_inside(rng, theta, w1, dt1, w2, dt2):
    """Position ``dt1`` after ``w1`` on a path reaching ``w2`` after a further
    ``dt2``, given that the path stays inside (-theta, theta)."""
    y = _bridge_shifted(rng, w1 + theta, dt1, w2 + theta, dt2, 2.0 * theta)
    return _inside(y - theta, theta)


@njit(cache=True)
def sample_exit_conditioned(rng, theta, w1, dt1, dt2, side):
    """Position ``dt1`` after ``w1`` given the first exit from (-theta, theta)
    happens ``dt1 + dt2`` after ``w1``, through ``side * theta``."""
    y = _exit_conditioned_shifted(rng, theta + side * w1, dt1, dt2, 2.0 * theta)
    return _inside(side * (y - theta), theta)


@njit(cache=True)
def brownian_bridge(rng, t0, x0, t1, x1, s):
    if s <= t0:
        return x0
    if s >= t1:
        return x1
    frac = (s - t0) / (t1 - t0)
    var = (s - t0) * (t1 - s) / (t1 - t0)
    return x0 + frac * (x1 - x0) + math.sqrt(var) * rng.standard_normal()


# ---------------------------------------------------------------------------
# Python API


@dataclass(frozen=True)
class FptSample:
    time: float
    side: int
    theta: float


def sample_fpt_symmetric(theta, rng):
    """First passage of standard Brownian motion out of ``(-theta, theta)``."""
    if not theta > 0:
        raise ContractError(f"theta must be positive, got {theta}")
    g = as_generator(rng)
    x = fpt_unit(g)
    if math.isnan(x):
        raise SamplerError("first-passage rejection loop exceeded its cap")
    side = 1 if g.random() < 0.5 else -1
    return FptSample(theta * theta * x, side, float(theta))


def sample_fpt_many(theta, n, rng):
    """Vectorised draw of ``n`` passage times and exit sides."""
    g = as_generator(rng)
    times = np.empty(n)
    sides = np.empty(n)
    fpt_batch(g, float(theta), int(n), times, sides)
    if np.isnan(times).any():
        raise SamplerError("first-passage rejection loop exceeded its cap")
    return times, sides


def sample_terminal_below_barrier(theta, varsigma, t_target, exit_side, rng):
    """Value at ``t_target`` of a path started at 0 whose first exit from
    ``(-theta, theta)`` happens at ``varsigma`` through ``exit_side``."""
    if not (varsigma > t_target > 0):
        raise ContractError("need varsigma > t_target > 0")
    if exit_side not in (1, -1):
        raise ContractError("exit_side must be +1 or -1")
    w = sample_exit_conditioned(as_generator(rng), float(theta), 0.0, float(t_target),
                                float(varsigma - t_target), float(exit_side))
    if math.isnan(w):
        raise SamplerError("conditional sampler failed")
    return w


def sample_brownian_bridge(t0, x0, t1, x1, s, rng):
    if not t1 > t0:
        raise ContractError("degenerate bridge interval")
    if not (t0 <= s <= t1):
        raise ContractError("bridge time outside [t0, t1]")
    return brownian_bridge(as_generator(rng), float(t0), float(x0), float(t1), float(x1), float(s))


@dataclass
class ConditionedSegment:
    """One coordinate of a proposal segment, revealed lazily.

    The coordinate starts at 0 and either leaves ``(-theta, theta)`` through
    ``exit_side`` at ``duration`` (``exit_side`` = +1/-1), or survives up to
    ``duration`` and sits at ``end`` (``exit_side`` = 0).  Revealed points are
    kept sorted; each new point is drawn conditionally on its neighbours.
    """

    theta: float
    duration: float
    end: float
    exit_side: int = 0
    times: list = field(default_factory=list)
    values: list = field(default_factory=list)

    def sample(self, s, rng):
        if not (0.0 < s < self.duration):
            raise ContractError(f"time {s} outside (0, {self.duration})")
        g = as_generator(rng)
        import bisect

        i = bisect.bisect_left(self.times, s)
        if i < len(self.times) and self.times[i] == s:
            return self.values[i]
        t_prev = self.times[i - 1] if i > 0 else 0.0
        w_prev = self.values[i - 1] if i > 0 else 0.0
        if i < len(self.times):
            w = sample_bridge_inside(g, self.theta, w_prev, s - t_prev, self.values[i], self.times[i] - s)
        elif self.exit_side != 0:
            w = sample_exit_conditioned(g, self.theta, w_prev, s - t_prev, self.duration - s,
                                        float(self.exit_side))
        else:
            w = sample_bridge_inside(g, self.theta, w_prev, s - t_prev, self.end, self.duration - s)
        if math.isnan(w):
            raise SamplerError("conditional sampler failed")
        self.times.insert(i, s)
        self.values.insert(i, w)
        return w


def sample_interior_point(theta, varsigma, exit_side, s, rng, segment=None):
    """Reveal the proposal path at ``s`` inside a first-passage segment.

    Pass the same ``segment`` (a :class:`ConditionedSegment`) to successive
    calls to keep them mutually consistent; one is created when omitted.
    """
    if segment is None:
        segment = ConditionedSegment(float(theta), float(varsigma), exit_side * float(theta), int(exit_side))
    return segment.sample(float(s), rng)
