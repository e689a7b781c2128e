"""Localized exact algorithm for unit-volatility diffusions.

A path is built one segment at a time.  From the current point ``y`` each
coordinate gets a half-width ``theta_k`` (never reaching past the nearest face
of the domain, never above ``theta_max`` or the square root of the remaining
time); the proposal is Brownian motion up to the first time one coordinate
leaves ``y_k +/- theta_k`` or the horizon is reached.  The segment is accepted
with probability proportional to the Girsanov weight

    exp(A(end) - M_A - L_phi tau) * P(no thinning point rejects),

and is re-proposed from the same start otherwise.  Because the acceptance
constant only depends on the start point, retrying a segment leaves the law
of the accepted path exact.  When the exiting coordinate lands on a face of
the domain the path is absorbed there.

The compiled kernels report failures through integer status codes so that
they can run without the GIL; :func:`raise_for_status` turns them into
exceptions.
"""
import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

from ._jit import njit
from .brownian import (
    ConditionedSegment,
    fpt_unit,
    sample_bridge_inside,
    sample_exit_conditioned,
    sample_killed_endpoint,
)
from .errors import BoundViolationError, ContractError, EaInapplicableError, SamplerError
from .rng import as_generator

OK = 0
PHI_BOUND = 1
A_BOUND = 2
KILL_BOUND = 3
ITER_CAP = 4
NOT_INSIDE = 5
BUFFER_FULL = 6
NO_GLOBAL_BOUNDS = 7

MAX_RETRIES = 1_000_000
TWO_STEP = 0
COMBINED = 1

# out[] layout of the path kernel
O_VALUE, O_THAT, O_ABSORBED, O_WORK, O_NKILL, O_NSEG, O_STATUS, O_NPTS, O_END = range(9)
# segment record: s0, tau, exit_dim, side, first point, point count, then y, theta, end
SEG_FIXED = 6
# point record: time, kind (0 thinning, 1 killing), position
PT_FIXED = 2
THIN_POINT = 0
KILL_POINT = 1


@njit
def _tol(lo, hi):
    return 1e-10 * (1.0 + abs(lo) + abs(hi))


@njit
def choose_theta_kernel(y, lo, hi, t_rem, theta_max, theta, lo_face, up_face):
    """Fill ``theta`` and the face flags; returns a status code."""
    cap = min(theta_max, math.sqrt(t_rem))
    for k in range(y.shape[0]):
        dl = y[k] - lo[k]
        du = hi[k] - y[k]
        if not (dl > 0.0 and du > 0.0):
            return NOT_INSIDE
        th = min(min(dl, du), cap)
        theta[k] = th
        lo_face[k] = dl == th
        up_face[k] = du == th
    return OK


@njit
def propose_kernel(rng, y, theta, t_rem, lo, hi, lo_face, up_face, w_end, end):
    """Draw one proposal segment.

    Returns ``(tau, exit_dim, side)``; ``exit_dim`` is -1 when the horizon
    is reached first.  ``w_end`` receives offsets from ``y`` in the driving
    Brownian coordinates and ``end`` the end point, with exits through a
    face snapped exactly onto it.
    """
    d = y.shape[0]
    tau = t_rem
    j = -1
    for k in range(d):
        s = theta[k] * theta[k] * fpt_unit(rng)
        if s < tau:
            tau = s
            j = k
    side = 0.0
    if j >= 0:
        side = 1.0 if rng.random() < 0.5 else -1.0
    for k in range(d):
        if k == j:
            w_end[k] = side * theta[k]
            if side > 0:
                e = y[k] + theta[k]
                if up_face[k] or e >= hi[k]:
                    e = hi[k]
            else:
                e = y[k] - theta[k]
                if lo_face[k] or e <= lo[k]:
                    e = lo[k]
            end[k] = e
        else:
            w = sample_killed_endpoint(rng, theta[k], 0.0, tau)
            w_end[k] = w
            end[k] = y[k] + w
    return tau, j, side


@njit
def _reveal(rng, theta, j, side, tau, r, t_prev, w_prev, w_end):
    # advance every coordinate from its last revealed point to time r
    for k in range(theta.shape[0]):
        if k == j:
            w = sample_exit_conditioned(rng, theta[k], w_prev[k], r - t_prev, tau - r, side)
        else:
            w = sample_bridge_inside(rng, theta[k], w_prev[k], r - t_prev, w_end[k], tau - r)
        w_prev[k] = w


@njit
def lea_path(rng, y0, t, lo, hi, theta_max, mode, use_global,
             pot_fn, pot_p, phi_fn, phi_p, bnd_fn, bnd_p,
             einv_fn, einv_p, kill_fn, kill_p, lc, mc,
             init_fn, init_p, bdry_fn, bdry_p,
             seg_buf, pt_buf, out):
    """Simulate one path and evaluate its Feynman-Kac functional.

    ``mode`` is ``TWO_STEP`` (retry rejected segments, killing by a separate
    Poisson weight) or ``COMBINED`` (``phi_fn`` already includes the killing
    rate; a rejected segment ends the path with value zero and the Girsanov
    factor in ``A`` is carried as a weight).  Skeleton records are written
    when ``seg_buf`` has rows.
    """
    d = y0.shape[0]
    record = seg_buf.shape[0] > 0
    y = y0.copy()
    theta = np.empty(d)
    lo_face = np.zeros(d, dtype=np.bool_)
    up_face = np.zeros(d, dtype=np.bool_)
    w_end = np.empty(d)
    end = np.empty(d)
    w_prev = np.empty(d)
    pos = np.empty(d)
    s0 = 0.0
    work = 0.0
    weight = 1.0
    n_kill = 0
    n_seg = 0
    n_pts = 0
    absorbed = False
    status = OK
    rate_c = mc - lc
    g_lphi = 0.0
    g_mphi = 0.0
    g_ma = 0.0
    if use_global:
        g_lphi, g_mphi, g_ma = bnd_fn(lo, hi, 0.0, t, bnd_p)
        if not (math.isfinite(g_lphi) and math.isfinite(g_mphi) and math.isfinite(g_ma)):
            out[O_STATUS] = NO_GLOBAL_BOUNDS
            return
    a_start = pot_fn(y0, t, pot_p)
    killed_by_rejection = False

    while s0 < t and status == OK:
        t_rem = t - s0
        status = choose_theta_kernel(y, lo, hi, t_rem, theta_max, theta, lo_face, up_face)
        if status != OK:
            break
        if use_global:
            lphi, mphi, ma = g_lphi, g_mphi, g_ma
        else:
            lphi, mphi, ma = bnd_fn(y - theta, y + theta, 0.0, t - s0, bnd_p)
        if mode == COMBINED:
            lphi += lc
            mphi += mc
        rate_phi = mphi - lphi
        tol_phi = _tol(lphi, mphi)
        tol_a = _tol(ma, 0.0)
        accepted = False
        tries = 0
        seg_pts = 0
        while not accepted:
            tries += 1
            if tries > MAX_RETRIES:
                status = ITER_CAP
                break
            work += 1.0
            seg_pts = 0
            tau, j, side = propose_kernel(rng, y, theta, t_rem, lo, hi, lo_face, up_face, w_end, end)
            log_acc = -lphi * tau + min(0.0, lphi) * t_rem
            if mode == TWO_STEP:
                a_end = pot_fn(end, t - s0 - tau, pot_p)
                if a_end > ma + tol_a:
                    status = A_BOUND
                    break
                log_acc += a_end - ma
                if log_acc < 0.0 and not (rng.random() < math.exp(log_acc)):
                    continue
            # thinning and killing points, revealed in time order
            for k in range(d):
                w_prev[k] = 0.0
            t_prev = 0.0
            r_thin = rng.exponential(1.0 / rate_phi) if rate_phi > 0.0 else math.inf
            r_kill = math.inf
            if mode == TWO_STEP and rate_c > 0.0:
                r_kill = rng.exponential(1.0 / rate_c)
            ok = True
            seg_kill = 1.0
            seg_nkill = 0
            while ok:
                r = min(r_thin, r_kill)
                if not r < tau:
                    break
                _reveal(rng, theta, j, side, tau, r, t_prev, w_prev, w_end)
                t_prev = r
                work += 1.0
                for k in range(d):
                    pos[k] = y[k] + w_prev[k]
                tau_pde = t - s0 - r
                if r == r_thin:
                    kind = THIN_POINT
                    ph = phi_fn(pos, tau_pde, phi_p)
                    if ph < lphi - tol_phi or ph > mphi + tol_phi:
                        status = PHI_BOUND
                        ok = False
                        break
                    if rng.random() * rate_phi > mphi - ph:
                        ok = False
                    r_thin = r + rng.exponential(1.0 / rate_phi)
                else:
                    kind = KILL_POINT
                    c = kill_fn(einv_fn(pos, einv_p), tau_pde, kill_p)
                    if c < lc - _tol(lc, mc) or c > mc + _tol(lc, mc):
                        status = KILL_BOUND
                        ok = False
                        break
                    seg_kill *= min(1.0, max(0.0, (mc - c) / rate_c))
                    seg_nkill += 1
                    r_kill = r + rng.exponential(1.0 / rate_c)
                if record and ok:
                    if n_pts + seg_pts >= pt_buf.shape[0]:
                        status = BUFFER_FULL
                        ok = False
                        break
                    row = pt_buf[n_pts + seg_pts]
                    row[0] = s0 + r
                    row[1] = kind
                    row[PT_FIXED:PT_FIXED + d] = pos
                    seg_pts += 1
            if status != OK:
                break
            if mode == COMBINED:
                if not ok:
                    killed_by_rejection = True
                    accepted = True
                    break
                weight *= math.exp(-lphi * tau)
            elif not ok:
                continue
            accepted = True
            weight *= seg_kill
            n_kill += seg_nkill
        if status != OK or killed_by_rejection:
            break
        if record:
            if n_seg >= seg_buf.shape[0]:
                status = BUFFER_FULL
                break
            row = seg_buf[n_seg]
            row[0] = s0
            row[1] = tau
            row[2] = j
            row[3] = side
            row[4] = n_pts
            row[5] = seg_pts
            row[SEG_FIXED:SEG_FIXED + d] = y
            row[SEG_FIXED + d:SEG_FIXED + 2 * d] = theta
            row[SEG_FIXED + 2 * d:SEG_FIXED + 3 * d] = end
            n_pts += seg_pts
        n_seg += 1
        s0 = s0 + tau if tau < t_rem else t
        for k in range(d):
            y[k] = end[k]
        if j >= 0 and (end[j] == lo[j] or end[j] == hi[j]):
            absorbed = True
            break

    out[O_STATUS] = status
    out[O_WORK] = work
    out[O_NSEG] = n_seg
    out[O_NKILL] = n_kill
    out[O_NPTS] = n_pts
    out[O_THAT] = s0
    out[O_ABSORBED] = 1.0 if absorbed else 0.0
    out[O_END:O_END + d] = y
    if status != OK:
        out[O_VALUE] = math.nan
        return
    if killed_by_rejection:
        out[O_VALUE] = 0.0
        return
    x = einv_fn(y, einv_p)
    if absorbed:
        kappa = bdry_fn(x, bdry_p)
    else:
        kappa = init_fn(x, init_p)
    if mode == COMBINED:
        weight *= math.exp(pot_fn(y, t - s0, pot_p) - a_start)
    else:
        weight *= math.exp(-lc * s0)
    out[O_VALUE] = kappa * weight


@njit
def lea_batch(rng, n, y0, t, lo, hi, theta_max, mode, use_global,
              pot_fn, pot_p, phi_fn, phi_p, bnd_fn, bnd_p,
              einv_fn, einv_p, kill_fn, kill_p, lc, mc,
              init_fn, init_p, bdry_fn, bdry_p, results):
    """Run ``n`` independent paths; row ``i`` of ``results`` gets path ``i``'s out vector.

    Stops early on the first non-zero status and returns the number of rows filled.
    """
    d = y0.shape[0]
    seg_buf = np.empty((0, SEG_FIXED + 3 * d))
    pt_buf = np.empty((0, PT_FIXED + d))
    for i in range(n):
        lea_path(rng, y0, t, lo, hi, theta_max, mode, use_global,
                 pot_fn, pot_p, phi_fn, phi_p, bnd_fn, bnd_p,
                 einv_fn, einv_p, kill_fn, kill_p, lc, mc,
                 init_fn, init_p, bdry_fn, bdry_p, seg_buf, pt_buf, results[i])
        if results[i, O_STATUS] != OK:
            return i + 1
    return n


_STATUS_ERRORS = {
    PHI_BOUND: (BoundViolationError, "phi left its box bounds"),
    A_BOUND: (BoundViolationError, "potential exceeded its upper bound M_A"),
    KILL_BOUND: (BoundViolationError, "killing rate left [L_c, M_c]"),
    ITER_CAP: (SamplerError, "segment retries exceeded the iteration cap"),
    NOT_INSIDE: (ContractError, "path position is not strictly inside the domain"),
    BUFFER_FULL: (SamplerError, "skeleton record buffer is full"),
    NO_GLOBAL_BOUNDS: (EaInapplicableError, "global bounds are not finite on this domain"),
}


def raise_for_status(status):
    status = int(status)
    if status == OK:
        return
    exc, msg = _STATUS_ERRORS.get(status, (SamplerError, f"unknown status {status}"))
    raise exc(msg)


# ---------------------------------------------------------------------------
# Configuration


def default_theta_max(sde, include_drift_cap=True):
    """Half the shortest finite domain edge, or ``sqrt(t)`` in free space,
    further capped at ``2 / sqrt(2 M_phi)`` when ``phi`` is bounded on the
    whole domain.  The last cap keeps the duration factor ``exp(-phi tau)``
    of one segment away from zero when the drift is strong."""
    dom = sde.domain
    edges = (dom.upper - dom.lower)[np.isfinite(dom.upper - dom.lower)]
    cap = 0.5 * float(edges.min()) if edges.size else math.sqrt(sde.t)
    if include_drift_cap and dom.bounded:
        _, mphi, _ = sde.oracle.box(dom.lower, dom.upper, 0.0, sde.t)
        if math.isfinite(mphi) and mphi > 0:
            cap = min(cap, 2.0 / math.sqrt(2.0 * mphi))
    return cap


@dataclass(frozen=True)
class LeaConfig:
    """Sampler switches: ``theta_max`` (``None`` for the default), global
    bounds instead of per-segment box bounds, and the estimator mode."""

    theta_max: float = None
    global_bounds: bool = False
    mode: str = "two_step"

    def mode_code(self):
        if self.mode not in ("two_step", "combined"):
            raise ContractError(f"unknown mode {self.mode!r}")
        return TWO_STEP if self.mode == "two_step" else COMBINED


def kernel_args(sde, problem, config=None, y0=None):
    """Positional arguments (after ``rng``/``n``) shared by the compiled kernels."""
    from .problem import phi_tilde_coef

    config = config or LeaConfig()
    mode = config.mode_code()
    theta_max = config.theta_max if config.theta_max is not None else default_theta_max(sde)
    if not theta_max > 0:
        raise ContractError("theta_max must be positive")
    phi_c = phi_tilde_coef(sde, problem) if mode == COMBINED else sde.phi
    lc, mc = sde.oracle.killing_lower, sde.oracle.killing_upper
    bdry = problem.boundary if problem.boundary is not None else problem.initial
    y = sde.y0 if y0 is None else np.asarray(y0, dtype=float)
    return (np.ascontiguousarray(y, dtype=float), float(sde.t), sde.domain.lower.copy(),
            sde.domain.upper.copy(), float(theta_max), mode,
            bool(config.global_bounds or sde.oracle.global_mode),
            sde.potential.fn, sde.potential.params, phi_c.fn, phi_c.params,
            sde.oracle.bounds.fn, sde.oracle.bounds.params,
            sde.eta_inv.fn, sde.eta_inv.params, problem.killing.fn, problem.killing.params,
            float(lc), float(mc), problem.initial.fn, problem.initial.params, bdry.fn, bdry.params)


# ---------------------------------------------------------------------------
# Python-level API


@dataclass
class SegmentProposal:
    """One proposed segment in transformed coordinates.

    ``exit_dim`` is ``-1`` when the horizon was reached first.  ``pieces``
    holds one :class:`~fkpde.brownian.ConditionedSegment` per coordinate so
    that interior points can be revealed lazily and consistently.
    """

    s0: float
    start: np.ndarray
    theta: np.ndarray
    duration: float
    end: np.ndarray
    exit_dim: int
    side: int
    t_remaining: float
    pieces: list = field(default_factory=list)

    @property
    def s1(self):
        return self.s0 + self.duration

    def point(self, s, rng):
        """Proposal position at absolute time ``s`` inside the segment."""
        r = s - self.s0
        return self.start + np.array([p.sample(r, rng) for p in self.pieces])

    def box(self):
        return self.start - self.theta, self.start + self.theta


def choose_theta(position, domain, t_remaining, theta_max):
    """Per-coordinate half-widths for the next segment (see module docs)."""
    y = np.atleast_1d(np.asarray(position, dtype=float))
    if not t_remaining > 0:
        raise ContractError("remaining time must be positive")
    theta = np.empty(y.size)
    lf = np.zeros(y.size, dtype=bool)
    uf = np.zeros(y.size, dtype=bool)
    st = choose_theta_kernel(y, domain.lower, domain.upper, float(t_remaining), float(theta_max), theta, lf, uf)
    if st != OK:
        raise ContractError(f"position {y} is not strictly inside the domain")
    return theta


def propose_segment(start, s0, t, theta, domain, rng):
    """Proposal segment from ``start`` at time ``s0`` with half-widths ``theta``."""
    g = as_generator(rng)
    y = np.atleast_1d(np.asarray(start, dtype=float)).copy()
    theta = np.asarray(theta, dtype=float)
    t_rem = t - s0
    lo, hi = domain.lower, domain.upper
    lf = (y - lo) == theta
    uf = (hi - y) == theta
    w_end = np.empty(y.size)
    end = np.empty(y.size)
    tau, j, side = propose_kernel(g, y, theta, float(t_rem), lo, hi, lf, uf, w_end, end)
    pieces = [ConditionedSegment(float(theta[k]), float(tau), float(w_end[k]),
                                 int(side) if k == j else 0) for k in range(y.size)]
    return SegmentProposal(float(s0), y, theta.copy(), float(tau), end, int(j), int(side), float(t_rem), pieces)


def accept_segment(proposal, sde, bounds=None, use_phi_tilde=False, problem=None, rng=None):
    """Exact accept/reject of a proposal under the transformed diffusion.

    ``bounds`` is ``(L_phi, M_phi, M_A)`` valid on the proposal's box (taken
    from the oracle when omitted).  With ``use_phi_tilde`` the killing rate
    of ``problem`` is added to ``phi`` in the thinning step.
    """
    g = as_generator(rng)
    if bounds is None:
        lo, hi = proposal.box()
        bounds = sde.oracle.box(lo, hi, 0.0, sde.t - proposal.s0)
    lphi, mphi, ma = (float(b) for b in bounds)
    tau_end = sde.t - proposal.s1
    a_end = sde.potential.fn(proposal.end, tau_end, sde.potential.params)
    if a_end > ma + 1e-10 * (1 + abs(ma)):
        raise BoundViolationError(f"A(end) = {a_end} exceeds M_A = {ma}")
    if use_phi_tilde:
        if problem is None:
            raise ContractError("use_phi_tilde needs the problem")
        from .problem import phi_tilde_coef

        ph_c = phi_tilde_coef(sde, problem)
        lc, mc = problem.killing_bounds
        lphi, mphi = lphi + lc, mphi + mc
    else:
        ph_c = sde.phi
    log_acc = a_end - ma - lphi * proposal.duration + min(0.0, lphi) * proposal.t_remaining
    if not g.random() < math.exp(min(0.0, log_acc)):
        return False
    rate = mphi - lphi
    if rate <= 0:
        return True
    r = proposal.s0 + g.exponential(1.0 / rate)
    tol = 1e-10 * (1 + abs(lphi) + abs(mphi))
    while r < proposal.s1:
        v = proposal.point(r, g)
        ph = ph_c.fn(v, sde.t - r, ph_c.params)
        if ph < lphi - tol or ph > mphi + tol:
            raise BoundViolationError(f"phi = {ph} outside [{lphi}, {mphi}]")
        if g.random() * rate > mphi - ph:
            return False
        r += g.exponential(1.0 / rate)
    return True


@dataclass
class Segment:
    s0: float
    duration: float
    start: np.ndarray
    theta: np.ndarray
    end: np.ndarray
    exit_dim: int
    side: int
    point_times: np.ndarray
    point_values: np.ndarray

    @property
    def s1(self):
        return self.s0 + self.duration


@dataclass
class Skeleton:
    """Exact finite description of one accepted path.

    ``t_hat`` is the absorption time or the horizon; ``face`` is ``(dim,
    side)`` of the absorbing face, or ``None``.
    """

    segments: List[Segment]
    t_hat: float
    end: np.ndarray
    absorbed: bool
    face: tuple = None
    work: float = 0.0

    def times(self):
        return np.array([s.s0 for s in self.segments] + [self.t_hat])


def simulate_skeleton(sde, problem, rng, config=None, x=None, capacity=256):
    """Build one exact skeleton (two-step mode, no killing points).

    ``x`` overrides the start point (original coordinates).
    """
    from dataclasses import replace

    g = as_generator(rng)
    y0 = None if x is None else sde.to_v(x)
    config = replace(config or LeaConfig(), mode="two_step")
    args = list(kernel_args(sde, problem, config, y0))
    args[17] = 0.0  # no killing points while recording
    args[18] = 0.0
    d = sde.dim
    while True:
        state = g.bit_generator.state
        seg_buf = np.empty((capacity, SEG_FIXED + 3 * d))
        pt_buf = np.empty((4 * capacity, PT_FIXED + d))
        out = np.zeros(O_END + d)
        lea_path(g, *args, seg_buf, pt_buf, out)
        if out[O_STATUS] == BUFFER_FULL:
            g.bit_generator.state = state
            capacity *= 2
            continue
        raise_for_status(out[O_STATUS])
        break
    segs = []
    for i in range(int(out[O_NSEG])):
        row = seg_buf[i]
        p0, np_ = int(row[4]), int(row[5])
        pts = pt_buf[p0:p0 + np_]
        segs.append(Segment(row[0], row[1], row[SEG_FIXED:SEG_FIXED + d].copy(),
                            row[SEG_FIXED + d:SEG_FIXED + 2 * d].copy(),
                            row[SEG_FIXED + 2 * d:SEG_FIXED + 3 * d].copy(), int(row[2]), int(row[3]),
                            pts[:, 0].copy(), pts[:, PT_FIXED:].copy()))
    absorbed = bool(out[O_ABSORBED])
    face = (segs[-1].exit_dim, segs[-1].side) if absorbed else None
    return Skeleton(segs, float(out[O_THAT]), out[O_END:].copy(), absorbed, face, float(out[O_WORK]))
