"""PDE problems, complementary SDEs and their unit-volatility transforms.

A :class:`PdeProblem` describes

    u_t = 1/2 a_ij(x, t) u_{x_i x_j} + b_i(x, t) u_{x_i} - c(x, t) u,
    u(x, 0) = f(x),   u = g on the boundary of a hyperrectangle (optional).

Its Feynman-Kac representation uses the diffusion ``dX = b ds + sigma dW``
with ``sigma sigma' = a``, run backwards in PDE time (``tau = t - s``).  The
exact algorithm needs that diffusion in unit-volatility form, which is what
:func:`lamperti_transform` produces together with the potential ``A`` and the
phase function ``phi`` used in path acceptance.
"""
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from . import forms
from ._jit import jit_user, njit
from .errors import ContractError, DomainError, PotentialError, UnsupportedTransformError
from .forms import Coef, coef

FD_STEP = 1e-5
FD_TOL = 1e-6


def as_coef(value, params=()) -> Coef:
    """Normalise ``fn`` / ``(fn, params)`` / :class:`Coef` into a Coef with a compiled fn."""
    if isinstance(value, Coef):
        return Coef(jit_user(value.fn), value.params)
    if isinstance(value, tuple) and len(value) == 2 and callable(value[0]):
        return coef(jit_user(value[0]), value[1])
    if callable(value):
        return coef(jit_user(value), params)
    raise ContractError(f"cannot interpret {value!r} as a coefficient")


@dataclass(frozen=True)
class Hyperrectangle:
    """Axis-aligned box ``[lower, upper]``; infinite corners mean no face."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lo.shape != hi.shape:
            raise ContractError("corner shapes differ")
        if not np.all(lo < hi):
            raise ContractError(f"need lower < upper componentwise, got {lo} and {hi}")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unbounded(cls, dim):
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))

    @property
    def dim(self):
        return self.lower.size

    @property
    def bounded(self):
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    @property
    def has_faces(self):
        return bool(np.any(np.isfinite(self.lower)) or np.any(np.isfinite(self.upper)))

    def contains(self, x, strict=True):
        x = np.asarray(x, dtype=float)
        if strict:
            return bool(np.all(self.lower < x) and np.all(x < self.upper))
        return bool(np.all(self.lower <= x) and np.all(x <= self.upper))

    def clip(self, x):
        return np.clip(x, self.lower, self.upper)

    def sample_interior(self, n, rng, center=None, spread=1.0):
        """Uniform points inside the box (or a box of half-width ``spread``
        around ``center`` when a side is infinite)."""
        c = np.zeros(self.dim) if center is None else np.asarray(center, dtype=float)
        lo = np.where(np.isfinite(self.lower), self.lower, c - spread)
        hi = np.where(np.isfinite(self.upper), self.upper, c + spread)
        lo, hi = np.maximum(lo, self.lower), np.minimum(hi, self.upper)
        u = rng.uniform(0.02, 0.98, size=(n, self.dim))
        return lo + u * (hi - lo)


@dataclass(frozen=True)
class PdeProblem:
    """Coefficients, data and domain of a parabolic problem.

    Every coefficient is a :class:`~fkpde.forms.Coef` (compiled function and
    parameter array).  ``killing_bounds`` are global bounds ``L_c <= c <= M_c``
    that the samplers rely on; a violation found at runtime is an error.
    ``volatility`` may be given explicitly; otherwise it is derived from a
    constant diagonal ``diffusion``.
    """

    dim: int
    drift: Coef
    diffusion: Coef
    initial: Coef
    killing: Coef = None
    boundary: Optional[Coef] = None
    domain: Optional[Hyperrectangle] = None
    killing_bounds: tuple = (0.0, 0.0)
    volatility: Optional[Coef] = None
    time_homogeneous: bool = True
    name: str = ""

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ContractError("dimension must be positive")
        object.__setattr__(self, "drift", as_coef(self.drift))
        object.__setattr__(self, "diffusion", as_coef(self.diffusion))
        object.__setattr__(self, "initial", as_coef(self.initial))
        k = self.killing if self.killing is not None else coef(forms.scalar_constant, [0.0])
        object.__setattr__(self, "killing", as_coef(k))
        if self.volatility is not None:
            object.__setattr__(self, "volatility", as_coef(self.volatility))
        lc, mc = (float(v) for v in self.killing_bounds)
        if not (0.0 <= lc <= mc < np.inf):
            raise ContractError(f"killing bounds need 0 <= L_c <= M_c < inf, got {(lc, mc)}")
        object.__setattr__(self, "killing_bounds", (lc, mc))
        if self.domain is not None:
            if self.domain.dim != self.dim:
                raise ContractError("domain dimension mismatch")
            if self.boundary is None:
                raise ContractError("a domain needs boundary data")
            object.__setattr__(self, "boundary", as_coef(self.boundary))

    @property
    def dirichlet(self):
        return self.domain is not None and self.domain.has_faces

    def region(self):
        return self.domain if self.domain is not None else Hyperrectangle.unbounded(self.dim)

    def eval_drift(self, x, tau):
        out = np.empty(self.dim)
        self.drift.fn(np.asarray(x, dtype=float), float(tau), self.drift.params, out)
        return out

    def eval_diffusion(self, x, tau):
        out = np.empty((self.dim, self.dim))
        self.diffusion.fn(np.asarray(x, dtype=float), float(tau), self.diffusion.params, out)
        return out

    def eval_killing(self, x, tau):
        return self.killing.fn(np.asarray(x, dtype=float), float(tau), self.killing.params)

    def eval_initial(self, x):
        return self.initial.fn(np.asarray(x, dtype=float), self.initial.params)

    def eval_boundary(self, x):
        return self.boundary.fn(np.asarray(x, dtype=float), self.boundary.params)


def _constant_diag_sigma(problem):
    if problem.diffusion.fn is forms.diffusion_constant_diag:
        a = problem.diffusion.params[: problem.dim]
        if np.any(a <= 0):
            raise DomainError("diffusion coefficients must be positive")
        return np.sqrt(a)
    vol = problem.volatility
    if vol is not None and vol.fn is forms.sigma_constant_diag:
        return vol.params[: problem.dim].copy()
    return None


@dataclass(frozen=True)
class ComplementarySde:
    """``dX = b(X, t - s) ds + sigma(X, t - s) dW`` started at ``x`` over ``[0, t]``."""

    problem: PdeProblem
    drift: Coef
    volatility: Coef
    x: np.ndarray
    t: float
    sigma_diag: Optional[np.ndarray] = None

    def eval_sigma(self, x, tau):
        d = self.problem.dim
        out = np.empty((d, d))
        self.volatility.fn(np.asarray(x, dtype=float), float(tau), self.volatility.params, out)
        return out


def complementary_sde(problem: PdeProblem, x, t, check_points=20, rng=None):
    """Build the complementary SDE and check ``sigma sigma' = a`` at sample points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != problem.dim:
        raise ContractError(f"point has dimension {x.size}, problem has {problem.dim}")
    if not t > 0:
        raise ContractError("horizon t must be positive")
    sd = _constant_diag_sigma(problem)
    if sd is not None:
        vol = coef(forms.sigma_constant_diag, sd)
    elif problem.volatility is not None:
        vol = problem.volatility
    else:
        raise UnsupportedTransformError("no volatility given and the diffusion is not constant diagonal")
    rng = np.random.default_rng(0) if rng is None else rng
    pts = problem.region().sample_interior(check_points, rng, center=x, spread=1.0)
    for p in pts:
        tau = rng.uniform(0, t)
        s = np.empty((problem.dim, problem.dim))
        vol.fn(p, tau, vol.params, s)
        a = problem.eval_diffusion(p, tau)
        if not np.allclose(s @ s.T, a, rtol=1e-12, atol=1e-14 * max(1.0, np.abs(a).max())):
            raise DomainError(f"sigma sigma' does not reproduce a at {p}")
    return ComplementarySde(problem, problem.drift, vol, x, float(t), sd)


# ------------------------------------------------------------ composed kernels


@lru_cache(maxsize=None)
def _scaled_drift(drift_fn):
    # alpha(v) = b(sigma v) / sigma; p = [sigma (d), drift params]
    @njit
    def alpha(v, tau, p, out):
        d = v.shape[0]
        s = p[:d]
        drift_fn(v * s, tau, p[d:], out)
        for i in range(d):
            out[i] /= s[i]

    return alpha


@lru_cache(maxsize=None)
def _lamperti_1d_drift(drift_fn, sigma_fn, eta_inv_fn):
    # alpha(v) = b(x)/sigma(x) - sigma'(x)/2 at x = eta^{-1}(v)
    # p = [n_drift, n_sigma, drift params, sigma params, eta params]
    @njit
    def alpha(v, tau, p, out):
        nb = int(p[0])
        ns = int(p[1])
        pb = p[2 : 2 + nb]
        ps = p[2 + nb : 2 + nb + ns]
        pe = p[2 + nb + ns :]
        x = eta_inv_fn(v, pe)
        m = np.empty((1, 1))
        sigma_fn(x, tau, ps, m)
        s = m[0, 0]
        h = 1e-6 * max(1.0, abs(x[0]))
        xp = x.copy()
        xp[0] += h
        sigma_fn(xp, tau, ps, m)
        ds = m[0, 0]
        xp[0] = x[0] - h
        sigma_fn(xp, tau, ps, m)
        ds = (ds - m[0, 0]) / (2.0 * h)
        drift_fn(x, tau, pb, out)
        out[0] = out[0] / s - 0.5 * ds

    return alpha


@lru_cache(maxsize=None)
def _phi_plus_killing(phi_fn, kill_fn, eta_inv_fn):
    # p = [n_phi, n_kill, phi params, killing params, eta params]
    @njit
    def phi_tilde(v, tau, p):
        n1 = int(p[0])
        n2 = int(p[1])
        x = eta_inv_fn(v, p[2 + n1 + n2 :])
        return phi_fn(v, tau, p[2 : 2 + n1]) + kill_fn(x, tau, p[2 + n1 : 2 + n1 + n2])

    return phi_tilde


def _pack(*arrays):
    head = [float(len(a)) for a in arrays[:-1]]
    return np.concatenate([np.array(head)] + [np.asarray(a, dtype=float) for a in arrays])


@dataclass(frozen=True)
class BoundOracle:
    """Box bounds ``(L_phi, M_phi, M_A)`` plus global killing bounds.

    ``fn(lo, hi, tau_lo, tau_hi, params)`` must return valid bounds for every
    ``v`` in the box ``[lo, hi]`` and every PDE time in ``[tau_lo, tau_hi]``.
    With ``global_mode`` the oracle is queried once on the whole transformed
    domain and the result reused for every segment.
    """

    bounds: Coef
    killing_lower: float = 0.0
    killing_upper: float = 0.0
    global_mode: bool = False

    def box(self, lo, hi, tau_lo=0.0, tau_hi=0.0):
        return self.bounds.fn(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float), float(tau_lo),
                              float(tau_hi), self.bounds.params)


@dataclass(frozen=True)
class UnitVolatilitySde:
    """Unit-volatility diffusion ``dY = alpha(Y, t - s) ds + dW`` with EA parts."""

    alpha: Coef
    potential: Coef
    phi: Coef
    eta: Coef
    eta_inv: Coef
    oracle: BoundOracle
    domain: Hyperrectangle
    y0: np.ndarray
    t: float
    source: ComplementarySde = field(repr=False, default=None)

    @property
    def dim(self):
        return self.y0.size

    def to_x(self, v):
        return self.eta_inv.fn(np.atleast_1d(np.asarray(v, dtype=float)), self.eta_inv.params)

    def to_v(self, x):
        return self.eta.fn(np.atleast_1d(np.asarray(x, dtype=float)), self.eta.params)

    def eval_alpha(self, v, s=0.0):
        out = np.empty(self.dim)
        self.alpha.fn(np.atleast_1d(np.asarray(v, dtype=float)), self.t - float(s), self.alpha.params, out)
        return out


def _check_round_trip(eta, eta_inv, pts):
    for x in pts:
        back = eta_inv.fn(eta.fn(x, eta.params), eta_inv.params)
        if not np.allclose(back, x, rtol=1e-12, atol=1e-12):
            raise DomainError(f"eta_inv(eta(x)) != x at {x}")


def lamperti_transform(sde: ComplementarySde, potential=None, phi=None, bounds=None, eta=None,
                       eta_inv=None, global_bounds=False, verify=True, rng=None) -> UnitVolatilitySde:
    """Transform to unit volatility and attach the potential, phase and bounds.

    Constant diagonal volatility (any dimension) is rescaled axis by axis.
    In one dimension a state-dependent volatility is accepted when ``eta``
    and ``eta_inv`` are supplied.  For registry drifts the potential, ``phi``
    and box bounds are derived in closed form; otherwise they must be passed
    in (as functions of transformed coordinates ``v`` and PDE time ``tau``).

    Raises
    ------
    UnsupportedTransformError
        Multivariate state-dependent volatility, or a missing 1D ``eta``.
    PotentialError
        No potential is available, or the given one fails the gradient check.
    """
    problem = sde.problem
    d = problem.dim
    rng = np.random.default_rng(12345) if rng is None else rng
    region = problem.region()
    derived = None
    if sde.sigma_diag is not None:
        s = sde.sigma_diag
        eta_c, eta_inv_c = coef(forms.eta_scale, s), coef(forms.eta_inv_scale, s)
        derived = forms.ea_parts_for(problem.drift, s)
        if derived is not None:
            alpha_c = derived[0]
        else:
            alpha_c = coef(_scaled_drift(problem.drift.fn), np.concatenate([s, problem.drift.params]))
        lo_v, hi_v = region.lower / s, region.upper / s
    elif d == 1:
        if eta is None or eta_inv is None:
            raise UnsupportedTransformError("state-dependent 1D volatility needs eta and eta_inv")
        eta_c, eta_inv_c = as_coef(eta), as_coef(eta_inv)
        pts = region.sample_interior(50, rng, center=sde.x, spread=1.0)
        for p in pts:
            if sde.eval_sigma(p, sde.t / 2)[0, 0] <= 0:
                raise DomainError(f"volatility is not positive at {p}")
        _check_round_trip(eta_c, eta_inv_c, pts)
        vol = sde.volatility
        alpha_c = coef(_lamperti_1d_drift(problem.drift.fn, vol.fn, eta_inv_c.fn),
                       _pack(problem.drift.params, vol.params, eta_inv_c.params))
        lo_v = eta_c.fn(region.lower.copy(), eta_c.params) if np.isfinite(region.lower[0]) else region.lower
        hi_v = eta_c.fn(region.upper.copy(), eta_c.params) if np.isfinite(region.upper[0]) else region.upper
    else:
        raise UnsupportedTransformError(
            "multivariate transform needs constant diagonal volatility")

    if potential is not None:
        pot_c = as_coef(potential)
    elif derived is not None:
        pot_c = derived[1]
    else:
        raise PotentialError("no potential known for this drift; pass potential=")
    if phi is not None:
        phi_c = as_coef(phi)
    elif derived is not None and potential is None:
        phi_c = derived[2]
    else:
        raise PotentialError("phi must be supplied together with a custom potential")
    if bounds is not None:
        bnd_c = as_coef(bounds)
    elif derived is not None and potential is None:
        bnd_c = derived[3]
    else:
        raise PotentialError("box bounds must be supplied together with a custom potential")

    lc, mc = problem.killing_bounds
    oracle = BoundOracle(bnd_c, lc, mc, bool(global_bounds))
    dom = Hyperrectangle(np.minimum(lo_v, hi_v), np.maximum(lo_v, hi_v))
    y0 = eta_c.fn(sde.x.copy(), eta_c.params)
    if problem.domain is not None and not problem.domain.contains(sde.x, strict=True):
        raise ContractError("start point must lie strictly inside the domain")
    out = UnitVolatilitySde(alpha_c, pot_c, phi_c, eta_c, eta_inv_c, oracle, dom, np.asarray(y0), sde.t, sde)
    if verify:
        err = verify_potential(out, rng=rng)
        if err >= FD_TOL:
            raise PotentialError(f"grad A differs from alpha (max relative error {err:.2e})")
        if sde.sigma_diag is not None:
            _check_round_trip(eta_c, eta_inv_c, region.sample_interior(20, rng, center=sde.x))
    return out


def verify_potential(sde: UnitVolatilitySde, n=100, rng=None, step=FD_STEP):
    """Largest ``|grad A - alpha| / (1 + |alpha|)`` over random interior points."""
    rng = np.random.default_rng(0) if rng is None else rng
    spread = max(1.0, np.sqrt(sde.t))
    pts = sde.domain.sample_interior(n, rng, center=sde.y0, spread=spread)
    worst = 0.0
    for v in pts:
        tau = rng.uniform(0, sde.t)
        al = np.empty(sde.dim)
        sde.alpha.fn(v, tau, sde.alpha.params, al)
        grad = np.empty(sde.dim)
        for k in range(sde.dim):
            vp = v.copy()
            vm = v.copy()
            vp[k] += step
            vm[k] -= step
            grad[k] = (sde.potential.fn(vp, tau, sde.potential.params)
                       - sde.potential.fn(vm, tau, sde.potential.params)) / (2 * step)
        worst = max(worst, float(np.linalg.norm(grad - al) / (1.0 + np.linalg.norm(al))))
    return worst


def phi(sde: UnitVolatilitySde, v, s=0.0):
    """Phase function at transformed point ``v`` and SDE time ``s``."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    return float(sde.phi.fn(v, sde.t - float(s), sde.phi.params))


def phi_tilde(sde: UnitVolatilitySde, problem: PdeProblem, v, s=0.0):
    """``phi`` plus the killing rate at the matching original-coordinates point."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    tau = sde.t - float(s)
    return phi(sde, v, s) + float(problem.eval_killing(sde.to_x(v), tau))


def potential_A(sde: UnitVolatilitySde, v, s=0.0):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    return float(sde.potential.fn(v, sde.t - float(s), sde.potential.params))


def phi_tilde_coef(sde: UnitVolatilitySde, problem: PdeProblem) -> Coef:
    """Compiled ``phi + c o eta_inv`` for use inside the samplers."""
    fn = _phi_plus_killing(sde.phi.fn, problem.killing.fn, sde.eta_inv.fn)
    return coef(fn, _pack(sde.phi.params, problem.killing.params, sde.eta_inv.params))


def transform(problem: PdeProblem, x, t, **kwargs) -> UnitVolatilitySde:
    """Shorthand for ``lamperti_transform(complementary_sde(problem, x, t))``."""
    return lamperti_transform(complementary_sde(problem, x, t), **kwargs)
