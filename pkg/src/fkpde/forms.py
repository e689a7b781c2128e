"""Registry of built-in coefficient forms.

Every form is a compiled function plus a flat ``params`` array.  Signatures:

* vector fields ``fn(x, tau, p, out)`` writing ``(d,)`` into ``out`` (drift,
  transformed drift);
* matrices ``fn(x, tau, p, out)`` writing ``(d, d)`` into ``out`` (diffusion
  ``a``, volatility);
* scalars in space-time ``fn(x, tau, p) -> float`` (killing, potential, phi);
* scalars in space ``fn(x, p) -> float`` (initial and boundary data);
* box bounds ``fn(lo, hi, tau_lo, tau_hi, p) -> (L_phi, M_phi, M_A)``.

``tau`` is always the PDE time, i.e. ``t - s`` for SDE time ``s``.
"""
import math
from typing import Callable, NamedTuple

import numpy as np

from ._jit import njit
from .errors import ContractError, PotentialError


class Coef(NamedTuple):
    fn: Callable
    params: np.ndarray


def coef(fn, params=()):
    return Coef(fn, np.ascontiguousarray(np.atleast_1d(np.asarray(params, dtype=float))))


# ---------------------------------------------------------------- vector fields


@njit(cache=True)
def drift_constant(x, tau, p, out):
    for i in range(x.shape[0]):
        out[i] = p[i]


@njit(cache=True)
def drift_linear(x, tau, p, out):
    # p = [b0 (d), B row-major (d*d)]
    d = x.shape[0]
    for i in range(d):
        v = p[i]
        for j in range(d):
            v += p[d + i * d + j] * x[j]
        out[i] = v


@njit(cache=True)
def drift_grad_exp_bilinear(x, tau, p, out):
    # gradient of k(x) = exp(kappa * x0 * x1)
    kappa = p[0]
    k = math.exp(kappa * x[0] * x[1])
    out[0] = kappa * x[1] * k
    out[1] = kappa * x[0] * k


# --------------------------------------------------------------------- matrices


@njit(cache=True)
def diffusion_constant_diag(x, tau, p, out):
    d = x.shape[0]
    for i in range(d):
        for j in range(d):
            out[i, j] = p[i] if i == j else 0.0


@njit(cache=True)
def sigma_constant_diag(x, tau, p, out):
    d = x.shape[0]
    for i in range(d):
        for j in range(d):
            out[i, j] = p[i] if i == j else 0.0


# ---------------------------------------------------------------------- scalars


@njit(cache=True)
def scalar_constant(x, tau, p):
    return p[0]


@njit(cache=True)
def scalar_linear(x, tau, p):
    v = p[0]
    for i in range(x.shape[0]):
        v += p[1 + i] * x[i]
    return v


@njit(cache=True)
def data_constant(x, p):
    return p[0]


@njit(cache=True)
def data_linear(x, p):
    v = p[0]
    for i in range(x.shape[0]):
        v += p[1 + i] * x[i]
    return v


@njit(cache=True)
def data_product(x, p):
    v = p[0]
    for i in range(x.shape[0]):
        v *= x[i]
    return v


# --------------------------------------------------------- Lamperti: diag sigma


@njit(cache=True)
def eta_scale(x, p):
    return x / p[: x.shape[0]]


@njit(cache=True)
def eta_inv_scale(v, p):
    return v * p[: v.shape[0]]


# ----------------------------------------------------------- EA: constant alpha
# transformed drift alpha = p[:d]; potential A(v) = alpha . v; phi = |alpha|^2 / 2


@njit(cache=True)
def potential_linear(v, tau, p):
    s = 0.0
    for i in range(v.shape[0]):
        s += p[i] * v[i]
    return s


@njit(cache=True)
def phi_constant_alpha(v, tau, p):
    s = 0.0
    for i in range(v.shape[0]):
        s += p[i] * p[i]
    return 0.5 * s


@njit(cache=True)
def bounds_constant_alpha(lo, hi, tau_lo, tau_hi, p):
    ph = 0.0
    ma = 0.0
    for i in range(lo.shape[0]):
        ph += p[i] * p[i]
        ma += max(p[i] * lo[i], p[i] * hi[i])
    return 0.5 * ph, 0.5 * ph, ma


# ------------------------------------------------ EA: exp-bilinear, isotropic s
# p = [kappa, s]; x = s v; A(v) = k(x) / s^2; alpha = grad k(x) / s
# phi = (|grad k(x)|^2 / s^2 + lap k(x)) / 2 = kappa^2 k (k / s^2 + 1) |x|^2 / 2


@njit(cache=True)
def alpha_exp_bilinear(v, tau, p, out):
    kappa, s = p[0], p[1]
    x0, x1 = s * v[0], s * v[1]
    k = math.exp(kappa * x0 * x1)
    out[0] = kappa * x1 * k / s
    out[1] = kappa * x0 * k / s


@njit(cache=True)
def potential_exp_bilinear(v, tau, p):
    kappa, s = p[0], p[1]
    return math.exp(kappa * s * s * v[0] * v[1]) / (s * s)


@njit(cache=True)
def phi_exp_bilinear(v, tau, p):
    kappa, s = p[0], p[1]
    x0, x1 = s * v[0], s * v[1]
    k = math.exp(kappa * x0 * x1)
    return 0.5 * kappa * kappa * k * (k / (s * s) + 1.0) * (x0 * x0 + x1 * x1)


@njit(cache=True)
def _sq_range(a, b):
    if a <= 0.0 <= b:
        lo = 0.0
    else:
        lo = min(a * a, b * b)
    return lo, max(a * a, b * b)


@njit(cache=True)
def bounds_exp_bilinear(lo, hi, tau_lo, tau_hi, p):
    kappa, s = p[0], p[1]
    a0, b0 = s * lo[0], s * hi[0]
    a1, b1 = s * lo[1], s * hi[1]
    c1, c2, c3, c4 = a0 * a1, a0 * b1, b0 * a1, b0 * b1
    pmin = min(min(c1, c2), min(c3, c4))
    pmax = max(max(c1, c2), max(c3, c4))
    e1 = kappa * pmin
    e2 = kappa * pmax
    kmin = math.exp(min(e1, e2))
    kmax = math.exp(max(e1, e2))
    r0lo, r0hi = _sq_range(a0, b0)
    r1lo, r1hi = _sq_range(a1, b1)
    s2 = s * s
    c = 0.5 * kappa * kappa
    lphi = c * kmin * (kmin / s2 + 1.0) * (r0lo + r1lo)
    mphi = c * kmax * (kmax / s2 + 1.0) * (r0hi + r1hi)
    return lphi, mphi, kmax / s2


# ------------------------------------------------------- EA: linear drift (OU)
# alpha(v) = c + S v with S symmetric; p = [c (d), S row-major (d*d)]
# A(v) = c . v + v' S v / 2; phi = (|alpha|^2 + tr S) / 2


@njit(cache=True)
def alpha_affine(v, tau, p, out):
    drift_linear(v, tau, p, out)


@njit(cache=True)
def potential_quadratic(v, tau, p):
    d = v.shape[0]
    s = 0.0
    for i in range(d):
        s += p[i] * v[i]
        for j in range(d):
            s += 0.5 * p[d + i * d + j] * v[i] * v[j]
    return s


@njit(cache=True)
def phi_affine(v, tau, p):
    d = v.shape[0]
    al = np.empty(d)
    alpha_affine(v, tau, p, al)
    s = 0.0
    tr = 0.0
    for i in range(d):
        s += al[i] * al[i]
        tr += p[d + i * d + i]
    return 0.5 * (s + tr)


@njit(cache=True)
def _imul(a, b, c, d):
    p1, p2, p3, p4 = a * c, a * d, b * c, b * d
    return min(min(p1, p2), min(p3, p4)), max(max(p1, p2), max(p3, p4))


@njit(cache=True)
def bounds_affine(lo, hi, tau_lo, tau_hi, p):
    d = lo.shape[0]
    sq_lo = 0.0
    sq_hi = 0.0
    tr = 0.0
    a_hi = 0.0
    for i in range(d):
        tr += p[d + i * d + i]
        al_lo = p[i]
        al_hi = p[i]
        a_hi += max(p[i] * lo[i], p[i] * hi[i])
        for j in range(d):
            m1, m2 = _imul(p[d + i * d + j], p[d + i * d + j], lo[j], hi[j])
            al_lo += m1
            al_hi += m2
            q1, q2 = _imul(lo[i], hi[i], lo[j], hi[j])
            w1, w2 = _imul(0.5 * p[d + i * d + j], 0.5 * p[d + i * d + j], q1, q2)
            a_hi += w2
        l2, h2 = _sq_range(al_lo, al_hi)
        sq_lo += l2
        sq_hi += h2
    return 0.5 * (sq_lo + tr), 0.5 * (sq_hi + tr), a_hi


# ------------------------------------------------------------------ registries

VECTOR_FORMS = {
    "constant": drift_constant,
    "linear": drift_linear,
    "grad_exp_bilinear": drift_grad_exp_bilinear,
}
SCALAR_FORMS = {"constant": scalar_constant, "linear": scalar_linear}
DATA_FORMS = {"constant": data_constant, "linear": data_linear, "product": data_product}
DIFFUSION_FORMS = {"constant_diag": diffusion_constant_diag}


def lookup(table, name, kind):
    try:
        return table[name]
    except KeyError:
        raise ContractError(f"unknown {kind} form {name!r}; choose from {sorted(table)}") from None


def ea_parts_for(drift: Coef, sigma_diag):
    """Closed-form potential, phi and box bounds for registry drifts.

    Returns ``(alpha, potential, phi, bounds)`` as :class:`Coef` objects in
    transformed coordinates, or ``None`` when the drift is not a registry
    form with a known potential.
    """
    from .errors import UnsupportedTransformError

    s = np.asarray(sigma_diag, dtype=float)
    d = s.size
    fn, p = drift.fn, drift.params
    if fn is drift_constant:
        c = p[:d] / s
        return (coef(drift_constant, c), coef(potential_linear, c), coef(phi_constant_alpha, c),
                coef(bounds_constant_alpha, c))
    if fn is drift_linear:
        b0 = p[:d]
        B = p[d:].reshape(d, d)
        S = B * s[None, :] / s[:, None]
        if not np.allclose(S, S.T, rtol=1e-12, atol=1e-14):
            raise PotentialError("linear drift has no potential after scaling (asymmetric matrix)")
        S = 0.5 * (S + S.T)
        q = np.concatenate([b0 / s, S.ravel()])
        return coef(alpha_affine, q), coef(potential_quadratic, q), coef(phi_affine, q), coef(bounds_affine, q)
    if fn is drift_grad_exp_bilinear:
        if d != 2 or not np.allclose(s, s[0]):
            raise UnsupportedTransformError("exp-bilinear potential needs d = 2 and isotropic sigma")
        q = np.array([p[0], s[0]])
        return (coef(alpha_exp_bilinear, q), coef(potential_exp_bilinear, q), coef(phi_exp_bilinear, q),
                coef(bounds_exp_bilinear, q))
    return None
