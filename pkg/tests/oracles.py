"""Independent reference laws for Brownian motion on (-theta, theta).

Written from the classical image and eigenfunction expansions without
reusing any library code, so agreement with the samplers is evidence.
"""
import numpy as np
from scipy import integrate, interpolate
from scipy.stats import norm

IMAGES = range(-12, 13)


def killed_density(w0, w, dt, theta):
    """Sub-density of W_dt = w on survival in (-theta, theta), W_0 = w0."""
    w = np.asarray(w, dtype=float)
    s = np.sqrt(dt)
    out = np.zeros_like(w)
    for k in IMAGES:
        out += norm.pdf(w - w0 - 4 * k * theta, scale=s) - norm.pdf(w + w0 - 2 * theta - 4 * k * theta, scale=s)
    return np.maximum(out, 0.0)


def exit_density(w, r, theta, side):
    """Density in r of first exit through ``side * theta`` from w."""
    w = np.asarray(w, dtype=float)
    # reflect so the exit is always through +theta
    w = w if side > 0 else -w
    out = np.zeros_like(w)
    for k in IMAGES:
        z1 = theta - w - 4 * k * theta
        z2 = 3 * theta + w - 4 * k * theta
        out += z1 / r * norm.pdf(z1, scale=np.sqrt(r)) - z2 / r * norm.pdf(z2, scale=np.sqrt(r))
    return np.maximum(0.5 * out, 0.0)


def exit_cdf_unit(x, terms=60):
    """P(T <= x) for the exit time of standard BM from (-1, 1)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = np.arange(terms)[:, None]
    surv = (4 / np.pi) * np.sum((-1.0) ** n / (2 * n + 1) * np.exp(-((2 * n + 1) ** 2) * np.pi**2 * x / 8), axis=0)
    small = x < 0.3
    if small.any():
        xs = x[small]
        m = np.arange(-30, 31)[:, None]
        # P(T > x) via the image sum for the killed mass
        mass = np.sum(norm.cdf(1 - 4 * m, scale=np.sqrt(xs)) - norm.cdf(-1 - 4 * m, scale=np.sqrt(xs))
                      - (norm.cdf(3 - 4 * m, scale=np.sqrt(xs)) - norm.cdf(1 - 4 * m, scale=np.sqrt(xs))), axis=0)
        surv[small] = mass
    return 1 - surv


def cdf_from_density(density, theta, grid=4001):
    """Numerical CDF on (-theta, theta) for an unnormalised density."""
    xs = np.linspace(-theta, theta, grid)
    f = density(xs)
    c = integrate.cumulative_trapezoid(f, xs, initial=0.0)
    c /= c[-1]
    return interpolate.interp1d(xs, c, bounds_error=False, fill_value=(0.0, 1.0))
