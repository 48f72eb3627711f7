"""Independent reference computations shared by the test suite."""

import numpy as np
from scipy.integrate import simpson
from scipy.stats import norm


def piecewise_posterior_moments_1d(m, s, lo, hi, gamma, span=14.0, pts=400_001):
    """Dense-quadrature moments of the 1-D set-mass posterior.

    The density rescales a N(m, s^2) prior by gamma/pi inside [lo, hi] and
    (1-gamma)/(1-pi) outside.  Integration runs piecewise over the smooth
    segments so the jumps cost no accuracy.

    Returns (pi, mass, mean, variance).
    """
    pi = norm.cdf(hi, m, s) - norm.cdf(lo, m, s)
    w_in, w_out = gamma / pi, (1.0 - gamma) / (1.0 - pi)
    left, right = m - span * s, m + span * s
    segments = [(left, lo, w_out), (lo, hi, w_in), (hi, right, w_out)]
    mass = mean = second = 0.0
    for a, b, w in segments:
        if b <= a:
            continue
        xs = np.linspace(a, b, pts)
        f = w * norm.pdf(xs, m, s)
        mass += simpson(f, x=xs)
        mean += simpson(xs * f, x=xs)
        second += simpson(xs * xs * f, x=xs)
    return pi, mass, mean, second - mean**2


def mass_inside_piecewise_posterior_1d(m, s, lo, hi, gamma, pts=200_001):
    """Quadrature of the piecewise posterior over the box itself."""
    pi = norm.cdf(hi, m, s) - norm.cdf(lo, m, s)
    xs = np.linspace(lo, hi, pts)
    return simpson((gamma / pi) * norm.pdf(xs, m, s), x=xs)
